use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::comm::{CommLog, CommRecord, Direction, Phase};
use super::noise::{inject_noise, NoiseConfig, NoiseTarget};
use super::transport::Channel;
use super::wire::{decode_message, encode_message, RoundMessage};
use crate::aggregation::{prototype_nn_predict, FusionHead, GateParams};
use crate::data::PartyDataset;
use crate::error::{Error, Result};
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::{sgd_matrix, sgd_step_in_place, Activation, Matrix, MlpParams};
use crate::priors::{average_global_prior, compute_gamma, estimate_local_prior, mix_prior, PriorVector};
use crate::prototypes::{
    init_prototypes, local_loss, pseudo_labels, update_prototypes, BatchWeighting, CostMode, Kernel,
    LocalObjective, PrototypeSet,
};

/// Protocol hyperparameters shared by every party.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    /// Communication rounds T.
    pub rounds: usize,
    /// Full passes τ over the local pool (passive) or aligned set (active) per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Extractor learning rate η. Kept tiny: larger steps let the
    /// transport loss fold every representation into one cone.
    pub lr_local: f64,
    /// Adaptor, gate and classifier learning rate η′.
    pub lr_active: f64,
    pub phi: f64,
    pub rho: f64,
    pub kernel: Kernel,
    pub cost: CostMode,
    pub weighting: BatchWeighting,
    pub confidence_threshold: Option<f64>,
    /// Latent dimension d.
    pub latent_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    /// Empty means a single affine layer initialised to the identity.
    pub adaptor_hidden: Vec<usize>,
    pub renormalize_prototypes: bool,
    /// Set by the experiment runner from its own `noise` section.
    #[serde(skip)]
    pub noise: NoiseConfig,
    pub freeze_gate: bool,
    pub freeze_adaptors: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            local_epochs: 5,
            batch_size: 64,
            lr_local: 1e-5,
            lr_active: 0.1,
            phi: 0.1,
            rho: 0.1,
            kernel: Kernel::default(),
            cost: CostMode::Cosine,
            weighting: BatchWeighting::Uniform,
            confidence_threshold: None,
            latent_dim: 8,
            extractor_hidden: vec![32],
            classifier_hidden: vec![32, 32],
            adaptor_hidden: Vec::new(),
            renormalize_prototypes: true,
            noise: NoiseConfig::off(),
            freeze_gate: false,
            freeze_adaptors: false,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size must be positive".to_string());
        }
        if self.latent_dim == 0 {
            bad.push("latent_dim must be positive".to_string());
        }
        for (name, v) in [("lr_local", self.lr_local), ("lr_active", self.lr_active), ("phi", self.phi), ("rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(format!("{name} = {v} must be finite and nonnegative"));
            }
        }
        if !(self.kernel.scale > 0.0 && self.kernel.scale.is_finite()) {
            bad.push(format!("kernel scale {} must be positive", self.kernel.scale));
        }
        if let Some(t) = self.confidence_threshold {
            if !(0.0..=1.0).contains(&t) {
                bad.push(format!("confidence_threshold {t} outside [0, 1]"));
            }
        }
        if !(self.noise.kappa >= 0.0 && self.noise.kappa.is_finite()) {
            bad.push(format!("noise kappa {} must be finite and nonnegative", self.noise.kappa));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    fn objective(&self) -> LocalObjective {
        LocalObjective {
            kernel: self.kernel,
            cost: self.cost,
            weighting: self.weighting,
            phi: self.phi,
            confidence_threshold: self.confidence_threshold,
        }
    }
}

/// A party's prior bookkeeping across rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorState {
    /// Mixed priors of the last two rounds, oldest first.
    pub mixed_history: Vec<PriorVector>,
    /// Latest EM estimate (what is uploaded).
    pub local: PriorVector,
    pub gamma: f64,
}

impl PriorState {
    fn new(z: usize) -> Self {
        Self {
            mixed_history: Vec::new(),
            local: PriorVector::uniform(z),
            gamma: 0.0,
        }
    }

    /// Prior that builds the estimation plan: the mixed prior from two
    /// rounds back, or the latest one available, or uniform.
    fn lagged(&self, z: usize) -> PriorVector {
        match self.mixed_history.len() {
            0 => PriorVector::uniform(z),
            1 => self.mixed_history[0].clone(),
            n => self.mixed_history[n - 2].clone(),
        }
    }

    fn push_mixed(&mut self, p: PriorVector) {
        self.mixed_history.push(p);
        if self.mixed_history.len() > 2 {
            self.mixed_history.remove(0);
        }
    }
}

/// Everything the protocol evolves. Party `m` owns `extractors[m-1]` and
/// `priors[m-1]`; the active party owns the head, prototypes and global prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedState {
    pub round: usize,
    pub seed: u64,
    pub num_classes: usize,
    pub extractors: Vec<MlpParams>,
    pub head: FusionHead,
    pub prototypes: Vec<PrototypeSet>,
    pub priors: Vec<PriorState>,
    pub global_prior: PriorVector,
    pub comm_log: CommLog,
    /// Mean cross-entropy of the head on the aligned set after each round.
    pub loss_curve: Vec<f64>,
    /// Mean local objective per party after each round.
    pub local_loss_curve: Vec<Vec<f64>>,
    pub error_log: Vec<String>,
}

impl FedState {
    /// SHA-256 over the round counter, all parameters, prototypes, priors
    /// and the communication log.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |xs: &[f64]| {
            h.update((xs.len() as u64).to_le_bytes());
            for x in xs {
                h.update(x.to_bits().to_le_bytes());
            }
        };
        put(&[self.round as f64]);
        for e in &self.extractors {
            put(&e.to_flat());
        }
        for a in &self.head.adaptors {
            put(&a.to_flat());
        }
        put(self.head.gate.weight.data());
        put(&self.head.classifier.to_flat());
        for p in &self.prototypes {
            put(p.matrix().data());
        }
        for p in &self.priors {
            put(p.local.probs());
            for m in &p.mixed_history {
                put(m.probs());
            }
        }
        put(self.global_prior.probs());
        let log: Vec<f64> = self
            .comm_log
            .records()
            .iter()
            .flat_map(|r| [r.round as f64, r.party_id as f64, r.bytes as f64])
            .collect();
        put(&log);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Raw representations of per-party feature blocks.
    pub fn represent(&self, blocks: &[Matrix]) -> Result<Vec<Matrix>> {
        blocks.iter().zip(&self.extractors).map(|(b, e)| e.apply(b)).collect()
    }

    /// Softmax-head predictions; classes not in `known` are never emitted.
    pub fn predict_softmax(&self, blocks: &[Matrix], known: Option<&[bool]>) -> Result<Vec<usize>> {
        self.head.predict(&self.represent(blocks)?, known)
    }

    /// Nearest-prototype predictions summed over parties.
    pub fn predict_prototype_nn(&self, blocks: &[Matrix]) -> Result<Vec<usize>> {
        let adapted = self.head.adapt_all(&self.represent(blocks)?)?;
        prototype_nn_predict(&adapted, &self.prototypes)
    }
}

/// What a round produced, for logging and reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub global_loss: f64,
    pub local_losses: Vec<f64>,
    pub gammas: Vec<f64>,
    pub bytes: usize,
}

/// Initial parameters drawn from per-component seed streams.
pub fn init_params(parties: &[PartyDataset], num_classes: usize, cfg: &FedConfig, seed: u64) -> (Vec<MlpParams>, FusionHead) {
    let d = cfg.latent_dim;
    let m = parties.len();
    let extractors = parties
        .iter()
        .map(|p| {
            let mut dims = vec![p.feature_dim()];
            dims.extend(&cfg.extractor_hidden);
            dims.push(d);
            MlpParams::init(&dims, Activation::Identity, &mut rng_for(seed, &[stream::EXTRACTOR, p.party_id as u64]))
        })
        .collect();
    let adaptors = parties
        .iter()
        .map(|p| {
            if cfg.adaptor_hidden.is_empty() {
                MlpParams::affine_identity(d)
            } else {
                let mut dims = vec![d];
                dims.extend(&cfg.adaptor_hidden);
                dims.push(d);
                MlpParams::init(&dims, Activation::Identity, &mut rng_for(seed, &[stream::ADAPTOR, p.party_id as u64]))
            }
        })
        .collect();
    let mut dims = vec![m * d];
    dims.extend(&cfg.classifier_hidden);
    dims.push(num_classes);
    let classifier = MlpParams::init(&dims, Activation::Identity, &mut rng_for(seed, &[stream::CLASSIFIER]));
    (
        extractors,
        FusionHead {
            adaptors,
            gate: GateParams::zeros(m, d),
            classifier,
        },
    )
}

fn send(link: &mut dyn super::transport::Link, msg: &RoundMessage) -> Result<usize> {
    let frame = encode_message(msg)?;
    link.send(&frame)?;
    Ok(frame.len())
}

fn recv(link: &mut dyn super::transport::Link) -> Result<(RoundMessage, usize)> {
    let frame = link.recv()?;
    let (msg, used) = decode_message(&frame)?;
    if used != frame.len() {
        return Err(Error::Framing(format!("{} stray bytes after frame", frame.len() - used)));
    }
    Ok((msg, used))
}

/// Best-effort frame with an invalid tag so the active side stops waiting.
const ABORT_FRAME: [u8; 5] = [0, 0, 0, 0, 0];

fn expect_up(msg: RoundMessage, round: u32, party_id: u32) -> Result<(Matrix, PriorVector)> {
    match msg {
        RoundMessage::ReprUp {
            round: r,
            party_id: p,
            aligned_reps,
            local_prior,
        } if r == round && p == party_id => Ok((aligned_reps, PriorVector::new(local_prior)?)),
        RoundMessage::ReprUp { round: r, party_id: p, .. } => Err(Error::Protocol(format!(
            "expected ReprUp(round {round}, party {party_id}), got round {r} party {p}"
        ))),
        RoundMessage::ProtoDown { .. } => Err(Error::Protocol("ProtoDown received by the active party".into())),
    }
}

fn noisy_reps(reps: &Matrix, cfg: &FedConfig, party_id: u32, slot: u64) -> Matrix {
    if cfg.noise.target == NoiseTarget::Representations {
        inject_noise(reps, &cfg.noise.for_stream(&[stream::NOISE_REPS, party_id as u64, slot]))
    } else {
        reps.clone()
    }
}

struct LocalOutcome {
    mean_loss: f64,
    gamma: f64,
}

/// One party's round: receive, estimate and mix its prior, train the
/// extractor on its unaligned pool, upload aligned representations.
fn party_round(
    link: &mut dyn super::transport::Link,
    data: &PartyDataset,
    extractor: &mut MlpParams,
    prior: &mut PriorState,
    cfg: &FedConfig,
    round: u32,
    z: usize,
    seed: u64,
) -> Result<LocalOutcome> {
    let (msg, _) = recv(link)?;
    let (protos, global) = match msg {
        RoundMessage::ProtoDown {
            round: r,
            prototypes,
            global_prior,
        } if r == round => (PrototypeSet::new(data.party_id, prototypes)?, PriorVector::new(global_prior)?),
        other => {
            return Err(Error::Protocol(format!(
                "party {} expected ProtoDown for round {round}, got {:?} round {}",
                data.party_id,
                other.tag(),
                other.round()
            )))
        }
    };
    if protos.num_classes() != z || protos.dim() != cfg.latent_dim {
        return Err(Error::Protocol("prototype shape disagrees with the configuration".into()));
    }

    let lagged = prior.lagged(z);
    let mut counts = vec![0usize; z];
    let local = if data.unaligned.rows() > 0 {
        let reps_u = extractor.apply(&data.unaligned)?;
        for y in pseudo_labels(&protos, &lagged, &reps_u, cfg.kernel)? {
            counts[y] += 1;
        }
        estimate_local_prior(&reps_u, &protos, &lagged, cfg.kernel)?
    } else {
        prior.local.clone()
    };
    match &data.labels_aligned {
        Some(labels) => labels.iter().for_each(|&y| counts[y] += 1),
        None if data.aligned.rows() > 0 => {
            let reps_a = extractor.apply(&data.aligned)?;
            for y in pseudo_labels(&protos, &lagged, &reps_a, cfg.kernel)? {
                counts[y] += 1;
            }
        }
        None => {}
    }
    let gamma = if counts.iter().sum::<usize>() > 0 {
        compute_gamma(&counts)?.value
    } else {
        0.0
    };
    let mixed = mix_prior(&local, &global, gamma)?;

    let objective = cfg.objective();
    let n = data.unaligned.rows();
    let (mut loss_sum, mut batches) = (0.0, 0usize);
    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, &[stream::LOCAL_BATCHES, data.party_id as u64, round as u64, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.unaligned.select_rows(chunk);
            let out = local_loss(extractor, &batch, &protos, &mixed, &objective)?;
            if !out.value.is_finite() {
                return Err(Error::NonFinite(format!("local loss of party {}", data.party_id)));
            }
            sgd_step_in_place(extractor, &out.grads, cfg.lr_local, 0.0)?;
            loss_sum += out.value;
            batches += 1;
        }
    }

    prior.local = local.clone();
    prior.gamma = gamma;
    prior.push_mixed(mixed);

    let reps = noisy_reps(&extractor.apply(&data.aligned)?, cfg, data.party_id, round as u64 + 1);
    send(
        link,
        &RoundMessage::ReprUp {
            round,
            party_id: data.party_id,
            aligned_reps: reps,
            local_prior: local.into_vec(),
        },
    )?;
    Ok(LocalOutcome {
        mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
        gamma,
    })
}

/// A running federation: party data, transport sessions and the evolving state.
pub struct Federation {
    parties: Vec<PartyDataset>,
    labels: Vec<usize>,
    config: FedConfig,
    channels: Vec<Channel>,
    state: FedState,
}

impl Federation {
    /// Draws initial parameters and runs the prototype bootstrap exchange.
    pub fn new(parties: Vec<PartyDataset>, num_classes: usize, config: FedConfig, channels: Vec<Channel>, seed: u64) -> Result<Self> {
        config.validate()?;
        if parties.is_empty() || parties.len() != channels.len() {
            return Err(Error::Config(format!("{} parties on {} channels", parties.len(), channels.len())));
        }
        if parties.iter().enumerate().any(|(i, p)| p.party_id as usize != i + 1) {
            return Err(Error::Config("parties must be ordered by id starting at 1".into()));
        }
        let labels = parties[0]
            .labels_aligned
            .clone()
            .ok_or_else(|| Error::Config("party 1 must hold the aligned labels".into()))?;
        let (extractors, head) = init_params(&parties, num_classes, &config, seed);
        let placeholder = PrototypeSet::new(0, Matrix::zeros(num_classes, config.latent_dim))?;
        let state = FedState {
            round: 0,
            seed,
            num_classes,
            prototypes: vec![placeholder; parties.len()],
            priors: vec![PriorState::new(num_classes); parties.len()],
            global_prior: PriorVector::uniform(num_classes),
            extractors,
            head,
            comm_log: CommLog::new(),
            loss_curve: Vec::new(),
            local_loss_curve: Vec::new(),
            error_log: Vec::new(),
        };
        let mut fed = Self {
            parties,
            labels,
            config,
            channels,
            state,
        };
        fed.bootstrap()?;
        Ok(fed)
    }

    pub fn state(&self) -> &FedState {
        &self.state
    }

    pub fn into_state(self) -> FedState {
        self.state
    }

    pub fn config(&self) -> &FedConfig {
        &self.config
    }

    pub fn parties(&self) -> &[PartyDataset] {
        &self.parties
    }

    /// Parties upload initial aligned representations; the active party
    /// seeds prototypes from adapted class means.
    fn bootstrap(&mut self) -> Result<()> {
        let z = self.state.num_classes;
        let mut uploads = Vec::with_capacity(self.parties.len());
        for ((ch, data), extractor) in self.channels.iter_mut().zip(&self.parties).zip(&self.state.extractors) {
            let reps = noisy_reps(&extractor.apply(&data.aligned)?, &self.config, data.party_id, 0);
            let bytes = send(
                ch.party.as_mut(),
                &RoundMessage::ReprUp {
                    round: 0,
                    party_id: data.party_id,
                    aligned_reps: reps,
                    local_prior: PriorVector::uniform(z).into_vec(),
                },
            )?;
            let (msg, _) = recv(ch.active.as_mut())?;
            self.state.comm_log.push(CommRecord {
                phase: Phase::Setup,
                round: 0,
                party_id: data.party_id,
                direction: Direction::Up,
                bytes,
            });
            uploads.push(expect_up(msg, 0, data.party_id)?);
        }
        let reps: Vec<Matrix> = uploads.iter().map(|(r, _)| r.clone()).collect();
        let adapted = self.state.head.adapt_all(&reps)?;
        for (i, a) in adapted.iter().enumerate() {
            let by_class: Vec<Matrix> = (0..z)
                .map(|c| {
                    let rows: Vec<usize> = (0..self.labels.len()).filter(|&r| self.labels[r] == c).collect();
                    a.select_rows(&rows)
                })
                .collect();
            self.state.prototypes[i] = init_prototypes(i as u32 + 1, &by_class, self.config.latent_dim, self.state.seed)?;
        }
        let priors: Vec<PriorVector> = uploads.into_iter().map(|(_, p)| p).collect();
        self.state.global_prior = average_global_prior(&priors)?;
        Ok(())
    }

    /// Runs one round. On failure the state is left as it was apart from
    /// an entry in the error log.
    pub fn run_round(&mut self) -> Result<RoundSummary> {
        let mut next = self.state.clone();
        match round_step(&mut next, &self.parties, &self.labels, &self.config, &mut self.channels) {
            Ok(summary) => {
                self.state = next;
                Ok(summary)
            }
            Err(e) => {
                self.state.error_log.push(format!("round {}: {e}", self.state.round));
                Err(e)
            }
        }
    }

    /// Runs the remaining rounds up to the configured total.
    pub fn run(&mut self) -> Result<Vec<RoundSummary>> {
        let mut out = Vec::new();
        while self.state.round < self.config.rounds {
            out.push(self.run_round()?);
        }
        Ok(out)
    }
}

fn round_step(
    state: &mut FedState,
    parties: &[PartyDataset],
    labels: &[usize],
    cfg: &FedConfig,
    channels: &mut [Channel],
) -> Result<RoundSummary> {
    let t = state.round as u32;
    let z = state.num_classes;
    let seed = state.seed;
    let mut log = CommLog::new();

    for (i, ch) in channels.iter_mut().enumerate() {
        let party_id = i as u32 + 1;
        let protos = match cfg.noise.target {
            NoiseTarget::Prototypes => inject_noise(
                state.prototypes[i].matrix(),
                &cfg.noise.for_stream(&[stream::NOISE_PROTOS, party_id as u64, t as u64]),
            ),
            _ => state.prototypes[i].matrix().clone(),
        };
        let bytes = send(
            ch.active.as_mut(),
            &RoundMessage::ProtoDown {
                round: t,
                prototypes: protos,
                global_prior: state.global_prior.probs().to_vec(),
            },
        )?;
        log.push(CommRecord {
            phase: Phase::Round,
            round: t,
            party_id,
            direction: Direction::Down,
            bytes,
        });
    }

    let (outcomes, uploads) = std::thread::scope(|s| {
        let mut actives = Vec::with_capacity(channels.len());
        let mut handles = Vec::with_capacity(channels.len());
        for (((ch, data), extractor), prior) in channels
            .iter_mut()
            .zip(parties)
            .zip(state.extractors.iter_mut())
            .zip(state.priors.iter_mut())
        {
            let Channel { active, party } = ch;
            actives.push(active);
            handles.push(s.spawn(move || {
                let out = party_round(party.as_mut(), data, extractor, prior, cfg, t, z, seed);
                if out.is_err() {
                    let _ = party.send(&ABORT_FRAME);
                }
                out
            }));
        }
        let uploads: Vec<Result<(RoundMessage, usize)>> = actives.into_iter().map(|a| recv(a.as_mut())).collect();
        let outcomes: Vec<Result<LocalOutcome>> = handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Transport("party worker panicked".into()))))
            .collect();
        (outcomes, uploads)
    });
    let outcomes: Vec<LocalOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let mut reps = Vec::with_capacity(parties.len());
    let mut local_priors = Vec::with_capacity(parties.len());
    for (i, up) in uploads.into_iter().enumerate() {
        let party_id = i as u32 + 1;
        let (msg, bytes) = up?;
        log.push(CommRecord {
            phase: Phase::Round,
            round: t,
            party_id,
            direction: Direction::Up,
            bytes,
        });
        let (r, p) = expect_up(msg, t, party_id)?;
        if r.rows() != labels.len() || r.cols() != cfg.latent_dim {
            return Err(Error::Protocol(format!("party {party_id} uploaded {}×{} representations", r.rows(), r.cols())));
        }
        reps.push(r);
        local_priors.push(p);
    }

    train_head(&mut state.head, &reps, labels, cfg, seed, t)?;

    let adapted = state.head.adapt_all(&reps)?;
    for (proto, a) in state.prototypes.iter_mut().zip(&adapted) {
        *proto = update_prototypes(proto, a, labels, cfg.rho, cfg.renormalize_prototypes)?;
    }
    state.global_prior = average_global_prior(&local_priors)?;

    let global_loss = if labels.is_empty() { 0.0 } else { state.head.loss(&reps, labels)? };
    let bytes = log.records().iter().map(|r| r.bytes).sum();
    state.comm_log.extend(&log);
    state.loss_curve.push(global_loss);
    let local_losses: Vec<f64> = outcomes.iter().map(|o| o.mean_loss).collect();
    state.local_loss_curve.push(local_losses.clone());
    state.round += 1;
    Ok(RoundSummary {
        round: t as usize,
        global_loss,
        local_losses,
        gammas: outcomes.iter().map(|o| o.gamma).collect(),
        bytes,
    })
}

/// τ epochs of minibatch SGD on the head's cross-entropy over the aligned set.
pub fn train_head(head: &mut FusionHead, reps: &[Matrix], labels: &[usize], cfg: &FedConfig, seed: u64, round: u32) -> Result<()> {
    let n = labels.len();
    if n == 0 || cfg.lr_active == 0.0 {
        return Ok(());
    }
    for epoch in 0..cfg.local_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(seed, &[stream::ACTIVE_BATCHES, round as u64, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Matrix> = reps.iter().map(|r| r.select_rows(chunk)).collect();
            let y: Vec<usize> = chunk.iter().map(|&r| labels[r]).collect();
            let (_, g) = head.loss_and_grads(&batch, &y)?;
            sgd_step_in_place(&mut head.classifier, &g.classifier, cfg.lr_active, 0.0)?;
            if !cfg.freeze_gate {
                sgd_matrix(&mut head.gate.weight, &g.gate, cfg.lr_active)?;
            }
            if !cfg.freeze_adaptors {
                for (a, ga) in head.adaptors.iter_mut().zip(&g.adaptors) {
                    sgd_step_in_place(a, ga, cfg.lr_active, 0.0)?;
                }
            }
        }
    }
    Ok(())
}
