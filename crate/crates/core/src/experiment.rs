//! Config-driven experiment runner and its JSON report.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{train_local, train_upper_boundary, train_vanilla_vfl, BaselineConfig};
use crate::data::{build_scenario, DatasetSource, ImbalanceReport, ImbalanceSpec, Scenario, ScenarioConfig, SplitSpec};
use crate::error::{Error, Result};
use crate::federation::{
    comm_cost, inject_noise, label_inference_attack, open_channels, CommCost, FedConfig, FedState, Federation,
    NoiseConfig, NoiseTarget, TransportKind,
};
use crate::numerics::rng::stream;
use crate::numerics::Matrix;
use crate::prototypes::PrototypeSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ProtoEvfl,
    Local,
    VanillaVfl,
    UpperBoundary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    Softmax,
    PrototypeNn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub method: Method,
    #[serde(default = "default_parties")]
    pub num_parties: usize,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_aligned_ratio")]
    pub aligned_ratio: f64,
    #[serde(default = "default_test_ratio")]
    pub test_ratio: f64,
    #[serde(default)]
    pub imbalance: ImbalanceSpec,
    #[serde(default)]
    pub hyper: FedConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub inference: InferenceMode,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Evaluate the prototype-similarity label-inference attack.
    #[serde(default)]
    pub attack: bool,
}

fn default_parties() -> usize {
    4
}

fn default_aligned_ratio() -> f64 {
    0.02
}

fn default_test_ratio() -> f64 {
    0.2
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            dataset: self.dataset.clone(),
            num_parties: self.num_parties,
            split: self.split.clone(),
            aligned_ratio: self.aligned_ratio,
            test_ratio: self.test_ratio,
            imbalance: self.imbalance.clone(),
        }
    }

    pub fn fed(&self) -> FedConfig {
        FedConfig {
            noise: self.noise,
            ..self.hyper.clone()
        }
    }
}

/// One violated constraint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// Every problem found in a config, not just the first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfigErrors(pub Vec<FieldError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", e.field, e.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

impl From<ConfigErrors> for Error {
    fn from(e: ConfigErrors) -> Self {
        Error::Config(e.to_string())
    }
}

fn push(errs: &mut Vec<FieldError>, field: &str, message: String) {
    errs.push(FieldError {
        field: field.to_string(),
        message,
    });
}

const KNOWN_FIELDS: &[&str] = &[
    "dataset",
    "method",
    "num_parties",
    "split",
    "aligned_ratio",
    "test_ratio",
    "imbalance",
    "hyper",
    "noise",
    "inference",
    "seeds",
    "attack",
];

/// Parses and range-checks a JSON config, filling defaults.
pub fn validate_config(raw: &str) -> std::result::Result<ExperimentConfig, ConfigErrors> {
    let mut errs = Vec::new();
    let value: Value = if raw.trim().is_empty() {
        Value::Object(Default::default())
    } else {
        match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(e) => {
                push(&mut errs, "<root>", format!("invalid JSON: {e}"));
                return Err(ConfigErrors(errs));
            }
        }
    };
    let Value::Object(mut obj) = value else {
        push(&mut errs, "<root>", "config must be a JSON object".into());
        return Err(ConfigErrors(errs));
    };
    for required in ["dataset", "method"] {
        if !obj.contains_key(required) {
            push(&mut errs, required, "required field is missing".into());
        }
    }
    // Unknown keys are reported and dropped so the range checks still run.
    let unknown: Vec<String> = obj.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str())).cloned().collect();
    for key in unknown {
        obj.remove(&key);
        push(&mut errs, &key, "unknown field".into());
    }
    if !(obj.contains_key("dataset") && obj.contains_key("method")) {
        return Err(ConfigErrors(errs));
    }
    let cfg: ExperimentConfig = match serde_json::from_value(Value::Object(obj)) {
        Ok(c) => c,
        Err(e) => {
            push(&mut errs, "<root>", e.to_string());
            return Err(ConfigErrors(errs));
        }
    };

    if !(cfg.aligned_ratio > 0.0 && cfg.aligned_ratio <= 1.0) {
        push(&mut errs, "aligned_ratio", format!("{} is outside (0, 1]", cfg.aligned_ratio));
    }
    if !(0.0..1.0).contains(&cfg.test_ratio) {
        push(&mut errs, "test_ratio", format!("{} is outside [0, 1)", cfg.test_ratio));
    }
    if cfg.num_parties == 0 {
        push(&mut errs, "num_parties", "must be at least 1".into());
    }
    if cfg.seeds.is_empty() {
        push(&mut errs, "seeds", "at least one seed is required".into());
    }
    if let Some(g) = cfg.imbalance.gamma {
        if !(g >= 1.0 && g.is_finite()) {
            push(&mut errs, "imbalance.gamma", format!("Γ = {g} must be a finite ratio ≥ 1"));
        }
    }
    let z = match &cfg.dataset {
        DatasetSource::Synthetic(s) => {
            if s.dim < 2 {
                push(&mut errs, "dataset.dim", format!("{} must be at least 2", s.dim));
            }
            if s.num_classes < 2 {
                push(&mut errs, "dataset.num_classes", "at least 2 classes are required".into());
            }
            if s.per_class_counts.len() != s.num_classes {
                push(&mut errs, "dataset.per_class_counts", format!("{} counts for {} classes", s.per_class_counts.len(), s.num_classes));
            }
            if !(s.class_separation >= 0.0 && s.class_separation.is_finite()) {
                push(&mut errs, "dataset.class_separation", "must be finite and nonnegative".into());
            }
            if s.dim < cfg.num_parties && matches!(cfg.split, SplitSpec::Even) {
                push(&mut errs, "split", format!("{} columns cannot cover {} parties", s.dim, cfg.num_parties));
            }
            Some(s.num_classes)
        }
        DatasetSource::PartyCsv { paths, .. } => {
            if paths.len() != cfg.num_parties {
                push(&mut errs, "dataset.paths", format!("{} files for {} parties", paths.len(), cfg.num_parties));
            }
            None
        }
        DatasetSource::Csv { .. } => None,
    };
    if let Some(z) = z {
        if let Some(g) = cfg.imbalance.gamma {
            if g >= 1.0 && (cfg.imbalance.num_majority == 0 || cfg.imbalance.num_majority >= z) {
                push(&mut errs, "imbalance.num_majority", format!("{} must lie in [1, {z})", cfg.imbalance.num_majority));
            }
        }
        for rc in &cfg.imbalance.rare_classes {
            if rc.class >= z {
                push(&mut errs, "imbalance.rare_classes", format!("class {} does not exist", rc.class));
            }
        }
    }
    let h = &cfg.hyper;
    if h.batch_size == 0 {
        push(&mut errs, "hyper.batch_size", "must be positive".into());
    }
    if h.latent_dim == 0 {
        push(&mut errs, "hyper.latent_dim", "must be positive".into());
    }
    for (name, v) in [
        ("hyper.lr_local", h.lr_local),
        ("hyper.lr_active", h.lr_active),
        ("hyper.phi", h.phi),
        ("hyper.rho", h.rho),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            push(&mut errs, name, format!("{v} must be finite and nonnegative"));
        }
    }
    if !(h.kernel.scale > 0.0 && h.kernel.scale.is_finite()) {
        push(&mut errs, "hyper.kernel.scale", format!("{} must be positive", h.kernel.scale));
    }
    if let Some(t) = h.confidence_threshold {
        if !(0.0..=1.0).contains(&t) {
            push(&mut errs, "hyper.confidence_threshold", format!("{t} is outside [0, 1]"));
        }
    }
    if !(cfg.noise.kappa >= 0.0 && cfg.noise.kappa.is_finite()) {
        push(&mut errs, "noise.kappa", format!("{} must be finite and nonnegative", cfg.noise.kappa));
    }
    if cfg.method != Method::ProtoEvfl {
        if cfg.inference == InferenceMode::PrototypeNn {
            push(&mut errs, "inference", "prototype_nn needs method proto_evfl".into());
        }
        if cfg.attack {
            push(&mut errs, "attack", "the label-inference attack needs method proto_evfl".into());
        }
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(errs))
    }
}

/// Results of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Test accuracy under the configured inference mode.
    pub accuracy: f64,
    pub softmax_accuracy: f64,
    pub prototype_nn_accuracy: Option<f64>,
    /// `None` for classes absent from the test split.
    pub per_class_recall: Vec<Option<f64>>,
    /// Classes without aligned labelled rows.
    pub unseen_classes: Vec<usize>,
    pub unseen_recall: Option<f64>,
    pub imbalance: ImbalanceReport,
    pub comm: Option<CommCost>,
    /// Test accuracy after each round.
    pub accuracy_curve: Vec<f64>,
    /// 1-based round of the best test accuracy and the bytes moved up to it.
    pub rounds_to_best: Option<usize>,
    pub bytes_to_best: Option<usize>,
    /// Head cross-entropy on the aligned set after each round.
    pub loss_curve: Vec<f64>,
    /// Attack accuracy of each passive party.
    pub attack_per_party: Option<Vec<f64>>,
    pub attack_accuracy: Option<f64>,
    pub state_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Release tag of the producing crate, in `git describe` form.
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub accuracy_per_seed: Vec<f64>,
    pub mean_accuracy: f64,
    pub unseen_recall_per_seed: Vec<Option<f64>>,
    pub mean_unseen_recall: Option<f64>,
    pub attack_accuracy_per_seed: Vec<Option<f64>>,
    pub mean_attack_accuracy: Option<f64>,
    pub per_seed: Vec<SeedResult>,
    /// Excluded from the canonical form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl Report {
    /// Pretty JSON without wall-clock fields.
    pub fn canonical_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.wall_clock_seconds = None;
        Ok(serde_json::to_string_pretty(&r)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// What an honest-but-curious passive party holds after training: its own
/// aligned representations and the prototypes it was sent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackView {
    pub party_id: u32,
    pub aligned_reps: Matrix,
    pub received_prototypes: PrototypeSet,
}

/// Offline attack input; `true_labels` belong to the evaluator only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSnapshot {
    pub num_classes: usize,
    pub views: Vec<AttackView>,
    pub true_labels: Vec<usize>,
}

impl AttackSnapshot {
    /// Views of every passive party (ids ≥ 2) after the final round.
    pub fn capture(state: &FedState, scenario: &Scenario, noise: &NoiseConfig) -> Result<Self> {
        let mut views = Vec::new();
        for (i, party) in scenario.parties.iter().enumerate().filter(|(_, p)| !p.is_active()) {
            let protos = match noise.target {
                NoiseTarget::Prototypes => inject_noise(
                    state.prototypes[i].matrix(),
                    &noise.for_stream(&[stream::NOISE_PROTOS, party.party_id as u64, state.round as u64]),
                ),
                _ => state.prototypes[i].matrix().clone(),
            };
            views.push(AttackView {
                party_id: party.party_id,
                aligned_reps: state.extractors[i].apply(&party.aligned)?,
                received_prototypes: PrototypeSet::new(party.party_id, protos)?,
            });
        }
        Ok(Self {
            num_classes: scenario.num_classes,
            views,
            true_labels: scenario.aligned_labels().to_vec(),
        })
    }

    /// Attack accuracy of each view.
    pub fn evaluate(&self) -> Result<Vec<f64>> {
        self.views
            .iter()
            .map(|v| label_inference_attack(&v.aligned_reps, &v.received_prototypes, &self.true_labels))
            .collect()
    }
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}

pub fn per_class_recall(pred: &[usize], labels: &[usize], num_classes: usize) -> Vec<Option<f64>> {
    let mut hit = vec![0usize; num_classes];
    let mut tot = vec![0usize; num_classes];
    for (&p, &y) in pred.iter().zip(labels) {
        tot[y] += 1;
        hit[y] += usize::from(p == y);
    }
    hit.iter()
        .zip(&tot)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Everything produced for one seed, including the trained federation
/// state when the method is federated.
pub struct SeedRun {
    pub result: SeedResult,
    pub scenario: Scenario,
    pub state: Option<FedState>,
}

struct Evaluated {
    softmax: Vec<usize>,
    proto_nn: Option<Vec<usize>>,
}

pub fn run_seed(config: &ExperimentConfig, seed: u64, transport: TransportKind) -> Result<SeedRun> {
    let scenario = build_scenario(&config.scenario(), seed)?;
    let z = scenario.num_classes;
    let known = scenario.aligned_classes();
    let unseen: Vec<usize> = (0..z).filter(|&c| !known[c]).collect();
    let fed_cfg = config.fed();
    let base_cfg = BaselineConfig::from_fed(&fed_cfg);
    let test = &scenario.test;

    let mut state = None;
    let mut accuracy_curve = Vec::new();
    let mut comm = None;
    let mut loss_curve = Vec::new();
    let evaluated = match config.method {
        Method::ProtoEvfl => {
            let channels = open_channels(transport, scenario.parties.len())?;
            let mut fed = Federation::new(scenario.parties.clone(), z, fed_cfg.clone(), channels, seed)?;
            while fed.state().round < fed_cfg.rounds {
                fed.run_round()?;
                let s = fed.state();
                let pred = match config.inference {
                    InferenceMode::Softmax => s.predict_softmax(&test.blocks, Some(&known))?,
                    InferenceMode::PrototypeNn => s.predict_prototype_nn(&test.blocks)?,
                };
                accuracy_curve.push(accuracy(&pred, &test.labels));
            }
            let s = fed.into_state();
            comm = Some(comm_cost(&s.comm_log));
            loss_curve = s.loss_curve.clone();
            let ev = Evaluated {
                softmax: s.predict_softmax(&test.blocks, Some(&known))?,
                proto_nn: Some(s.predict_prototype_nn(&test.blocks)?),
            };
            state = Some(s);
            ev
        }
        Method::Local => {
            let m = train_local(&scenario.parties[0], z, &base_cfg, seed)?;
            Evaluated {
                softmax: m.predict(&test.blocks[0], Some(&known))?,
                proto_nn: None,
            }
        }
        Method::VanillaVfl => {
            let m = train_vanilla_vfl(&scenario.parties, z, &base_cfg, seed)?;
            Evaluated {
                softmax: m.predict(&test.blocks, Some(&known))?,
                proto_nn: None,
            }
        }
        Method::UpperBoundary => {
            let rows: BTreeSet<usize> = scenario
                .parties
                .iter()
                .flat_map(|p| p.aligned_rows.iter().chain(&p.unaligned_rows).copied())
                .collect();
            let rows: Vec<usize> = rows.into_iter().collect();
            // The oracle is not bound by the federated extractor rate.
            let oracle = BaselineConfig {
                extractor_lr: base_cfg.lr,
                ..base_cfg.clone()
            };
            let m = train_upper_boundary(&scenario.train, &rows, &oracle, seed)?;
            Evaluated {
                softmax: m.predict(&test.features, None)?,
                proto_nn: None,
            }
        }
    };

    let chosen = match (config.inference, &evaluated.proto_nn) {
        (InferenceMode::PrototypeNn, Some(p)) => p,
        _ => &evaluated.softmax,
    };
    let recall = per_class_recall(chosen, &test.labels, z);
    let unseen_recall = if config.method == Method::UpperBoundary {
        None
    } else {
        mean(&unseen.iter().filter_map(|&c| recall[c]).collect::<Vec<_>>())
    };

    let (mut rounds_to_best, mut bytes_to_best) = (None, None);
    if let (Some(c), false) = (&comm, accuracy_curve.is_empty()) {
        let best = accuracy_curve
            .iter()
            .enumerate()
            .fold(0, |b, (i, &a)| if a > accuracy_curve[b] { i } else { b });
        rounds_to_best = Some(best + 1);
        bytes_to_best = Some(c.setup + c.per_round.iter().take(best + 1).sum::<usize>());
    }

    let (attack_per_party, attack_accuracy) = match (&state, config.attack) {
        (Some(s), true) => {
            let per = AttackSnapshot::capture(s, &scenario, &config.noise)?.evaluate()?;
            let m = mean(&per);
            (Some(per), m)
        }
        _ => (None, None),
    };

    let result = SeedResult {
        seed,
        accuracy: accuracy(chosen, &test.labels),
        softmax_accuracy: accuracy(&evaluated.softmax, &test.labels),
        prototype_nn_accuracy: evaluated.proto_nn.as_ref().map(|p| accuracy(p, &test.labels)),
        per_class_recall: recall,
        unseen_classes: unseen,
        unseen_recall,
        imbalance: scenario.manifest.imbalance.clone(),
        comm,
        accuracy_curve,
        rounds_to_best,
        bytes_to_best,
        loss_curve,
        attack_per_party,
        attack_accuracy,
        state_digest: state.as_ref().map(FedState::digest),
    };
    Ok(SeedRun {
        result,
        scenario,
        state,
    })
}

/// Runs every seed in order and aggregates.
pub fn run_experiment(config: &ExperimentConfig, transport: TransportKind) -> Result<Report> {
    let mut per_seed = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        per_seed.push(run_seed(config, seed, transport)?.result);
    }
    Ok(build_report(config, per_seed))
}

pub fn build_report(config: &ExperimentConfig, per_seed: Vec<SeedResult>) -> Report {
    let acc: Vec<f64> = per_seed.iter().map(|r| r.accuracy).collect();
    let unseen: Vec<Option<f64>> = per_seed.iter().map(|r| r.unseen_recall).collect();
    let attack: Vec<Option<f64>> = per_seed.iter().map(|r| r.attack_accuracy).collect();
    let all = |v: &[Option<f64>]| -> Option<f64> {
        let xs: Option<Vec<f64>> = v.iter().copied().collect();
        xs.and_then(|x| mean(&x))
    };
    Report {
        version: concat!("v", env!("CARGO_PKG_VERSION")).to_string(),
        config: config.clone(),
        seeds: per_seed.iter().map(|r| r.seed).collect(),
        mean_accuracy: mean(&acc).unwrap_or(0.0),
        accuracy_per_seed: acc,
        mean_unseen_recall: all(&unseen),
        unseen_recall_per_seed: unseen,
        mean_attack_accuracy: all(&attack),
        attack_accuracy_per_seed: attack,
        per_seed,
        wall_clock_seconds: None,
    }
}
