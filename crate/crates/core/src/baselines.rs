//! Reference systems: the active party alone, plain split learning, and a
//! centralised model that sees every feature and label.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::aggregation::{cross_entropy, masked_argmax, FusionHead};
use crate::data::{PartyDataset, RawDataset};
use crate::error::{Error, Result};
use crate::federation::{init_params, FedConfig};
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::{sgd_step_in_place, Activation, Matrix, MlpParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Local,
    VanillaVfl,
    UpperBoundary,
}

/// Training schedule for the baselines: `rounds × epochs_per_round` passes
/// over the labelled rows, shuffled exactly like the federated head.
/// Extractor layers step with `extractor_lr`, classifier layers with `lr`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub extractor_lr: f64,
    pub latent_dim: usize,
    pub extractor_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
}

impl BaselineConfig {
    pub fn from_fed(cfg: &FedConfig) -> Self {
        Self {
            rounds: cfg.rounds,
            epochs_per_round: cfg.local_epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr_active,
            extractor_lr: cfg.lr_local,
            latent_dim: cfg.latent_dim,
            extractor_hidden: cfg.extractor_hidden.clone(),
            classifier_hidden: cfg.classifier_hidden.clone(),
        }
    }

    fn fed_view(&self) -> FedConfig {
        FedConfig {
            rounds: self.rounds,
            local_epochs: self.epochs_per_round,
            batch_size: self.batch_size,
            latent_dim: self.latent_dim,
            extractor_hidden: self.extractor_hidden.clone(),
            classifier_hidden: self.classifier_hidden.clone(),
            ..FedConfig::default()
        }
    }
}

/// An extractor feeding a classifier, trained as one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleModel {
    pub extractor: MlpParams,
    pub classifier: MlpParams,
}

impl SingleModel {
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        self.classifier.apply(&self.extractor.apply(features)?)
    }

    /// Predictions restricted to `known` classes when given.
    pub fn predict(&self, features: &Matrix, known: Option<&[bool]>) -> Result<Vec<usize>> {
        Ok(masked_argmax(&self.logits(features)?, known))
    }
}

/// Per-party extractors feeding a `1/M`-scaled concatenation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VanillaModel {
    pub extractors: Vec<MlpParams>,
    /// Identity adaptors and a zero gate; only the classifier trains.
    pub head: FusionHead,
}

impl VanillaModel {
    pub fn predict(&self, blocks: &[Matrix], known: Option<&[bool]>) -> Result<Vec<usize>> {
        let reps: Vec<Matrix> = blocks.iter().zip(&self.extractors).map(|(b, e)| e.apply(b)).collect::<Result<_>>()?;
        self.head.predict(&reps, known)
    }
}

fn single_network(input_dim: usize, num_classes: usize, cfg: &BaselineConfig, seed: u64) -> SingleModel {
    let mut dims = vec![input_dim];
    dims.extend(&cfg.extractor_hidden);
    dims.push(cfg.latent_dim);
    let extractor = MlpParams::init(&dims, Activation::Identity, &mut rng_for(seed, &[stream::EXTRACTOR, 1]));
    let mut dims = vec![cfg.latent_dim];
    dims.extend(&cfg.classifier_hidden);
    dims.push(num_classes);
    let classifier = MlpParams::init(&dims, Activation::Identity, &mut rng_for(seed, &[stream::CLASSIFIER]));
    SingleModel { extractor, classifier }
}

fn fit_single(mut model: SingleModel, features: &Matrix, labels: &[usize], cfg: &BaselineConfig, seed: u64) -> Result<SingleModel> {
    let n = labels.len();
    for t in 0..cfg.rounds {
        for e in 0..cfg.epochs_per_round {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng_for(seed, &[stream::ACTIVE_BATCHES, t as u64, e as u64]));
            for chunk in order.chunks(cfg.batch_size) {
                let x = features.select_rows(chunk);
                let y: Vec<usize> = chunk.iter().map(|&r| labels[r]).collect();
                let (h, tape_e) = model.extractor.forward(&x)?;
                let (logits, tape_c) = model.classifier.forward(&h)?;
                let (_, dlogits) = cross_entropy(&logits, &y)?;
                let (gc, dh) = model.classifier.backward(&tape_c, &dlogits)?;
                sgd_step_in_place(&mut model.classifier, &gc, cfg.lr, 0.0)?;
                if cfg.extractor_lr != 0.0 {
                    let (ge, _) = model.extractor.backward(&tape_e, &dh)?;
                    sgd_step_in_place(&mut model.extractor, &ge, cfg.extractor_lr, 0.0)?;
                }
            }
        }
    }
    Ok(model)
}

/// The active party alone: its own feature block, aligned labelled rows only.
pub fn train_local(active: &PartyDataset, num_classes: usize, cfg: &BaselineConfig, seed: u64) -> Result<SingleModel> {
    let labels = active
        .labels_aligned
        .as_ref()
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::Config("the local baseline needs labelled aligned rows".into()))?;
    let model = single_network(active.feature_dim(), num_classes, cfg, seed);
    fit_single(model, &active.aligned, labels, cfg, seed)
}

/// Centralised training on every feature of the given training rows with
/// their true labels (an oracle reference, not a federated method).
pub fn train_upper_boundary(train: &RawDataset, rows: &[usize], cfg: &BaselineConfig, seed: u64) -> Result<SingleModel> {
    if rows.is_empty() {
        return Err(Error::Config("the upper boundary needs at least one row".into()));
    }
    let model = single_network(train.features.cols(), train.num_classes, cfg, seed);
    let labels: Vec<usize> = rows.iter().map(|&r| train.labels[r]).collect();
    fit_single(model, &train.features.select_rows(rows), &labels, cfg, seed)
}

/// Split learning on the aligned rows: extractors and classifier trained
/// end to end with gradients flowing back to each party in process.
pub fn train_vanilla_vfl(parties: &[PartyDataset], num_classes: usize, cfg: &BaselineConfig, seed: u64) -> Result<VanillaModel> {
    let labels = parties
        .first()
        .and_then(|p| p.labels_aligned.as_ref())
        .filter(|l| !l.is_empty())
        .ok_or_else(|| Error::Config("vanilla VFL needs labelled aligned rows on party 1".into()))?;
    let (mut extractors, mut head) = init_params(parties, num_classes, &cfg.fed_view(), seed);
    for t in 0..cfg.rounds {
        for e in 0..cfg.epochs_per_round {
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.shuffle(&mut rng_for(seed, &[stream::ACTIVE_BATCHES, t as u64, e as u64]));
            for chunk in order.chunks(cfg.batch_size) {
                let mut reps = Vec::with_capacity(parties.len());
                let mut tapes = Vec::with_capacity(parties.len());
                for (p, ex) in parties.iter().zip(&extractors) {
                    let (r, tape) = ex.forward(&p.aligned.select_rows(chunk))?;
                    reps.push(r);
                    tapes.push(tape);
                }
                let y: Vec<usize> = chunk.iter().map(|&r| labels[r]).collect();
                let (_, g) = head.loss_and_grads(&reps, &y)?;
                sgd_step_in_place(&mut head.classifier, &g.classifier, cfg.lr, 0.0)?;
                if cfg.extractor_lr != 0.0 {
                    for ((ex, tape), dr) in extractors.iter_mut().zip(&tapes).zip(&g.reps) {
                        let (ge, _) = ex.backward(tape, dr)?;
                        sgd_step_in_place(ex, &ge, cfg.extractor_lr, 0.0)?;
                    }
                }
            }
        }
    }
    Ok(VanillaModel { extractors, head })
}
