//! Class prototypes and the probabilistic dual transport cost between
//! representations and prototypes.
//!
//! Similarities are `scale · cos(μ_z, f_n)`; both prototypes and
//! representations are L2-normalised before the kernel is applied.

mod local;
mod transport;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::{l2_norm, Matrix};

pub use local::{local_loss, LocalLoss, LocalObjective};
pub use transport::{
    loss_f_to_mu, loss_mu_to_f, plan_to_prototypes, plan_to_samples, pseudo_labels,
    BatchWeighting, TransportLoss,
};

/// Inverse temperature of the `exp(scale · μᵀf)` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub scale: f64,
}

impl Kernel {
    pub const DEFAULT_SCALE: f64 = 10.0;

    pub fn new(scale: f64) -> Self {
        Self { scale }
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SCALE)
    }
}

/// Transport cost between a prototype and a representation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// `1 − cos(μ, f)`.
    #[default]
    Cosine,
    /// `−log softmax_z(scale · cos(μ_z, f))`; turns the sample-to-prototype
    /// cost into plan entropy under a uniform prior.
    NegLogProb,
}

/// Which way a [`TransportPlan`] runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Rows are samples, columns are prototypes.
    SamplesToProtos,
    /// Rows are prototypes, columns are samples.
    ProtosToSamples,
}

/// Row-stochastic matrix of conditional transport probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    matrix: Matrix,
    orientation: Orientation,
}

impl TransportPlan {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

/// `Z × d` prototypes owned by one party, one row per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub owner_party: u32,
    prototypes: Matrix,
}

impl PrototypeSet {
    pub fn new(owner_party: u32, prototypes: Matrix) -> Result<Self> {
        if prototypes.rows() == 0 || prototypes.cols() == 0 {
            return Err(Error::Domain("empty prototype matrix".into()));
        }
        if !prototypes.is_finite() {
            return Err(Error::NonFinite("prototype entries".into()));
        }
        Ok(Self {
            owner_party,
            prototypes,
        })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.prototypes
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn get(&self, z: usize) -> &[f64] {
        self.prototypes.row(z)
    }

    pub fn with_matrix(&self, prototypes: Matrix) -> Result<Self> {
        Self::new(self.owner_party, prototypes)
    }
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = l2_norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Class `z` starts at the normalised mean of its aligned representations.
/// Classes without aligned samples get a random unit vector from `seed`.
pub fn init_prototypes(
    owner_party: u32,
    aligned_reps_by_class: &[Matrix],
    d: usize,
    seed: u64,
) -> Result<PrototypeSet> {
    if d == 0 {
        return Err(Error::Domain("prototype dimension must be positive".into()));
    }
    let z = aligned_reps_by_class.len();
    let mut out = Matrix::zeros(z, d);
    for (class, reps) in aligned_reps_by_class.iter().enumerate() {
        if reps.rows() > 0 && reps.cols() != d {
            return Err(Error::Shape(format!(
                "class {class} representations have {} columns, expected {d}",
                reps.cols()
            )));
        }
        let mean: Vec<f64> = reps
            .col_sums()
            .into_iter()
            .map(|s| s / reps.rows().max(1) as f64)
            .collect();
        let norm = l2_norm(&mean);
        let row = if reps.rows() > 0 && norm > 0.0 {
            mean.into_iter().map(|v| v / norm).collect()
        } else {
            let mut rng = rng_for(seed, &[stream::PROTO_INIT, owner_party as u64, class as u64]);
            random_unit(d, &mut rng)
        };
        out.row_mut(class).copy_from_slice(&row);
    }
    PrototypeSet::new(owner_party, out)
}

/// `μ_z ← μ_z + (ρ / N_z) Σ f̂_z` for every class with aligned samples,
/// optionally followed by row renormalisation.
pub fn update_prototypes(
    protos: &PrototypeSet,
    adapted_aligned_reps: &Matrix,
    labels: &[usize],
    rho: f64,
    renormalize: bool,
) -> Result<PrototypeSet> {
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::Domain(format!("ρ = {rho} must be nonnegative")));
    }
    if adapted_aligned_reps.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} representations for {} labels",
            adapted_aligned_reps.rows(),
            labels.len()
        )));
    }
    if adapted_aligned_reps.rows() > 0 && adapted_aligned_reps.cols() != protos.dim() {
        return Err(Error::Shape("representation and prototype dims differ".into()));
    }
    if rho == 0.0 {
        return Ok(protos.clone());
    }
    let z = protos.num_classes();
    let d = protos.dim();
    let mut sums = Matrix::zeros(z, d);
    let mut counts = vec![0usize; z];
    for (row, &label) in adapted_aligned_reps.iter_rows().zip(labels) {
        if label >= z {
            return Err(Error::Domain(format!("label {label} out of range")));
        }
        counts[label] += 1;
        for (s, v) in sums.row_mut(label).iter_mut().zip(row) {
            *s += v;
        }
    }
    let mut out = protos.matrix().clone();
    for class in 0..z {
        if counts[class] == 0 {
            continue;
        }
        let step = rho / counts[class] as f64;
        let updated: Vec<f64> = out
            .row(class)
            .iter()
            .zip(sums.row(class))
            .map(|(m, s)| m + step * s)
            .collect();
        let row = if renormalize {
            let n = l2_norm(&updated);
            if n > 0.0 {
                updated.into_iter().map(|v| v / n).collect()
            } else {
                out.row(class).to_vec()
            }
        } else {
            updated
        };
        out.row_mut(class).copy_from_slice(&row);
    }
    protos.with_matrix(out)
}
