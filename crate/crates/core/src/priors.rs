//! Class priors: EM estimation of a party's local prior, averaging into a
//! global prior at the active party, and the γ-weighted mixture of the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::prototypes::{plan_to_prototypes, Kernel, PrototypeSet};

const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex over `Z` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorVector(Vec<f64>);

impl PriorVector {
    /// Validates an already-normalised probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_weights(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("prior sums to {sum}, not 1")));
        }
        Ok(Self(probs))
    }

    /// Normalises nonnegative weights onto the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        let sum: f64 = weights.iter().sum();
        Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(z: usize) -> Self {
        Self(vec![1.0 / z as f64; z])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Total-variation distance `½ Σ |p − q|`.
    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * self
            .0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Domain("prior over zero classes".into()));
    }
    if let Some(v) = w.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::Domain(format!("invalid prior weight {v}")));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::DegeneratePrior("all prior weights are zero".into()));
    }
    Ok(())
}

/// γ together with the pseudo-class counts it was derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParam {
    pub value: f64,
    pub source_counts: Vec<usize>,
}

/// Uniform `1/Z` starting prior.
pub fn init_prior(z: usize) -> Result<PriorVector> {
    if z < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {z}")));
    }
    Ok(PriorVector::uniform(z))
}

/// One EM step: the mean over the batch of the sample-to-prototype plan
/// built with `prev_prior`.
pub fn estimate_local_prior(
    batch_reps: &Matrix,
    protos: &PrototypeSet,
    prev_prior: &PriorVector,
    kernel: Kernel,
) -> Result<PriorVector> {
    if batch_reps.rows() == 0 {
        return Err(Error::Domain("prior estimation on an empty batch".into()));
    }
    let plan = plan_to_prototypes(protos, prev_prior, batch_reps, kernel)?;
    let mut mean = plan.matrix().col_sums();
    let b = batch_reps.rows() as f64;
    mean.iter_mut().for_each(|v| *v /= b);
    PriorVector::from_weights(mean)
}

/// Repeats [`estimate_local_prior`] from `start`, stopping once successive
/// estimates move less than `tol` in total variation. Returns the estimate
/// and the number of iterations performed.
pub fn iterate_local_prior(
    batch_reps: &Matrix,
    protos: &PrototypeSet,
    start: &PriorVector,
    kernel: Kernel,
    max_iters: usize,
    tol: f64,
) -> Result<(PriorVector, usize)> {
    let mut current = start.clone();
    for it in 1..=max_iters {
        let next = estimate_local_prior(batch_reps, protos, &current, kernel)?;
        let moved = next.total_variation(current.probs());
        current = next;
        if moved < tol {
            return Ok((current, it));
        }
    }
    Ok((current, max_iters))
}

/// Arithmetic mean of local priors, renormalised.
pub fn average_global_prior(local_priors: &[PriorVector]) -> Result<PriorVector> {
    let Some(first) = local_priors.first() else {
        return Err(Error::Domain("no local priors to average".into()));
    };
    let z = first.len();
    let mut sum = vec![0.0; z];
    for p in local_priors {
        if p.len() != z {
            return Err(Error::Shape(format!(
                "prior of length {} averaged with length {z}",
                p.len()
            )));
        }
        for (s, v) in sum.iter_mut().zip(p.probs()) {
            *s += v;
        }
    }
    let m = local_priors.len() as f64;
    PriorVector::from_weights(sum.into_iter().map(|s| s / m).collect())
}

/// γ = (count of the least-populated class over all Z classes) / total.
/// A class with no members forces γ = 0.
pub fn compute_gamma(pseudo_label_counts: &[usize]) -> Result<GammaParam> {
    let total: usize = pseudo_label_counts.iter().sum();
    if total == 0 {
        return Err(Error::Domain("γ from an empty count vector".into()));
    }
    let min = pseudo_label_counts.iter().copied().min().unwrap_or(0);
    Ok(GammaParam {
        value: min as f64 / total as f64,
        source_counts: pseudo_label_counts.to_vec(),
    })
}

/// `γ·global + (1 − γ)·local`.
pub fn mix_prior(local: &PriorVector, global: &PriorVector, gamma: f64) -> Result<PriorVector> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("γ = {gamma} outside [0, 1]")));
    }
    if local.len() != global.len() {
        return Err(Error::Shape("local and global priors differ in length".into()));
    }
    let mixed = local
        .probs()
        .iter()
        .zip(global.probs())
        .map(|(l, g)| gamma * g + (1.0 - gamma) * l)
        .collect();
    PriorVector::from_weights(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototypes::PrototypeSet;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn uniform_init() {
        assert_eq!(init_prior(2).unwrap().probs(), &[0.5, 0.5]);
        assert!(close(init_prior(10).unwrap().probs(), &[0.1; 10], 1e-15));
        let p = init_prior(8).unwrap();
        assert_eq!(p.probs().iter().sum::<f64>(), 1.0);
        assert!(init_prior(1).is_err());
    }

    #[test]
    fn all_zero_prior_is_degenerate() {
        assert!(matches!(
            PriorVector::from_weights(vec![0.0, 0.0]),
            Err(Error::DegeneratePrior(_))
        ));
    }

    #[test]
    fn estimate_with_uniform_plan_stays_uniform() {
        // Representations orthogonal to both prototypes give identical similarities.
        let protos = PrototypeSet::new(0, Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap()).unwrap();
        let reps = Matrix::from_rows(&[[0.0, 0.0, 1.0], [0.0, 0.0, -2.0]]).unwrap();
        let p = estimate_local_prior(&reps, &protos, &PriorVector::uniform(2), Kernel::new(1.0)).unwrap();
        assert!(close(p.probs(), &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn estimate_with_one_hot_plan() {
        let protos = PrototypeSet::new(0, Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let reps = Matrix::from_rows(&[[1.0, 0.2], [0.7, -0.1]]).unwrap();
        let prior = PriorVector::new(vec![1.0, 0.0]).unwrap();
        let p = estimate_local_prior(&reps, &protos, &prior, Kernel::new(1.0)).unwrap();
        assert_eq!(p.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn averaging() {
        let a = PriorVector::new(vec![1.0, 0.0]).unwrap();
        let b = PriorVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(average_global_prior(&[a.clone(), b]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(average_global_prior(&[a.clone(), a.clone()]).unwrap(), a);
        assert!(average_global_prior(&[]).is_err());

        let vs = [
            vec![0.2, 0.3, 0.5],
            vec![0.6, 0.1, 0.3],
            vec![0.05, 0.9, 0.05],
        ];
        let priors: Vec<_> = vs.iter().map(|v| PriorVector::new(v.clone()).unwrap()).collect();
        let avg = average_global_prior(&priors).unwrap();
        for k in 0..3 {
            let straight = (vs[0][k] + vs[1][k] + vs[2][k]) / 3.0;
            assert!((avg.probs()[k] - straight).abs() < 1e-15);
        }
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(compute_gamma(&[100, 0]).unwrap().value, 0.0);
        assert_eq!(compute_gamma(&[50, 50]).unwrap().value, 0.5);
        assert!((compute_gamma(&[90, 10]).unwrap().value - 0.1).abs() < 1e-15);
        assert!(compute_gamma(&[0, 0]).is_err());
    }

    #[test]
    fn mixing_examples() {
        let local = PriorVector::new(vec![0.8, 0.2]).unwrap();
        let global = PriorVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(mix_prior(&local, &global, 0.0).unwrap(), local);
        assert_eq!(mix_prior(&local, &global, 1.0).unwrap(), global);
        let m = mix_prior(&local, &global, 0.5).unwrap();
        assert!(close(m.probs(), &[0.65, 0.35], 1e-15));
        assert!(mix_prior(&local, &global, 1.5).is_err());
    }
}
