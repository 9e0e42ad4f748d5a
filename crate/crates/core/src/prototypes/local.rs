use serde::{Deserialize, Serialize};

use super::transport::{loss_f_to_mu, loss_mu_to_f, plan_to_prototypes, BatchWeighting};
use super::{CostMode, Kernel, PrototypeSet};
use crate::error::{Error, Result};
use crate::numerics::{GradBundle, Matrix, MlpParams};
use crate::priors::PriorVector;

/// Knobs of the local (per-party) objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalObjective {
    pub kernel: Kernel,
    pub cost: CostMode,
    pub weighting: BatchWeighting,
    /// L2 weight on the extractor parameters.
    pub phi: f64,
    /// Drop samples whose largest plan entry is below this before computing
    /// the losses. `None` keeps every sample.
    pub confidence_threshold: Option<f64>,
}

impl Default for LocalObjective {
    fn default() -> Self {
        Self {
            kernel: Kernel::default(),
            cost: CostMode::Cosine,
            weighting: BatchWeighting::Uniform,
            phi: 0.1,
            confidence_threshold: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalLoss {
    pub value: f64,
    pub f_to_mu: f64,
    pub mu_to_f: f64,
    pub regularization: f64,
    pub grads: GradBundle,
    /// Samples that passed the confidence filter.
    pub kept: usize,
}

/// `L_f→μ + L_μ→f + (φ/2)‖θ‖²` over one unaligned batch, with the exact
/// extractor gradient. Prototypes and prior are constants.
pub fn local_loss(
    extractor: &MlpParams,
    unaligned_batch: &Matrix,
    protos: &PrototypeSet,
    prior: &PriorVector,
    objective: &LocalObjective,
) -> Result<LocalLoss> {
    if objective.phi < 0.0 {
        return Err(Error::Domain(format!("φ = {} must be nonnegative", objective.phi)));
    }
    let (reps, tape) = extractor.forward(unaligned_batch)?;

    let keep: Vec<usize> = match objective.confidence_threshold {
        Some(theta) if reps.rows() > 0 => {
            let plan = plan_to_prototypes(protos, prior, &reps, objective.kernel)?;
            plan.matrix()
                .iter_rows()
                .enumerate()
                .filter(|(_, row)| row.iter().copied().fold(0.0, f64::max) >= theta)
                .map(|(i, _)| i)
                .collect()
        }
        _ => (0..reps.rows()).collect(),
    };

    let regularization = 0.5 * objective.phi * extractor.sq_norm();
    let mut grad_reps = Matrix::zeros(reps.rows(), reps.cols());
    let (mut f_to_mu, mut mu_to_f) = (0.0, 0.0);
    if !keep.is_empty() {
        let kept = reps.select_rows(&keep);
        let a = loss_f_to_mu(protos, prior, &kept, objective.kernel, objective.cost)?;
        let b = loss_mu_to_f(
            protos,
            prior,
            &kept,
            objective.kernel,
            objective.cost,
            objective.weighting,
        )?;
        f_to_mu = a.value;
        mu_to_f = b.value;
        for (i, &row) in keep.iter().enumerate() {
            let dst = grad_reps.row_mut(row);
            for ((d, ga), gb) in dst.iter_mut().zip(a.grad_reps.row(i)).zip(b.grad_reps.row(i)) {
                *d = ga + gb;
            }
        }
    }
    let (mut grads, _) = extractor.backward(&tape, &grad_reps)?;
    grads.add_scaled_params(extractor, objective.phi)?;
    Ok(LocalLoss {
        value: f_to_mu + mu_to_f + regularization,
        f_to_mu,
        mu_to_f,
        regularization,
        grads,
        kept: keep.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_extractor_has_empty_grads_and_raw_losses() {
        let protos = PrototypeSet::new(1, Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let batch = Matrix::from_rows(&[[0.4, 0.9], [1.0, -0.2], [0.3, 0.3]]).unwrap();
        let prior = PriorVector::uniform(2);
        let obj = LocalObjective::default();
        let out = local_loss(&MlpParams::identity_map(), &batch, &protos, &prior, &obj).unwrap();
        assert!(out.grads.is_empty());
        let a = loss_f_to_mu(&protos, &prior, &batch, obj.kernel, obj.cost).unwrap().value;
        let b = loss_mu_to_f(&protos, &prior, &batch, obj.kernel, obj.cost, obj.weighting)
            .unwrap()
            .value;
        assert_eq!(out.value, a + b);
    }

    #[test]
    fn zero_when_transport_is_free_and_phi_zero() {
        let protos = PrototypeSet::new(1, Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let prior = PriorVector::new(vec![1.0, 0.0]).unwrap();
        let batch = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let obj = LocalObjective {
            phi: 0.0,
            ..LocalObjective::default()
        };
        let out = local_loss(&MlpParams::identity_map(), &batch, &protos, &prior, &obj).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn confidence_filter_drops_ambiguous_samples() {
        let protos = PrototypeSet::new(1, Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        let batch = Matrix::from_rows(&[[1.0, 1.0], [1.0, 0.0]]).unwrap();
        let obj = LocalObjective {
            confidence_threshold: Some(0.9),
            ..LocalObjective::default()
        };
        let out = local_loss(&MlpParams::identity_map(), &batch, &protos, &PriorVector::uniform(2), &obj)
            .unwrap();
        assert_eq!(out.kept, 1);
    }
}
