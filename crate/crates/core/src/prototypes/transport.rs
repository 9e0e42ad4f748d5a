use serde::{Deserialize, Serialize};

use super::{CostMode, Kernel, Orientation, PrototypeSet, TransportPlan};
use crate::error::{Error, Result};
use crate::numerics::{argmax, dot, l2_norm, log_sum_exp, Matrix};
use crate::priors::PriorVector;

/// Per-sample weights used when normalising a prototype's row over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchWeighting {
    /// Every sample weighs `1/B`.
    #[default]
    Uniform,
    /// A sample weighs the prior of its current pseudo-class (held constant).
    PseudoClassPrior,
}

/// Loss value, the plan it was computed under, and gradients with respect to
/// the raw (unnormalised) representations and prototypes.
#[derive(Clone, Debug)]
pub struct TransportLoss {
    pub value: f64,
    pub plan: TransportPlan,
    pub grad_reps: Matrix,
    pub grad_protos: Matrix,
}

struct Similarities {
    reps_unit: Matrix,
    rep_norms: Vec<f64>,
    protos_unit: Matrix,
    proto_norms: Vec<f64>,
    /// `B × Z` cosines.
    cos: Matrix,
}

fn normalize_rows(m: &Matrix, what: &str) -> Result<(Matrix, Vec<f64>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let n = l2_norm(m.row(r));
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateInput(format!("{what} row {r} has norm {n}")));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

fn similarities(protos: &PrototypeSet, reps: &Matrix) -> Result<Similarities> {
    if reps.cols() != protos.dim() {
        return Err(Error::Shape(format!(
            "representations have {} columns, prototypes {}",
            reps.cols(),
            protos.dim()
        )));
    }
    let (reps_unit, rep_norms) = normalize_rows(reps, "representation")?;
    let (protos_unit, proto_norms) = normalize_rows(protos.matrix(), "prototype")?;
    let cos = reps_unit.matmul_t(&protos_unit)?;
    Ok(Similarities {
        reps_unit,
        rep_norms,
        protos_unit,
        proto_norms,
        cos,
    })
}

fn check_prior(prior: &PriorVector, protos: &PrototypeSet) -> Result<()> {
    if prior.len() != protos.num_classes() {
        return Err(Error::Shape(format!(
            "prior over {} classes for {} prototypes",
            prior.len(),
            protos.num_classes()
        )));
    }
    Ok(())
}

/// `P[n, z] ∝ p_z · exp(scale · cos_nz)`, normalised over classes.
fn sample_plan(cos: &Matrix, prior: &[f64], scale: f64) -> Matrix {
    let mut out = Matrix::zeros(cos.rows(), cos.cols());
    for n in 0..cos.rows() {
        let s = cos.row(n);
        let max = s
            .iter()
            .zip(prior)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&c, _)| scale * c)
            .fold(f64::NEG_INFINITY, f64::max);
        let row = out.row_mut(n);
        let mut total = 0.0;
        for ((o, &c), &p) in row.iter_mut().zip(s).zip(prior) {
            *o = if p > 0.0 { p * (scale * c - max).exp() } else { 0.0 };
            total += *o;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// `Q[z, n] ∝ w_n · exp(scale · cos_nz)`, normalised over the batch.
fn proto_plan(cos: &Matrix, weights: &[f64], scale: f64) -> Matrix {
    let (b, z) = cos.shape();
    let mut out = Matrix::zeros(z, b);
    for k in 0..z {
        let max = (0..b)
            .filter(|&n| weights[n] > 0.0)
            .map(|n| scale * cos.get(n, k))
            .fold(f64::NEG_INFINITY, f64::max);
        let row = out.row_mut(k);
        let mut total = 0.0;
        for (n, o) in row.iter_mut().enumerate() {
            *o = if weights[n] > 0.0 {
                weights[n] * (scale * cos.get(n, k) - max).exp()
            } else {
                0.0
            };
            total += *o;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

fn batch_weights(
    weighting: BatchWeighting,
    cos: &Matrix,
    prior: &PriorVector,
    scale: f64,
) -> Vec<f64> {
    let b = cos.rows();
    match weighting {
        BatchWeighting::Uniform => vec![1.0 / b as f64; b],
        BatchWeighting::PseudoClassPrior => {
            let plan = sample_plan(cos, prior.probs(), scale);
            let w: Vec<f64> = plan
                .iter_rows()
                .map(|row| prior.probs()[argmax(row)])
                .collect();
            if w.iter().all(|&v| v == 0.0) {
                vec![1.0 / b as f64; b]
            } else {
                w
            }
        }
    }
}

/// Softmax over classes of the unweighted similarities (used by the
/// negative-log-probability cost).
fn class_softmax(cos: &Matrix, scale: f64) -> (Matrix, Vec<f64>) {
    let mut q = cos.scale(scale);
    let mut lse = Vec::with_capacity(q.rows());
    for n in 0..q.rows() {
        let l = log_sum_exp(q.row(n));
        q.row_mut(n).iter_mut().for_each(|v| *v = (*v - l).exp());
        lse.push(l);
    }
    (q, lse)
}

/// `B × Z` cost matrix.
fn cost_matrix(cos: &Matrix, mode: CostMode, scale: f64, lse: &[f64]) -> Matrix {
    match mode {
        CostMode::Cosine => cos.map(|c| 1.0 - c),
        CostMode::NegLogProb => {
            let mut c = cos.clone();
            for n in 0..c.rows() {
                let l = lse[n];
                c.row_mut(n).iter_mut().for_each(|v| *v = l - scale * *v);
            }
            c
        }
    }
}

/// Backpropagates `∂L/∂cos` through the cosine and both normalisations.
fn backprop_cos(sims: &Similarities, grad_cos: &Matrix) -> Result<(Matrix, Matrix)> {
    let d_reps_unit = grad_cos.matmul(&sims.protos_unit)?;
    let d_protos_unit = grad_cos.t_matmul(&sims.reps_unit)?;
    Ok((
        unnormalize_grad(&sims.reps_unit, &sims.rep_norms, &d_reps_unit),
        unnormalize_grad(&sims.protos_unit, &sims.proto_norms, &d_protos_unit),
    ))
}

/// For `x̄ = x/‖x‖`: `∂L/∂x = (g − x̄ (x̄ᵀg)) / ‖x‖`.
fn unnormalize_grad(unit: &Matrix, norms: &[f64], g: &Matrix) -> Matrix {
    let mut out = g.clone();
    for r in 0..g.rows() {
        let u = unit.row(r);
        let proj = dot(u, g.row(r));
        for (o, &uv) in out.row_mut(r).iter_mut().zip(u) {
            *o = (*o - uv * proj) / norms[r];
        }
    }
    out
}

/// Sample-to-prototype conditional plan; rows are samples.
pub fn plan_to_prototypes(
    protos: &PrototypeSet,
    prior: &PriorVector,
    reps: &Matrix,
    kernel: Kernel,
) -> Result<TransportPlan> {
    check_prior(prior, protos)?;
    let sims = similarities(protos, reps)?;
    Ok(TransportPlan {
        matrix: sample_plan(&sims.cos, prior.probs(), kernel.scale),
        orientation: Orientation::SamplesToProtos,
    })
}

/// Prototype-to-sample conditional plan over one batch; rows are prototypes.
pub fn plan_to_samples(
    protos: &PrototypeSet,
    prior: &PriorVector,
    reps: &Matrix,
    kernel: Kernel,
    weighting: BatchWeighting,
) -> Result<TransportPlan> {
    check_prior(prior, protos)?;
    if reps.rows() == 0 {
        return Err(Error::Domain("prototype-to-sample plan over an empty batch".into()));
    }
    let sims = similarities(protos, reps)?;
    let w = batch_weights(weighting, &sims.cos, prior, kernel.scale);
    Ok(TransportPlan {
        matrix: proto_plan(&sims.cos, &w, kernel.scale),
        orientation: Orientation::ProtosToSamples,
    })
}

/// Argmax of each sample's plan row.
pub fn pseudo_labels(
    protos: &PrototypeSet,
    prior: &PriorVector,
    reps: &Matrix,
    kernel: Kernel,
) -> Result<Vec<usize>> {
    let plan = plan_to_prototypes(protos, prior, reps, kernel)?;
    Ok(plan.matrix().iter_rows().map(argmax).collect())
}

/// Mean over samples of `Σ_z π(μ_z | f_n) c(μ_z, f_n)`, differentiated
/// through both the plan and the cost.
pub fn loss_f_to_mu(
    protos: &PrototypeSet,
    prior: &PriorVector,
    reps: &Matrix,
    kernel: Kernel,
    mode: CostMode,
) -> Result<TransportLoss> {
    check_prior(prior, protos)?;
    if reps.rows() == 0 {
        return Err(Error::Domain("transport loss over an empty batch".into()));
    }
    let sims = similarities(protos, reps)?;
    let scale = kernel.scale;
    let (b, z) = sims.cos.shape();
    let plan = sample_plan(&sims.cos, prior.probs(), scale);
    let (q, lse) = class_softmax(&sims.cos, scale);
    let cost = cost_matrix(&sims.cos, mode, scale, &lse);
    let inv_b = 1.0 / b as f64;

    let mut value = 0.0;
    let mut grad_cos = Matrix::zeros(b, z);
    for n in 0..b {
        let p = plan.row(n);
        let c = cost.row(n);
        let mean_cost = dot(p, c);
        value += mean_cost;
        let g = grad_cos.row_mut(n);
        for k in 0..z {
            // through π
            let mut gs = p[k] * (c[k] - mean_cost);
            let mut gc = 0.0;
            // through c
            match mode {
                CostMode::Cosine => gc = -p[k],
                CostMode::NegLogProb => gs += q.get(n, k) - p[k],
            }
            g[k] = inv_b * (scale * gs + gc);
        }
    }
    let (grad_reps, grad_protos) = backprop_cos(&sims, &grad_cos)?;
    Ok(TransportLoss {
        value: value * inv_b,
        plan: TransportPlan {
            matrix: plan,
            orientation: Orientation::SamplesToProtos,
        },
        grad_reps,
        grad_protos,
    })
}

/// `Σ_z p_z Σ_n π(f_n | μ_z) c(μ_z, f_n)` over one batch, differentiated
/// through both the plan and the cost. Batch weights are constants.
pub fn loss_mu_to_f(
    protos: &PrototypeSet,
    prior: &PriorVector,
    reps: &Matrix,
    kernel: Kernel,
    mode: CostMode,
    weighting: BatchWeighting,
) -> Result<TransportLoss> {
    check_prior(prior, protos)?;
    if reps.rows() == 0 {
        return Err(Error::Domain("transport loss over an empty batch".into()));
    }
    let sims = similarities(protos, reps)?;
    let scale = kernel.scale;
    let (b, z) = sims.cos.shape();
    let w = batch_weights(weighting, &sims.cos, prior, scale);
    let plan = proto_plan(&sims.cos, &w, scale);
    let (q, lse) = class_softmax(&sims.cos, scale);
    let cost = cost_matrix(&sims.cos, mode, scale, &lse);
    let p = prior.probs();

    let mut value = 0.0;
    let mut grad_s = Matrix::zeros(b, z);
    let mut grad_c = Matrix::zeros(b, z);
    for k in 0..z {
        if p[k] == 0.0 {
            continue;
        }
        let mean_cost: f64 = (0..b).map(|n| plan.get(k, n) * cost.get(n, k)).sum();
        value += p[k] * mean_cost;
        for n in 0..b {
            let qk = plan.get(k, n);
            let gs = grad_s.get(n, k) + p[k] * qk * (cost.get(n, k) - mean_cost);
            grad_s.set(n, k, gs);
            match mode {
                CostMode::Cosine => grad_c.set(n, k, -p[k] * qk),
                CostMode::NegLogProb => {
                    // c(n, k') = lse(S_n) − S_nk' depends on every S_nz.
                    grad_s.set(n, k, grad_s.get(n, k) - p[k] * qk);
                    let mass = p[k] * qk;
                    for j in 0..z {
                        grad_s.set(n, j, grad_s.get(n, j) + mass * q.get(n, j));
                    }
                }
            }
        }
    }
    let grad_cos = grad_s.zip_with(&grad_c, |s, c| scale * s + c)?;
    let (grad_reps, grad_protos) = backprop_cos(&sims, &grad_cos)?;
    Ok(TransportLoss {
        value,
        plan: TransportPlan {
            matrix: plan,
            orientation: Orientation::ProtosToSamples,
        },
        grad_reps,
        grad_protos,
    })
}
