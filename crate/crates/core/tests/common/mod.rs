//! Finite-difference oracles shared by the gradient tests and the
//! acceptance run. Each `*_error` function draws one random instance from
//! its seed and returns the worst norm-wise relative error it finds.

#![allow(dead_code)]

use evfl_core::aggregation::{FusionHead, GateParams};
use evfl_core::numerics::{GradBundle, Matrix, MlpParams};
use evfl_core::prototypes::{local_loss, loss_f_to_mu, loss_mu_to_f, BatchWeighting, LocalObjective};
use evfl_core::{Activation, CostMode, Kernel, PriorVector, PrototypeSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale(analytic).max(scale(numeric)).max(1e-8)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.random_range(1e-12..1.0);
            let v: f64 = rng.random();
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_prior(rng: &mut ChaCha8Rng, z: usize) -> PriorVector {
    PriorVector::from_weights((0..z).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap()
}

fn random_mlp(rng: &mut ChaCha8Rng, dims: &[usize]) -> MlpParams {
    MlpParams::init(dims, Activation::Identity, rng)
}

fn flat_params(p: &MlpParams) -> Vec<f64> {
    p.layers()
        .iter()
        .flat_map(|l| l.weight.data().iter().chain(&l.bias).copied().collect::<Vec<_>>())
        .collect()
}

fn flat_grads(g: &GradBundle) -> Vec<f64> {
    g.layers
        .iter()
        .flat_map(|l| l.weight.data().iter().chain(&l.bias).copied().collect::<Vec<_>>())
        .collect()
}

fn param_mut(p: &mut MlpParams, mut i: usize) -> &mut f64 {
    for l in p.layers_mut() {
        let w = l.weight.data().len();
        if i < w {
            return &mut l.weight.data_mut()[i];
        }
        i -= w;
        if i < l.bias.len() {
            return &mut l.bias[i];
        }
        i -= l.bias.len();
    }
    panic!("parameter index out of range");
}

fn fd_mlp(p: &MlpParams, f: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
    let n = flat_params(p).len();
    (0..n)
        .map(|i| {
            let mut plus = p.clone();
            *param_mut(&mut plus, i) += STEP;
            let mut minus = p.clone();
            *param_mut(&mut minus, i) -= STEP;
            (f(&plus) - f(&minus)) / (2.0 * STEP)
        })
        .collect()
}

fn fd_matrix(m: &Matrix, f: impl Fn(&Matrix) -> f64) -> Vec<f64> {
    (0..m.data().len())
        .map(|i| {
            let mut plus = m.clone();
            plus.data_mut()[i] += STEP;
            let mut minus = m.clone();
            minus.data_mut()[i] -= STEP;
            (f(&plus) - f(&minus)) / (2.0 * STEP)
        })
        .collect()
}

/// Local objective, extractor parameters. Even seeds use cosine costs, odd
/// seeds `−log q` costs.
pub fn local_loss_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, z, b) = (rng.random_range(2..=8), rng.random_range(2..=4), rng.random_range(1..=16));
    let input = rng.random_range(2..=6);
    let hidden = rng.random_range(2..=6);
    let extractor = random_mlp(&mut rng, &[input, hidden, d]);
    let batch = gaussian(&mut rng, b, input);
    let protos = PrototypeSet::new(1, gaussian(&mut rng, z, d)).unwrap();
    let prior = random_prior(&mut rng, z);
    let objective = LocalObjective {
        kernel: Kernel::new(rng.random_range(1.0..10.0)),
        cost: if seed % 2 == 0 { CostMode::Cosine } else { CostMode::NegLogProb },
        weighting: BatchWeighting::Uniform,
        phi: rng.random_range(0.0..0.5),
        confidence_threshold: None,
    };
    let out = local_loss(&extractor, &batch, &protos, &prior, &objective).unwrap();
    let numeric = fd_mlp(&extractor, |p| local_loss(p, &batch, &protos, &prior, &objective).unwrap().value);
    rel_err(&flat_grads(&out.grads), &numeric)
}

/// Both transport directions and both cost modes, with respect to the
/// representations and the prototypes.
pub fn transport_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let (d, z, b) = (rng.random_range(2..=8), rng.random_range(2..=4), rng.random_range(1..=16));
    let reps = gaussian(&mut rng, b, d);
    let protos_m = gaussian(&mut rng, z, d);
    let protos = PrototypeSet::new(1, protos_m.clone()).unwrap();
    let prior = random_prior(&mut rng, z);
    let kernel = Kernel::new(rng.random_range(1.0..10.0));
    let set = |p: &Matrix| PrototypeSet::new(1, p.clone()).unwrap();
    let mut worst: f64 = 0.0;
    for mode in [CostMode::Cosine, CostMode::NegLogProb] {
        let a = loss_f_to_mu(&protos, &prior, &reps, kernel, mode).unwrap();
        let num_r = fd_matrix(&reps, |r| loss_f_to_mu(&protos, &prior, r, kernel, mode).unwrap().value);
        let num_p = fd_matrix(&protos_m, |p| loss_f_to_mu(&set(p), &prior, &reps, kernel, mode).unwrap().value);
        worst = worst.max(rel_err(a.grad_reps.data(), &num_r)).max(rel_err(a.grad_protos.data(), &num_p));

        let w = BatchWeighting::Uniform;
        let m = loss_mu_to_f(&protos, &prior, &reps, kernel, mode, w).unwrap();
        let num_r = fd_matrix(&reps, |r| loss_mu_to_f(&protos, &prior, r, kernel, mode, w).unwrap().value);
        let num_p = fd_matrix(&protos_m, |p| loss_mu_to_f(&set(p), &prior, &reps, kernel, mode, w).unwrap().value);
        worst = worst.max(rel_err(m.grad_reps.data(), &num_r)).max(rel_err(m.grad_protos.data(), &num_p));
    }
    worst
}

fn random_head(rng: &mut ChaCha8Rng, m: usize, d: usize, z: usize) -> FusionHead {
    let adaptors = (0..m)
        .map(|i| {
            if i % 2 == 0 {
                random_mlp(rng, &[d, d])
            } else {
                random_mlp(rng, &[d, 3, d])
            }
        })
        .collect();
    let mut gate = GateParams::zeros(m, d);
    gate.weight = gaussian(rng, m * d, m);
    let classifier = random_mlp(rng, &[m * d, 5, z]);
    FusionHead {
        adaptors,
        gate,
        classifier,
    }
}

/// Global cross-entropy through classifier, gate, adaptors and the uploaded
/// representations.
pub fn head_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
    let (m, d, z, b) = (
        rng.random_range(1..=3),
        rng.random_range(2..=8),
        rng.random_range(2..=4),
        rng.random_range(1..=16),
    );
    let head = random_head(&mut rng, m, d, z);
    let reps: Vec<Matrix> = (0..m).map(|_| gaussian(&mut rng, b, d)).collect();
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..z)).collect();
    let (_, g) = head.loss_and_grads(&reps, &labels).unwrap();
    let loss = |h: &FusionHead| h.loss(&reps, &labels).unwrap();

    let num = fd_mlp(&head.classifier, |c| {
        loss(&FusionHead {
            classifier: c.clone(),
            ..head.clone()
        })
    });
    let mut worst = rel_err(&flat_grads(&g.classifier), &num);
    let num = fd_matrix(&head.gate.weight, |w| {
        let mut h = head.clone();
        h.gate.weight = w.clone();
        loss(&h)
    });
    worst = worst.max(rel_err(g.gate.data(), &num));
    for i in 0..m {
        let num = fd_mlp(&head.adaptors[i], |a| {
            let mut h = head.clone();
            h.adaptors[i] = a.clone();
            loss(&h)
        });
        worst = worst.max(rel_err(&flat_grads(&g.adaptors[i]), &num));
        let num = fd_matrix(&reps[i], |r| {
            let mut rs = reps.clone();
            rs[i] = r.clone();
            head.loss(&rs, &labels).unwrap()
        });
        worst = worst.max(rel_err(g.reps[i].data(), &num));
    }
    worst
}
