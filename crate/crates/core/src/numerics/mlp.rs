//! Dense feed-forward networks with hand-written backpropagation.
//!
//! A layer computes `act(x · W + b)` with `W` stored `in × out`. An MLP with
//! zero layers is the identity map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Activations recorded by [`MlpParams::forward`]: the input to every layer
/// and every pre-activation.
#[derive(Clone, Debug)]
pub struct Tape {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    batch_shape: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Per-layer gradients, shape-matched to an [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub layers: Vec<LayerGrad>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(shape_err(format!(
                    "layer {i}: bias length {} for {} outputs",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape_err(format!(
                    "layer {i} emits {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// The zero-layer network.
    pub fn identity_map() -> Self {
        Self { layers: Vec::new() }
    }

    /// A single `d → d` affine layer initialised to the identity.
    pub fn affine_identity(d: usize) -> Self {
        Self {
            layers: vec![Layer {
                weight: Matrix::identity(d),
                bias: vec![0.0; d],
                activation: Activation::Identity,
            }],
        }
    }

    /// Randomly initialised MLP with layer widths `dims[0] → dims[1] → …`.
    /// Hidden layers use relu; the last layer uses `output`.
    /// Weights and biases are uniform in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], output: Activation, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(dims.len().saturating_sub(1));
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut weight = Matrix::zeros(fan_in, fan_out);
            for v in weight.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
            let bias = (0..fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let activation = if i + 2 == dims.len() {
                output
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weight,
                bias,
                activation,
            });
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(Layer::in_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(Layer::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    /// `‖θ‖²` over all weights and biases.
    pub fn sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.frobenius_sq() + l.bias.iter().map(|b| b * b).sum::<f64>())
            .sum()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, Tape)> {
        if let Some(d) = self.input_dim() {
            if batch.cols() != d {
                return Err(shape_err(format!(
                    "batch has {} columns, network expects {d}",
                    batch.cols()
                )));
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weight)?;
            z.add_row_vector(&layer.bias)?;
            let out = match layer.activation {
                Activation::Relu => z.map(|v| v.max(0.0)),
                Activation::Identity => z.clone(),
            };
            inputs.push(std::mem::replace(&mut x, out));
            pre.push(z);
        }
        Ok((
            x,
            Tape {
                inputs,
                pre,
                batch_shape: batch.shape(),
            },
        ))
    }

    /// Forward pass without keeping the tape.
    pub fn apply(&self, batch: &Matrix) -> Result<Matrix> {
        self.forward(batch).map(|(out, _)| out)
    }

    /// Exact gradients of the scalar whose output-gradient is `output_grad`.
    /// Returns parameter gradients and the gradient with respect to the input batch.
    pub fn backward(&self, tape: &Tape, output_grad: &Matrix) -> Result<(GradBundle, Matrix)> {
        if tape.pre.len() != self.layers.len() {
            return Err(shape_err("tape was recorded by a different network"));
        }
        let expected = match tape.pre.last() {
            Some(z) => z.shape(),
            None => tape.batch_shape,
        };
        if output_grad.shape() != expected {
            return Err(shape_err(format!(
                "output gradient {}x{} for output {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                expected.0,
                expected.1
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                g = g.zip_with(&tape.pre[i], |gv, z| if z > 0.0 { gv } else { 0.0 })?;
            }
            let weight = tape.inputs[i].t_matmul(&g)?;
            let bias = g.col_sums();
            let next = g.matmul_t(&layer.weight)?;
            grads.push(LayerGrad { weight, bias });
            g = next;
        }
        grads.reverse();
        Ok((GradBundle { layers: grads }, g))
    }

    /// Flattened parameters, layer by layer, weights then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape_err(format!(
                "{} flat values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }
}

impl GradBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.in_dim(), l.out_dim()),
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// `self += scale · params`, used for L2 penalties.
    pub fn add_scaled_params(&mut self, params: &MlpParams, scale: f64) -> Result<()> {
        self.check(params)?;
        for (g, l) in self.layers.iter_mut().zip(&params.layers) {
            for (gv, pv) in g.weight.data_mut().iter_mut().zip(l.weight.data()) {
                *gv += scale * pv;
            }
            for (gv, pv) in g.bias.iter_mut().zip(&l.bias) {
                *gv += scale * pv;
            }
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    fn check(&self, params: &MlpParams) -> Result<()> {
        let ok = self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, l)| {
                g.weight.shape() == l.weight.shape() && g.bias.len() == l.bias.len()
            });
        if ok {
            Ok(())
        } else {
            Err(shape_err("gradient bundle does not match parameters"))
        }
    }
}

/// `p' = p − lr·(g + weight_decay·p)` elementwise.
pub fn sgd_step(
    params: &MlpParams,
    grads: &GradBundle,
    lr: f64,
    weight_decay: f64,
) -> Result<MlpParams> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grads, lr, weight_decay)?;
    Ok(out)
}

pub fn sgd_step_in_place(
    params: &mut MlpParams,
    grads: &GradBundle,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    grads.check(params)?;
    if lr == 0.0 {
        return Ok(());
    }
    for (l, g) in params.layers.iter_mut().zip(&grads.layers) {
        for (p, gv) in l.weight.data_mut().iter_mut().zip(g.weight.data()) {
            *p -= lr * (gv + weight_decay * *p);
        }
        for (p, gv) in l.bias.iter_mut().zip(&g.bias) {
            *p -= lr * (gv + weight_decay * *p);
        }
    }
    Ok(())
}

/// Plain SGD on a bare matrix (gate weights).
pub fn sgd_matrix(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(shape_err("matrix gradient shape mismatch"));
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::rng_for;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_for(seed, &[99]);
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_layer_passes_batch_through() {
        let net = MlpParams::affine_identity(3);
        let b = random_batch(5, 3, 1);
        assert_eq!(net.apply(&b).unwrap(), b);
        assert_eq!(MlpParams::identity_map().apply(&b).unwrap(), b);
    }

    #[test]
    fn zero_input_yields_bias_rows() {
        let bias = vec![0.5, -2.0];
        let net = MlpParams::new(vec![Layer {
            weight: random_batch(3, 2, 4),
            bias: bias.clone(),
            activation: Activation::Identity,
        }])
        .unwrap();
        let out = net.apply(&Matrix::zeros(4, 3)).unwrap();
        for row in out.iter_rows() {
            assert_eq!(row, bias.as_slice());
        }
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let mut rng = rng_for(11, &[]);
        let net = MlpParams::init(&[4, 5, 3], Activation::Identity, &mut rng);
        let x = random_batch(6, 4, 2);
        let out = net.apply(&x).unwrap();
        let (l0, l1) = (&net.layers()[0], &net.layers()[1]);
        for n in 0..6 {
            let mut h = [0.0; 5];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut acc = l0.bias[j];
                for i in 0..4 {
                    acc += x.get(n, i) * l0.weight.get(i, j);
                }
                *hj = if acc > 0.0 { acc } else { 0.0 };
            }
            for k in 0..3 {
                let mut acc = l1.bias[k];
                for (j, hj) in h.iter().enumerate() {
                    acc += hj * l1.weight.get(j, k);
                }
                assert!((acc - out.get(n, k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = rng_for(3, &[]);
        let net = MlpParams::init(&[3, 8, 2], Activation::Identity, &mut rng);
        let x = random_batch(7, 3, 5);
        assert_eq!(net.apply(&x).unwrap(), net.apply(&x).unwrap());
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = rng_for(5, &[]);
        let net = MlpParams::init(&[3, 4, 2], Activation::Identity, &mut rng);
        let x = random_batch(5, 3, 6);
        let (out, tape) = net.forward(&x).unwrap();
        let (g, gi) = net
            .backward(&tape, &Matrix::zeros(out.rows(), out.cols()))
            .unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_sum_loss_weight_grad_is_column_sum_outer() {
        // loss = Σ output; dW[i][j] = Σ_n x[n][i]
        let mut rng = rng_for(8, &[]);
        let net = MlpParams::init(&[3, 2], Activation::Identity, &mut rng);
        let x = random_batch(4, 3, 9);
        let (out, tape) = net.forward(&x).unwrap();
        let (g, _) = net
            .backward(&tape, &Matrix::filled(out.rows(), out.cols(), 1.0))
            .unwrap();
        let colsum = x.col_sums();
        for i in 0..3 {
            for j in 0..2 {
                assert!((g.layers[0].weight.get(i, j) - colsum[i]).abs() < 1e-12);
            }
        }
        assert_eq!(g.layers[0].bias, vec![4.0, 4.0]);
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = rng_for(21, &[]);
        let mut net = MlpParams::init(&[3, 6, 4], Activation::Identity, &mut rng);
        let x = random_batch(5, 3, 22);
        let c = random_batch(5, 4, 23);
        // loss = Σ c ⊙ out²/2 is a nonlinear scalar of the output.
        let loss = |n: &MlpParams, x: &Matrix| -> f64 {
            let o = n.apply(x).unwrap();
            o.data()
                .iter()
                .zip(c.data())
                .map(|(a, b)| 0.5 * b * a * a)
                .sum()
        };
        let (out, tape) = net.forward(&x).unwrap();
        let dout = out.zip_with(&c, |a, b| a * b).unwrap();
        let (g, gx) = net.backward(&tape, &dout).unwrap();

        let flat = net.to_flat();
        let analytic = g.to_flat();
        let h = 1e-5;
        for i in 0..flat.len() {
            let mut p = flat.clone();
            p[i] += h;
            net.set_flat(&p).unwrap();
            let up = loss(&net, &x);
            p[i] -= 2.0 * h;
            net.set_flat(&p).unwrap();
            let down = loss(&net, &x);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!((fd - analytic[i]).abs() / denom < 1e-4, "param {i}");
        }
        net.set_flat(&flat).unwrap();
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let up = loss(&net, &xp);
            xp.data_mut()[i] -= 2.0 * h;
            let down = loss(&net, &xp);
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(gx.data()[i].abs()).max(1e-6);
            assert!((fd - gx.data()[i]).abs() / denom < 1e-4, "input {i}");
        }
    }

    #[test]
    fn shape_errors() {
        let net = MlpParams::affine_identity(3);
        assert!(net.forward(&Matrix::zeros(2, 4)).is_err());
        let (_, tape) = net.forward(&Matrix::zeros(2, 3)).unwrap();
        assert!(net.backward(&tape, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut net = MlpParams::new(vec![Layer {
            weight: Matrix::filled(1, 1, 1.0),
            bias: vec![1.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let grads = GradBundle {
            layers: vec![LayerGrad {
                weight: Matrix::filled(1, 1, 0.5),
                bias: vec![0.5],
            }],
        };
        assert_eq!(sgd_step(&net, &grads, 0.0, 0.1).unwrap(), net);
        let zero = GradBundle::zeros_like(&net);
        assert_eq!(sgd_step(&net, &zero, 0.3, 0.0).unwrap(), net);
        net = sgd_step(&net, &grads, 0.1, 0.1).unwrap();
        assert!((net.layers()[0].weight.get(0, 0) - 0.94).abs() < 1e-15);
        assert!((net.layers()[0].bias[0] - 0.94).abs() < 1e-15);
    }
}
