//! Active-party fusion of uploaded representations.
//!
//! Each party's representation passes through its own dimension-preserving
//! adaptor. A single softmax gate over the concatenated adapted features
//! emits one weight per party and sample; each party's block is scaled by
//! its weight and the blocks are concatenated for the classifier.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{
    argmax, cosine_similarity, log_sum_exp, softmax_rows, GradBundle, Matrix, MlpParams, Tape,
};
use crate::prototypes::PrototypeSet;

/// Gate weight matrix, `(M·d) × M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub weight: Matrix,
}

impl GateParams {
    /// All-zero gate: uniform `1/M` weights for every input.
    pub fn zeros(parties: usize, d: usize) -> Self {
        Self {
            weight: Matrix::zeros(parties * d, parties),
        }
    }

    pub fn parties(&self) -> usize {
        self.weight.cols()
    }
}

/// Gate-scaled concatenation plus the per-sample gate weights that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedBatch {
    pub fused: Matrix,
    pub weights: Matrix,
}

/// Applies a party's adaptor; the output keeps the input dimension.
pub fn adapt(rep: &Matrix, adaptor: &MlpParams) -> Result<Matrix> {
    let out = adaptor.apply(rep)?;
    if out.cols() != rep.cols() {
        return Err(shape_err(format!(
            "adaptor maps dimension {} to {}",
            rep.cols(),
            out.cols()
        )));
    }
    Ok(out)
}

/// Softmax over the `M` gate logits of each sample.
pub fn gate_weights(adapted_concat: &Matrix, gate: &GateParams) -> Result<Matrix> {
    if adapted_concat.cols() != gate.weight.rows() {
        return Err(shape_err(format!(
            "gate expects {} features, got {}",
            gate.weight.rows(),
            adapted_concat.cols()
        )));
    }
    Ok(softmax_rows(&adapted_concat.matmul(&gate.weight)?))
}

/// Scales party `m`'s block row-wise by weight column `m` and concatenates.
pub fn fuse(adapted_blocks: &[Matrix], weights: &Matrix) -> Result<FusedBatch> {
    let n = weights.rows();
    if weights.cols() != adapted_blocks.len() {
        return Err(shape_err(format!(
            "{} weight columns for {} blocks",
            weights.cols(),
            adapted_blocks.len()
        )));
    }
    let mut scaled = Vec::with_capacity(adapted_blocks.len());
    for (m, block) in adapted_blocks.iter().enumerate() {
        if block.rows() != n {
            return Err(shape_err(format!(
                "block {m} has {} rows, expected {n}",
                block.rows()
            )));
        }
        let mut b = block.clone();
        for r in 0..n {
            let w = weights.get(r, m);
            b.row_mut(r).iter_mut().for_each(|v| *v *= w);
        }
        scaled.push(b);
    }
    Ok(FusedBatch {
        fused: Matrix::hcat(&scaled)?,
        weights: weights.clone(),
    })
}

/// Mean cross-entropy of `softmax(logits)` and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(shape_err(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 {
        return Err(Error::Domain("cross-entropy over an empty batch".into()));
    }
    let z = logits.cols();
    let n = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = softmax_rows(logits);
    for (r, &y) in labels.iter().enumerate() {
        if y >= z {
            return Err(Error::Domain(format!("label {y} outside [0, {z})")));
        }
        loss += log_sum_exp(logits.row(r)) - logits.get(r, y);
        grad.set(r, y, grad.get(r, y) - 1.0);
    }
    grad.data_mut().iter_mut().for_each(|v| *v /= n);
    Ok((loss / n, grad))
}

/// Everything the active party trains: adaptors, gate, classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionHead {
    pub adaptors: Vec<MlpParams>,
    pub gate: GateParams,
    pub classifier: MlpParams,
}

#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub adaptors: Vec<GradBundle>,
    pub gate: Matrix,
    pub classifier: GradBundle,
    /// Gradients with respect to each party's uploaded representations.
    pub reps: Vec<Matrix>,
}

/// Intermediate values of one head evaluation.
pub struct HeadForward {
    pub adapted: Vec<Matrix>,
    adapt_tapes: Vec<Tape>,
    concat: Matrix,
    pub fused: FusedBatch,
    classifier_tape: Tape,
    pub logits: Matrix,
}

impl FusionHead {
    pub fn parties(&self) -> usize {
        self.adaptors.len()
    }

    pub fn forward(&self, reps: &[Matrix]) -> Result<HeadForward> {
        if reps.len() != self.adaptors.len() {
            return Err(shape_err(format!(
                "{} representation blocks for {} adaptors",
                reps.len(),
                self.adaptors.len()
            )));
        }
        let mut adapted = Vec::with_capacity(reps.len());
        let mut adapt_tapes = Vec::with_capacity(reps.len());
        for (rep, adaptor) in reps.iter().zip(&self.adaptors) {
            let (out, tape) = adaptor.forward(rep)?;
            if out.cols() != rep.cols() {
                return Err(shape_err("adaptor must preserve dimension"));
            }
            adapted.push(out);
            adapt_tapes.push(tape);
        }
        let concat = Matrix::hcat(&adapted)?;
        let weights = gate_weights(&concat, &self.gate)?;
        let fused = fuse(&adapted, &weights)?;
        let (logits, classifier_tape) = self.classifier.forward(&fused.fused)?;
        Ok(HeadForward {
            adapted,
            adapt_tapes,
            concat,
            fused,
            classifier_tape,
            logits,
        })
    }

    /// Mean cross-entropy and exact gradients through classifier, fusion,
    /// gate and adaptors.
    pub fn loss_and_grads(&self, reps: &[Matrix], labels: &[usize]) -> Result<(f64, HeadGrads)> {
        let fwd = self.forward(reps)?;
        let (loss, dlogits) = cross_entropy(&fwd.logits, labels)?;
        let grads = self.backward(&fwd, &dlogits)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, reps: &[Matrix], labels: &[usize]) -> Result<f64> {
        let fwd = self.forward(reps)?;
        Ok(cross_entropy(&fwd.logits, labels)?.0)
    }

    fn backward(&self, fwd: &HeadForward, dlogits: &Matrix) -> Result<HeadGrads> {
        let (classifier, dfused) = self.classifier.backward(&fwd.classifier_tape, dlogits)?;
        let m = self.parties();
        let n = fwd.logits.rows();
        let weights = &fwd.fused.weights;

        // Direct path (block scaling) and the gradient on the gate weights.
        let mut d_adapted: Vec<Matrix> = Vec::with_capacity(m);
        let mut d_weights = Matrix::zeros(n, m);
        let mut offset = 0;
        for (k, block) in fwd.adapted.iter().enumerate() {
            let d = block.cols();
            let mut g = Matrix::zeros(n, d);
            for r in 0..n {
                let df = &dfused.row(r)[offset..offset + d];
                let w = weights.get(r, k);
                let mut acc = 0.0;
                for ((gv, &dv), &a) in g.row_mut(r).iter_mut().zip(df).zip(block.row(r)) {
                    *gv = w * dv;
                    acc += dv * a;
                }
                d_weights.set(r, k, acc);
            }
            d_adapted.push(g);
            offset += d;
        }

        // Softmax backward onto the gate logits.
        let mut d_logits_gate = Matrix::zeros(n, m);
        for r in 0..n {
            let w = weights.row(r);
            let dw = d_weights.row(r);
            let inner: f64 = w.iter().zip(dw).map(|(a, b)| a * b).sum();
            for (o, (&wi, &dwi)) in d_logits_gate.row_mut(r).iter_mut().zip(w.iter().zip(dw)) {
                *o = wi * (dwi - inner);
            }
        }
        let gate = fwd.concat.t_matmul(&d_logits_gate)?;
        let d_concat = d_logits_gate.matmul_t(&self.gate.weight)?;

        let mut adaptors = Vec::with_capacity(m);
        let mut reps = Vec::with_capacity(m);
        let mut offset = 0;
        for (k, adaptor) in self.adaptors.iter().enumerate() {
            let d = d_adapted[k].cols();
            let total = d_adapted[k].add(&d_concat.col_block(offset, d))?;
            let (g, drep) = adaptor.backward(&fwd.adapt_tapes[k], &total)?;
            adaptors.push(g);
            reps.push(drep);
            offset += d;
        }
        Ok(HeadGrads {
            adaptors,
            gate,
            classifier,
            reps,
        })
    }

    /// Adapted representations for every party.
    pub fn adapt_all(&self, reps: &[Matrix]) -> Result<Vec<Matrix>> {
        reps.iter()
            .zip(&self.adaptors)
            .map(|(r, a)| adapt(r, a))
            .collect()
    }

    /// Softmax-head predictions. Classes marked `false` in `known` are never
    /// emitted (a head trained without a class cannot score it).
    pub fn predict(&self, reps: &[Matrix], known: Option<&[bool]>) -> Result<Vec<usize>> {
        let fwd = self.forward(reps)?;
        Ok(masked_argmax(&fwd.logits, known))
    }
}

pub(crate) fn masked_argmax(logits: &Matrix, known: Option<&[bool]>) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| match known {
            None => argmax(row),
            Some(mask) => {
                let mut best: Option<usize> = None;
                for (z, &v) in row.iter().enumerate() {
                    if mask.get(z).copied().unwrap_or(false)
                        && best.is_none_or(|b| v > row[b])
                    {
                        best = Some(z);
                    }
                }
                best.unwrap_or_else(|| argmax(row))
            }
        })
        .collect()
}

/// Per sample, `argmax_z Σ_m cos(f̂^m, μ^m_z)`; ties go to the lowest class id.
/// Zero-norm representations contribute nothing.
pub fn prototype_nn_predict(
    adapted_reps_by_party: &[Matrix],
    prototype_sets: &[PrototypeSet],
) -> Result<Vec<usize>> {
    if adapted_reps_by_party.len() != prototype_sets.len() || prototype_sets.is_empty() {
        return Err(shape_err(format!(
            "{} representation blocks for {} prototype sets",
            adapted_reps_by_party.len(),
            prototype_sets.len()
        )));
    }
    let n = adapted_reps_by_party[0].rows();
    let z = prototype_sets[0].num_classes();
    let mut scores = Matrix::zeros(n, z);
    for (reps, protos) in adapted_reps_by_party.iter().zip(prototype_sets) {
        if reps.rows() != n || protos.num_classes() != z {
            return Err(shape_err("inconsistent party blocks or class counts"));
        }
        for r in 0..n {
            for k in 0..z {
                let s = match cosine_similarity(reps.row(r), protos.get(k)) {
                    Ok(s) => s,
                    Err(Error::DegenerateInput(_)) => 0.0,
                    Err(e) => return Err(e),
                };
                scores.set(r, k, scores.get(r, k) + s);
            }
        }
    }
    Ok(scores.iter_rows().map(argmax).collect())
}
