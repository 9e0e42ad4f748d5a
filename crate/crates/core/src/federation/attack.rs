use crate::error::{shape_err, Error, Result};
use crate::numerics::{argmax, cosine_similarity, Matrix};
use crate::prototypes::PrototypeSet;

/// Fraction of samples whose most cosine-similar received prototype is the
/// true class. This is an offline evaluator holding the labels.
pub fn label_inference_attack(reps: &Matrix, protos: &PrototypeSet, true_labels: &[usize]) -> Result<f64> {
    if reps.rows() != true_labels.len() {
        return Err(shape_err(format!("{} reps for {} labels", reps.rows(), true_labels.len())));
    }
    if reps.rows() == 0 {
        return Err(Error::Domain("attack on zero samples".into()));
    }
    if reps.cols() != protos.dim() {
        return Err(shape_err("representation and prototype dims differ"));
    }
    let mut hits = 0usize;
    let mut scores = vec![0.0; protos.num_classes()];
    for (row, &y) in reps.iter_rows().zip(true_labels) {
        for (z, s) in scores.iter_mut().enumerate() {
            *s = match cosine_similarity(row, protos.get(z)) {
                Ok(v) => v,
                Err(Error::DegenerateInput(_)) => 0.0,
                Err(e) => return Err(e),
            };
        }
        hits += usize::from(argmax(&scores) == y);
    }
    Ok(hits as f64 / true_labels.len() as f64)
}
