//! Deterministic dense linear algebra, MLPs with analytic gradients, and SGD.

pub mod matrix;
pub mod mlp;
pub mod ops;
pub mod rng;

pub use matrix::{dot, l2_norm, Matrix};
pub use mlp::{sgd_matrix, sgd_step, sgd_step_in_place, Activation, GradBundle, Layer, LayerGrad, MlpParams, Tape};
pub use ops::{argmax, cosine_dissimilarity, cosine_similarity, entropy, log_sum_exp, softmax, softmax_rows};
