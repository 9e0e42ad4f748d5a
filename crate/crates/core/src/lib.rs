//! Desk-scale vertical federated learning with class prototypes.
//!
//! Parties hold disjoint feature blocks of the same samples. Each party
//! trains its extractor on unlabeled local data against class prototypes
//! under an EM-estimated class prior; the label-owning active party fuses
//! uploaded representations through per-party adaptors and a softmax gate,
//! trains the classifier, and refreshes the prototypes.

pub mod aggregation;
pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod numerics;
pub mod priors;
pub mod prototypes;

pub use error::{Error, Result};
pub use numerics::{Activation, GradBundle, Matrix, MlpParams};
pub use priors::PriorVector;
pub use prototypes::{CostMode, Kernel, PrototypeSet, TransportPlan};
