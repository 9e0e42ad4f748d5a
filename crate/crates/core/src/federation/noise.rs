use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::rng::{derive_seed, rng_for};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTarget {
    #[default]
    Off,
    Representations,
    Prototypes,
}

/// Additive Gaussian noise `κ · N(0, 1)` on one kind of upload or download.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kappa: f64,
    pub target: NoiseTarget,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn is_active(&self) -> bool {
        self.kappa != 0.0 && self.target != NoiseTarget::Off
    }

    /// Same scale and target with an independent child seed.
    pub fn for_stream(&self, labels: &[u64]) -> Self {
        Self {
            seed: derive_seed(self.seed, labels),
            ..*self
        }
    }
}

/// `m + κ·G` with `G` drawn from `cfg.seed`. Inactive configs return `m` untouched.
pub fn inject_noise(m: &Matrix, cfg: &NoiseConfig) -> Matrix {
    if !cfg.is_active() {
        return m.clone();
    }
    let mut rng = rng_for(cfg.seed, &[]);
    let mut out = m.clone();
    for v in out.data_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v += cfg.kappa * g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scale_is_identity() {
        let m = Matrix::from_rows(&[[1.5, -2.0], [0.1, 1e300]]).unwrap();
        let cfg = NoiseConfig {
            kappa: 0.0,
            target: NoiseTarget::Representations,
            seed: 3,
        };
        assert_eq!(inject_noise(&m, &cfg), m);
    }

    #[test]
    fn deterministic_and_calibrated() {
        let m = Matrix::zeros(1000, 1000);
        let cfg = NoiseConfig {
            kappa: 0.1,
            target: NoiseTarget::Prototypes,
            seed: 11,
        };
        let a = inject_noise(&m, &cfg);
        assert_eq!(a, inject_noise(&m, &cfg));
        let n = a.data().len() as f64;
        let mean = a.data().iter().sum::<f64>() / n;
        let std = (a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.0995..=0.1005).contains(&std), "{std}");
    }
}
