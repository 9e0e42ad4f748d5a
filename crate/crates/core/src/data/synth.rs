use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::RawDataset;
use crate::error::{Error, Result};
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::{dot, l2_norm, Matrix};

/// Gaussian class clusters with unit isotropic noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class_counts: Vec<usize>,
    pub dim: usize,
    /// Minimum distance between any two class means.
    pub class_separation: f64,
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Class means with pairwise distance at least `sep`. For `Z ≤ D` they are
/// scaled orthonormal directions, so every pair sits exactly `sep` apart.
fn class_means<R: Rng + ?Sized>(z: usize, d: usize, sep: f64, rng: &mut R) -> Vec<Vec<f64>> {
    if z <= d {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(z);
        while basis.len() < z {
            let mut v = gaussian_vec(d, rng);
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, bi)| *x -= p * bi);
            }
            let n = l2_norm(&v);
            if n > 1e-8 {
                basis.push(v.into_iter().map(|x| x / n).collect());
            }
        }
        let s = sep / std::f64::consts::SQRT_2;
        basis.into_iter().map(|b| b.into_iter().map(|x| x * s).collect()).collect()
    } else {
        let dirs: Vec<Vec<f64>> = (0..z)
            .map(|_| {
                let v = gaussian_vec(d, rng);
                let n = l2_norm(&v).max(1e-12);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..z {
            for j in i + 1..z {
                let dist: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                min_dist = min_dist.min(dist);
            }
        }
        let s = if min_dist > 0.0 { sep / min_dist } else { 0.0 };
        dirs.into_iter().map(|v| v.into_iter().map(|x| x * s).collect()).collect()
    }
}

/// Deterministic synthetic dataset; rows are shuffled and ids are `s0, s1, ...`.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<RawDataset> {
    let z = spec.num_classes;
    let d = spec.dim;
    if d < 2 {
        return Err(Error::Config(format!("synthetic dimension {d} must be at least 2")));
    }
    if z < 2 {
        return Err(Error::Config(format!("{z} classes; at least 2 required")));
    }
    if spec.per_class_counts.len() != z {
        return Err(Error::Config(format!(
            "{} class counts for {z} classes",
            spec.per_class_counts.len()
        )));
    }
    if !(spec.class_separation >= 0.0 && spec.class_separation.is_finite()) {
        return Err(Error::Config("class separation must be finite and nonnegative".into()));
    }
    let mut rng = rng_for(seed, &[stream::SYNTH]);
    let means = class_means(z, d, spec.class_separation, &mut rng);
    let mut labels: Vec<usize> = spec
        .per_class_counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(labels.len() * d);
    for &y in &labels {
        for &m in &means[y] {
            let e: f64 = rng.sample(StandardNormal);
            data.push(m + e);
        }
    }
    let n = labels.len();
    RawDataset::new(
        Matrix::from_vec(n, d, data)?,
        labels,
        (0..n).map(|i| format!("s{i}")).collect(),
        z,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(counts: Vec<usize>, d: usize, sep: f64) -> SynthSpec {
        SynthSpec {
            num_classes: counts.len(),
            per_class_counts: counts,
            dim: d,
            class_separation: sep,
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let s = spec(vec![10, 10], 3, 10.0);
        assert_eq!(synth_dataset(&s, 4).unwrap(), synth_dataset(&s, 4).unwrap());
        assert_ne!(synth_dataset(&s, 4).unwrap(), synth_dataset(&s, 5).unwrap());
    }

    #[test]
    fn means_are_separated() {
        let mut rng = rng_for(1, &[]);
        for (z, d) in [(3, 5), (4, 4), (6, 2)] {
            let means = class_means(z, d, 8.0, &mut rng);
            for i in 0..z {
                for j in i + 1..z {
                    let dist: f64 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!(dist >= 8.0 - 1e-9, "{z} {d} {dist}");
                }
            }
        }
        let means = class_means(3, 4, 0.0, &mut rng);
        assert!(means.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_one_dimension() {
        assert!(matches!(synth_dataset(&spec(vec![1, 1], 1, 1.0), 0), Err(Error::Config(_))));
    }
}
