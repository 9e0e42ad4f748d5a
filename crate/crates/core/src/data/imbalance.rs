use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::PartyDataset;
use crate::error::{Error, Result};
use crate::numerics::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RareMode {
    /// Keep only `keep_count` aligned rows of the class.
    FewShot { keep_count: usize },
    /// Remove the class from the aligned pool.
    ZeroShot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RareClass {
    pub class: usize,
    #[serde(flatten)]
    pub mode: RareMode,
}

/// Scenario transform applied to the training pools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    /// Majority:minority ratio Γ for each party's unaligned pool; `None`
    /// leaves the pools untouched.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Majority classes drawn per party.
    #[serde(default = "one")]
    pub num_majority: usize,
    #[serde(default)]
    pub rare_classes: Vec<RareClass>,
}

fn one() -> usize {
    1
}

impl Default for ImbalanceSpec {
    fn default() -> Self {
        Self {
            gamma: None,
            num_majority: 1,
            rare_classes: Vec::new(),
        }
    }
}

impl ImbalanceSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if let Some(g) = self.gamma {
            if !(g >= 1.0 && g.is_finite()) {
                return Err(Error::Config(format!("Γ = {g} must be a finite ratio ≥ 1")));
            }
            if self.num_majority == 0 || self.num_majority >= num_classes {
                return Err(Error::Config(format!(
                    "num_majority = {} must lie in [1, {num_classes})",
                    self.num_majority
                )));
            }
        }
        for rc in &self.rare_classes {
            if rc.class >= num_classes {
                return Err(Error::Config(format!("rare class {} does not exist", rc.class)));
            }
            if let RareMode::FewShot { keep_count: 0 } = rc.mode {
                return Err(Error::Config(format!("few-shot class {} needs keep_count ≥ 1", rc.class)));
            }
        }
        Ok(())
    }

    pub fn zero_shot_classes(&self) -> Vec<usize> {
        self.rare_classes
            .iter()
            .filter(|rc| rc.mode == RareMode::ZeroShot)
            .map(|rc| rc.class)
            .collect()
    }
}

fn positions_by_class(rows: &[usize], labels: &[usize], z: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); z];
    for (pos, &r) in rows.iter().enumerate() {
        out[labels[r]].push(pos);
    }
    out
}

fn restrict(party: &mut PartyDataset, aligned_keep: Option<&[usize]>, unaligned_keep: Option<&[usize]>) {
    if let Some(keep) = aligned_keep {
        party.aligned = party.aligned.select_rows(keep);
        party.aligned_rows = keep.iter().map(|&p| party.aligned_rows[p]).collect();
        if let Some(l) = party.labels_aligned.as_mut() {
            *l = keep.iter().map(|&p| l[p]).collect();
        }
    }
    if let Some(keep) = unaligned_keep {
        party.unaligned = party.unaligned.select_rows(keep);
        party.unaligned_rows = keep.iter().map(|&p| party.unaligned_rows[p]).collect();
    }
}

/// Subsamples every party's unaligned pool to the Γ ratio around randomly
/// drawn per-party majority classes, then thins rare classes in the shared
/// aligned pool. `labels` are the ground-truth training labels indexed by
/// row. Returns the majority classes chosen for each party.
pub fn apply_imbalance(
    parties: &mut [PartyDataset],
    labels: &[usize],
    num_classes: usize,
    spec: &ImbalanceSpec,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    spec.validate(num_classes)?;
    let mut majorities = Vec::with_capacity(parties.len());
    if let Some(gamma) = spec.gamma {
        for party in parties.iter_mut() {
            let mut rng = rng_for(seed, &[stream::IMBALANCE, party.party_id as u64]);
            let classes: Vec<usize> = (0..num_classes).collect();
            let mut majority: Vec<usize> = classes.choose_multiple(&mut rng, spec.num_majority).copied().collect();
            majority.sort_unstable();
            let mut by_class = positions_by_class(&party.unaligned_rows, labels, num_classes);
            let minority: Vec<usize> = classes.iter().copied().filter(|c| !majority.contains(c)).collect();
            let min_minority = minority.iter().map(|&c| by_class[c].len()).min().unwrap_or(0);
            let max_majority = majority.iter().map(|&c| by_class[c].len()).min().unwrap_or(0);
            let n_major = max_majority.min((gamma * min_minority as f64).floor() as usize);
            let n_minor = (n_major as f64 / gamma).round() as usize;
            if n_minor == 0 {
                let deficits: Vec<String> = minority
                    .iter()
                    .map(|&c| format!("class {c}: {} rows", by_class[c].len()))
                    .collect();
                return Err(Error::Scenario(format!(
                    "party {}: Γ = {gamma} around majority {majority:?} leaves minorities empty ({})",
                    party.party_id,
                    deficits.join(", ")
                )));
            }
            let mut keep = Vec::new();
            for (c, pos) in by_class.iter_mut().enumerate() {
                let target = if majority.contains(&c) { n_major } else { n_minor };
                pos.shuffle(&mut rng);
                keep.extend_from_slice(&pos[..target.min(pos.len())]);
            }
            keep.sort_unstable();
            restrict(party, None, Some(&keep));
            majorities.push(majority);
        }
    }

    if !spec.rare_classes.is_empty() {
        let Some(first) = parties.first() else {
            return Ok(majorities);
        };
        let mut by_class = positions_by_class(&first.aligned_rows, labels, num_classes);
        let mut drop = vec![false; first.aligned_rows.len()];
        let mut rng = rng_for(seed, &[stream::IMBALANCE, 0]);
        for rc in &spec.rare_classes {
            let pos = &mut by_class[rc.class];
            let keep = match rc.mode {
                RareMode::ZeroShot => 0,
                RareMode::FewShot { keep_count } => keep_count,
            };
            pos.shuffle(&mut rng);
            for &p in pos.iter().skip(keep) {
                drop[p] = true;
            }
        }
        let keep: Vec<usize> = (0..drop.len()).filter(|&p| !drop[p]).collect();
        for party in parties.iter_mut() {
            restrict(party, Some(&keep), None);
        }
    }
    Ok(majorities)
}

/// Multi-class imbalance degree: 0 for balanced counts, 1 when a single class
/// holds every sample.
pub fn mid(class_counts: &[usize]) -> Result<f64> {
    let z = class_counts.len();
    if z < 2 {
        return Err(Error::Domain(format!("MID needs at least 2 classes, got {z}")));
    }
    let n: usize = class_counts.iter().sum();
    if n == 0 {
        return Err(Error::Domain("MID of an empty count vector".into()));
    }
    let (n, zf) = (n as f64, z as f64);
    let s: f64 = class_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let c = c as f64;
            c * (zf * c / n).ln()
        })
        .sum();
    Ok(s / (n * zf.ln()))
}

/// Size-weighted cosine similarity between each party's label histogram and
/// the global histogram. Empty parties carry zero weight.
pub fn wcs(global_counts: &[usize], per_party_counts: &[Vec<usize>]) -> Result<f64> {
    let total: usize = global_counts.iter().sum();
    if total == 0 {
        return Err(Error::Domain("WCS of an empty global histogram".into()));
    }
    let g: Vec<f64> = global_counts.iter().map(|&c| c as f64).collect();
    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = 0.0;
    for local in per_party_counts {
        if local.len() != g.len() {
            return Err(Error::Shape(format!("{} local classes vs {} global", local.len(), g.len())));
        }
        let l1: usize = local.iter().sum();
        if l1 == 0 {
            continue;
        }
        let l: Vec<f64> = local.iter().map(|&c| c as f64).collect();
        let l_norm = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = g.iter().zip(&l).map(|(a, b)| a * b).sum::<f64>() / (g_norm * l_norm);
        out += (l1 as f64 / total as f64) * cos;
    }
    Ok(out)
}

/// Realised imbalance of a scenario's training pools.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceReport {
    pub mid: f64,
    pub wcs: f64,
    pub global_counts: Vec<usize>,
    pub per_party_counts: Vec<Vec<usize>>,
}

impl ImbalanceReport {
    /// The global histogram is the componentwise sum of the party histograms.
    pub fn from_counts(per_party_counts: Vec<Vec<usize>>) -> Result<Self> {
        let z = per_party_counts.first().map_or(0, Vec::len);
        let mut global = vec![0; z];
        for p in &per_party_counts {
            if p.len() != z {
                return Err(Error::Shape("party histograms differ in length".into()));
            }
            global.iter_mut().zip(p).for_each(|(g, c)| *g += c);
        }
        Ok(Self {
            mid: mid(&global)?,
            wcs: wcs(&global, &per_party_counts)?,
            global_counts: global,
            per_party_counts,
        })
    }
}
