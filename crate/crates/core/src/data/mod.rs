//! Datasets, vertical partitioning, aligned/unaligned splits, imbalance
//! scenarios and the MID/WCS imbalance metrics.

mod imbalance;
mod scenario;
mod synth;
mod tabular;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{rng_for, stream};
use crate::numerics::Matrix;

pub use imbalance::{apply_imbalance, mid, wcs, ImbalanceReport, ImbalanceSpec, RareClass, RareMode};
pub use scenario::{build_scenario, DatasetSource, Scenario, ScenarioConfig, ScenarioManifest, TestSet};
pub use synth::{synth_dataset, SynthSpec};
pub use tabular::{join_party_tables, load_tabular, read_tabular, write_tabular, Standardizer};

/// Features, labels and ids of a labelled table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub num_classes: usize,
}

impl RawDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, ids: Vec<String>, num_classes: usize) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || ids.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} labels, {} ids",
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Schema(format!("label {bad} outside [0, {num_classes})")));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Schema(format!("duplicate id {dup:?}")));
        }
        Ok(Self {
            features,
            labels,
            ids,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.num_classes)
    }

    pub fn select(&self, rows: &[usize]) -> RawDataset {
        RawDataset {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            num_classes: self.num_classes,
        }
    }
}

pub fn class_counts(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Assignment of feature columns to parties.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSpec {
    /// Contiguous blocks; the first `D mod M` parties get one extra column.
    #[default]
    Even,
    /// Contiguous blocks of the given widths.
    Sizes(Vec<usize>),
    /// `assignment[c]` is the 0-based party index owning column `c`.
    Assignment(Vec<usize>),
}

/// One party's feature columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    /// 1-based; party 1 is the active party.
    pub party_id: u32,
    pub columns: Vec<usize>,
    pub features: Matrix,
}

/// Column index lists per party, validated against `d` columns.
pub fn column_assignment(d: usize, m: usize, spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::Spec("at least one party is required".into()));
    }
    let mut cols = vec![Vec::new(); m];
    match spec {
        SplitSpec::Even => {
            if d < m {
                return Err(Error::Spec(format!("{d} columns cannot cover {m} parties")));
            }
            let (base, extra) = (d / m, d % m);
            let mut c = 0;
            for (p, slot) in cols.iter_mut().enumerate() {
                let w = base + usize::from(p < extra);
                slot.extend(c..c + w);
                c += w;
            }
        }
        SplitSpec::Sizes(sizes) => {
            if sizes.len() != m {
                return Err(Error::Spec(format!("{} block sizes for {m} parties", sizes.len())));
            }
            let total: usize = sizes.iter().sum();
            if total != d {
                return Err(Error::Spec(format!("block sizes cover {total} of {d} columns")));
            }
            let mut c = 0;
            for (slot, &w) in cols.iter_mut().zip(sizes) {
                if w == 0 {
                    return Err(Error::Spec("every party needs at least one column".into()));
                }
                slot.extend(c..c + w);
                c += w;
            }
        }
        SplitSpec::Assignment(assign) => {
            if assign.len() != d {
                return Err(Error::Spec(format!(
                    "assignment lists {} columns, dataset has {d}",
                    assign.len()
                )));
            }
            for (c, &p) in assign.iter().enumerate() {
                if p >= m {
                    return Err(Error::Spec(format!("column {c} assigned to missing party {p}")));
                }
                cols[p].push(c);
            }
            if let Some(p) = cols.iter().position(Vec::is_empty) {
                return Err(Error::Spec(format!("party {p} owns no columns")));
            }
        }
    }
    Ok(cols)
}

/// Splits the columns of `dataset` into `m` party blocks.
pub fn partition_vertical(dataset: &RawDataset, m: usize, spec: &SplitSpec) -> Result<Vec<FeatureBlock>> {
    let cols = column_assignment(dataset.features.cols(), m, spec)?;
    Ok(cols
        .into_iter()
        .enumerate()
        .map(|(p, columns)| FeatureBlock {
            party_id: p as u32 + 1,
            features: dataset.features.select_cols(&columns),
            columns,
        })
        .collect())
}

/// Inverse of [`partition_vertical`].
pub fn reassemble(blocks: &[FeatureBlock]) -> Result<Matrix> {
    let d: usize = blocks.iter().map(|b| b.columns.len()).sum();
    let n = blocks.first().map_or(0, |b| b.features.rows());
    let mut out = Matrix::zeros(n, d);
    for b in blocks {
        if b.features.rows() != n {
            return Err(Error::Shape("blocks disagree on row count".into()));
        }
        for r in 0..n {
            for (j, &c) in b.columns.iter().enumerate() {
                out.set(r, c, b.features.get(r, j));
            }
        }
    }
    Ok(out)
}

/// One party's view of the training data.
///
/// `aligned` rows are index-synchronised across parties. Only the active
/// party carries `labels_aligned`. Row indices refer to the training table
/// the scenario was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct PartyDataset {
    pub party_id: u32,
    pub columns: Vec<usize>,
    pub aligned: Matrix,
    pub aligned_rows: Vec<usize>,
    pub unaligned: Matrix,
    pub unaligned_rows: Vec<usize>,
    pub labels_aligned: Option<Vec<usize>>,
}

impl PartyDataset {
    pub fn is_active(&self) -> bool {
        self.party_id == 1
    }

    pub fn feature_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn num_samples(&self) -> usize {
        self.aligned_rows.len() + self.unaligned_rows.len()
    }
}

/// Draws `round(ratio · N)` aligned rows shared by every party; all other
/// rows form each party's unaligned pool.
pub fn split_aligned(
    blocks: &[FeatureBlock],
    labels: &[usize],
    num_classes: usize,
    aligned_ratio: f64,
    seed: u64,
) -> Result<Vec<PartyDataset>> {
    if !(aligned_ratio > 0.0 && aligned_ratio <= 1.0) {
        return Err(Error::Domain(format!("aligned ratio {aligned_ratio} outside (0, 1]")));
    }
    let n = labels.len();
    if blocks.iter().any(|b| b.features.rows() != n) {
        return Err(Error::Shape("feature blocks and labels disagree on row count".into()));
    }
    let n_aligned = (aligned_ratio * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[stream::ALIGN_SPLIT]));
    let mut aligned_rows = order[..n_aligned].to_vec();
    let mut unaligned_rows = order[n_aligned..].to_vec();
    aligned_rows.sort_unstable();
    unaligned_rows.sort_unstable();

    let present = class_counts(&aligned_rows.iter().map(|&r| labels[r]).collect::<Vec<_>>(), num_classes)
        .iter()
        .filter(|&&c| c > 0)
        .count();
    if present < num_classes {
        warn!("aligned pool covers {present} of {num_classes} classes");
    }

    Ok(blocks
        .iter()
        .map(|b| PartyDataset {
            party_id: b.party_id,
            columns: b.columns.clone(),
            aligned: b.features.select_rows(&aligned_rows),
            aligned_rows: aligned_rows.clone(),
            unaligned: b.features.select_rows(&unaligned_rows),
            unaligned_rows: unaligned_rows.clone(),
            labels_aligned: (b.party_id == 1).then(|| aligned_rows.iter().map(|&r| labels[r]).collect()),
        })
        .collect())
}

/// Per class, `round(ratio · n_z)` rows go to the test side.
/// Returns `(train_rows, test_rows)`, both sorted.
pub fn stratified_split(labels: &[usize], num_classes: usize, test_ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_ratio) {
        return Err(Error::Domain(format!("test ratio {test_ratio} outside [0, 1)")));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (r, &y) in labels.iter().enumerate() {
        by_class[y].push(r);
    }
    let mut rng = rng_for(seed, &[stream::TEST_SPLIT]);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rows in &mut by_class {
        rows.shuffle(&mut rng);
        let k = (test_ratio * rows.len() as f64).round() as usize;
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
