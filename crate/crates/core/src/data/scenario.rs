use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{
    apply_imbalance, class_counts, join_party_tables, partition_vertical, read_tabular, split_aligned,
    stratified_split, synth_dataset, ImbalanceReport, ImbalanceSpec, PartyDataset, RawDataset, SplitSpec,
    Standardizer, SynthSpec,
};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SynthSpec),
    /// One table holding every party's columns.
    Csv {
        path: PathBuf,
        #[serde(default = "default_label")]
        label_column: String,
        #[serde(default = "default_id")]
        id_column: String,
    },
    /// One table per party joined on the id column; the first is the
    /// active party's and carries the labels. Columns stay with their file.
    PartyCsv {
        paths: Vec<PathBuf>,
        #[serde(default = "default_label")]
        label_column: String,
        #[serde(default = "default_id")]
        id_column: String,
    },
}

fn default_label() -> String {
    "label".into()
}

fn default_id() -> String {
    "id".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dataset: DatasetSource,
    pub num_parties: usize,
    pub split: SplitSpec,
    pub aligned_ratio: f64,
    pub test_ratio: f64,
    pub imbalance: ImbalanceSpec,
}

/// Held-out rows, partitioned with the training columns.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSet {
    pub blocks: Vec<Matrix>,
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Everything needed to reproduce a partition and audit its imbalance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub num_classes: usize,
    pub party_columns: Vec<Vec<usize>>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub aligned_ids: Vec<String>,
    pub unaligned_ids: Vec<Vec<String>>,
    pub majority_classes: Vec<Vec<usize>>,
    pub zero_shot_classes: Vec<usize>,
    pub imbalance: ImbalanceReport,
}

/// A built scenario. `train` keeps the ground truth for every training row;
/// it is visible to baselines and evaluators, never to the protocol.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub num_classes: usize,
    pub train: RawDataset,
    pub parties: Vec<PartyDataset>,
    pub test: TestSet,
    pub manifest: ScenarioManifest,
}

impl Scenario {
    /// Classes with at least one aligned labelled row.
    pub fn aligned_classes(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_classes];
        if let Some(labels) = self.parties.first().and_then(|p| p.labels_aligned.as_ref()) {
            for &y in labels {
                seen[y] = true;
            }
        }
        seen
    }

    pub fn aligned_labels(&self) -> &[usize] {
        self.parties
            .first()
            .and_then(|p| p.labels_aligned.as_deref())
            .unwrap_or(&[])
    }
}

fn load_source(source: &DatasetSource, seed: u64) -> Result<(RawDataset, Option<Vec<usize>>)> {
    match source {
        DatasetSource::Synthetic(spec) => Ok((synth_dataset(spec, seed)?, None)),
        DatasetSource::Csv {
            path,
            label_column,
            id_column,
        } => Ok((read_tabular(path, label_column, id_column)?, None)),
        DatasetSource::PartyCsv {
            paths,
            label_column,
            id_column,
        } => {
            let (ds, widths) = join_party_tables(paths, label_column, id_column)?;
            Ok((ds, Some(widths)))
        }
    }
}

/// Test split, training-only standardisation, vertical partition, aligned
/// split and imbalance transforms, in that order.
pub fn build_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    let (raw, widths) = load_source(&config.dataset, seed)?;
    let split = match widths {
        Some(w) => {
            if w.len() != config.num_parties {
                return Err(Error::Config(format!(
                    "{} party files for {} parties",
                    w.len(),
                    config.num_parties
                )));
            }
            SplitSpec::Sizes(w)
        }
        None => config.split.clone(),
    };
    let z = raw.num_classes;
    let (train_rows, test_rows) = stratified_split(&raw.labels, z, config.test_ratio, seed)?;
    if train_rows.is_empty() {
        return Err(Error::Scenario("no training rows".into()));
    }
    let standardizer = Standardizer::fit(&raw.features, Some(&train_rows))?;
    let standardized = RawDataset {
        features: standardizer.apply(&raw.features)?,
        ..raw
    };
    let train = standardized.select(&train_rows);
    let test = standardized.select(&test_rows);

    let blocks = partition_vertical(&train, config.num_parties, &split)?;
    let mut parties = split_aligned(&blocks, &train.labels, z, config.aligned_ratio, seed)?;
    let majority_classes = apply_imbalance(&mut parties, &train.labels, z, &config.imbalance, seed)?;

    let test_blocks: Vec<Matrix> = blocks.iter().map(|b| test.features.select_cols(&b.columns)).collect();
    let per_party_counts: Vec<Vec<usize>> = parties
        .iter()
        .map(|p| {
            let labels: Vec<usize> = p
                .aligned_rows
                .iter()
                .chain(&p.unaligned_rows)
                .map(|&r| train.labels[r])
                .collect();
            class_counts(&labels, z)
        })
        .collect();
    let imbalance = ImbalanceReport::from_counts(per_party_counts)?;

    let ids = |rows: &[usize]| rows.iter().map(|&r| train.ids[r].clone()).collect::<Vec<_>>();
    let manifest = ScenarioManifest {
        seed,
        config: config.clone(),
        num_classes: z,
        party_columns: blocks.iter().map(|b| b.columns.clone()).collect(),
        train_ids: train.ids.clone(),
        test_ids: test.ids.clone(),
        aligned_ids: parties.first().map_or_else(Vec::new, |p| ids(&p.aligned_rows)),
        unaligned_ids: parties.iter().map(|p| ids(&p.unaligned_rows)).collect(),
        majority_classes,
        zero_shot_classes: config.imbalance.zero_shot_classes(),
        imbalance,
    };
    Ok(Scenario {
        num_classes: z,
        train,
        parties,
        test: TestSet {
            blocks: test_blocks,
            features: test.features,
            labels: test.labels,
        },
        manifest,
    })
}
