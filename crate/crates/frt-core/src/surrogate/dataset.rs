//! Per-grid dataset records and the JSON-lines container format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frt::BusAssessment;
use crate::model::Grid;
use crate::surrogate::features::{build_features, N_FEATURES};

/// One grid: topology, nodal features, labels, and the slack mask
/// (`mask[k] = true` means bus k enters losses and metrics).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub grid_id: String,
    pub edges: Vec<(usize, usize)>,
    pub features: Vec<[f64; N_FEATURES]>,
    pub labels: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DatasetRecord {
    pub fn n_nodes(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if self.labels.len() != n || self.mask.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "record {}: {} nodes, {} labels, {} mask entries",
                self.grid_id,
                n,
                self.labels.len(),
                self.mask.len()
            )));
        }
        if self.mask.iter().filter(|&&m| !m).count() != 1 {
            return Err(Error::InvalidGrid(format!(
                "record {}: mask must exclude exactly one bus",
                self.grid_id
            )));
        }
        for (k, (&l, &m)) in self.labels.iter().zip(self.mask.iter()).enumerate() {
            if m && !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidGrid(format!(
                    "record {}: label {l} at bus {k} outside [0,1]",
                    self.grid_id
                )));
            }
        }
        if self.edges.iter().any(|&(u, v)| u >= n || v >= n) {
            return Err(Error::InvalidGrid(format!(
                "record {}: edge endpoint out of range",
                self.grid_id
            )));
        }
        Ok(())
    }

    /// Builds a record from a grid and its per-bus assessment results. The
    /// slack label is 0 and masked out.
    pub fn from_assessment(
        grid_id: &str,
        grid: &Grid,
        assessments: &[BusAssessment],
    ) -> Result<Self> {
        let n = grid.n_buses();
        let slack = grid.slack();
        let mut labels = vec![0.0; n];
        let mut seen = vec![false; n];
        for a in assessments {
            labels[a.bus] = a.p_frt;
            seen[a.bus] = true;
        }
        for (k, &s) in seen.iter().enumerate() {
            if k != slack && !s {
                return Err(Error::InvalidGrid(format!(
                    "missing assessment for bus {k}"
                )));
            }
        }
        let rec = Self {
            grid_id: grid_id.to_string(),
            edges: grid.lines.iter().map(|l| (l.from, l.to)).collect(),
            features: build_features(grid),
            labels,
            mask: (0..n).map(|k| k != slack).collect(),
        };
        rec.validate()?;
        Ok(rec)
    }
}

pub fn save_jsonl(records: &[DatasetRecord], path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_jsonl(path: &std::path::Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord = serde_json::from_str(line)?;
        r.validate()?;
        records.push(r);
    }
    Ok(records)
}

/// Deterministic 70/15/15 split by whole grids, shuffled by seed.
pub fn split_records(
    records: &[DatasetRecord],
    seed: u64,
) -> (Vec<DatasetRecord>, Vec<DatasetRecord>, Vec<DatasetRecord>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..records.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n = records.len();
    let n_test = (n as f64 * 0.15).round().max(1.0) as usize;
    let n_val = n_test;
    let n_train = n.saturating_sub(n_test + n_val);
    let pick = |r: std::ops::Range<usize>| idx[r].iter().map(|&i| records[i].clone()).collect();
    (
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    )
}
