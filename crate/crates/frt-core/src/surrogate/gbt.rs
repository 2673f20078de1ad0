//! Gradient-boosted regression trees on squared loss, from scratch.
//!
//! Stagewise fitting of depth-limited CART trees to the current residuals;
//! features enter unscaled. Deterministic: no subsampling, splits found by
//! exhaustive scan over sorted unique feature values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::dataset::DatasetRecord;
use crate::surrogate::features::N_FEATURES;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: &[f64; N_FEATURES]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

fn best_split(
    rows: &[[f64; N_FEATURES]],
    residuals: &[f64],
    idx: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let total: f64 = idx.iter().map(|&i| residuals[i]).sum();
    let n = idx.len() as f64;
    let base_gain = total * total / n;
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order = idx.to_vec();
    for f in 0..N_FEATURES {
        order.sort_by(|&a, &b| rows[a][f].partial_cmp(&rows[b][f]).unwrap());
        let mut left_sum = 0.0;
        for (pos, &i) in order.iter().enumerate().take(order.len() - 1) {
            left_sum += residuals[i];
            let nl = (pos + 1) as f64;
            if pos + 1 < min_leaf || order.len() - pos - 1 < min_leaf {
                continue;
            }
            if rows[i][f] == rows[order[pos + 1]][f] {
                continue;
            }
            let right_sum = total - left_sum;
            let nr = n - nl;
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base_gain;
            if best.map_or(true, |(_, _, g)| gain > g) && gain > 1e-12 {
                let threshold = 0.5 * (rows[i][f] + rows[order[pos + 1]][f]);
                best = Some((f, threshold, gain));
            }
        }
    }
    best
}

fn grow(
    rows: &[[f64; N_FEATURES]],
    residuals: &[f64],
    idx: Vec<usize>,
    depth: usize,
    cfg: &GbtConfig,
    nodes: &mut Vec<Node>,
) -> usize {
    let mean = idx.iter().map(|&i| residuals[i]).sum::<f64>() / idx.len() as f64;
    if depth == cfg.max_depth || idx.len() < 2 * cfg.min_leaf {
        nodes.push(Node::Leaf { value: mean });
        return nodes.len() - 1;
    }
    match best_split(rows, residuals, &idx, cfg.min_leaf) {
        None => {
            nodes.push(Node::Leaf { value: mean });
            nodes.len() - 1
        }
        Some((feature, threshold, _)) => {
            let (li, ri): (Vec<usize>, Vec<usize>) =
                idx.into_iter().partition(|&i| rows[i][feature] <= threshold);
            let me = nodes.len();
            nodes.push(Node::Split {
                feature,
                threshold,
                left: 0,
                right: 0,
            });
            let left = grow(rows, residuals, li, depth + 1, cfg, nodes);
            let right = grow(rows, residuals, ri, depth + 1, cfg, nodes);
            if let Node::Split {
                left: l, right: r, ..
            } = &mut nodes[me]
            {
                *l = left;
                *r = right;
            }
            me
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gbt {
    pub config: GbtConfig,
    base: f64,
    trees: Vec<Tree>,
    /// Training MSE after each boosting stage.
    pub history: Vec<f64>,
}

impl Gbt {
    pub fn fit(train: &[DatasetRecord], cfg: &GbtConfig) -> Result<Self> {
        let mut rows: Vec<[f64; N_FEATURES]> = Vec::new();
        let mut labels: Vec<f64> = Vec::new();
        for r in train {
            for k in 0..r.n_nodes() {
                if r.mask[k] {
                    rows.push(r.features[k]);
                    labels.push(r.labels[k]);
                }
            }
        }
        if rows.len() < 2 * cfg.min_leaf {
            return Err(Error::DegenerateMetrics(format!(
                "{} training rows",
                rows.len()
            )));
        }
        let base = labels.iter().sum::<f64>() / labels.len() as f64;
        let mut pred = vec![base; rows.len()];
        let mut trees = Vec::with_capacity(cfg.n_trees);
        let mut history = Vec::with_capacity(cfg.n_trees);
        let idx: Vec<usize> = (0..rows.len()).collect();
        for _ in 0..cfg.n_trees {
            let residuals: Vec<f64> = labels
                .iter()
                .zip(pred.iter())
                .map(|(y, p)| y - p)
                .collect();
            let mut nodes = Vec::new();
            grow(&rows, &residuals, idx.clone(), 0, cfg, &mut nodes);
            let tree = Tree { nodes };
            for (p, row) in pred.iter_mut().zip(rows.iter()) {
                *p += cfg.learning_rate * tree.predict_row(row);
            }
            trees.push(tree);
            let mse = labels
                .iter()
                .zip(pred.iter())
                .map(|(y, p)| (y - p) * (y - p))
                .sum::<f64>()
                / rows.len() as f64;
            history.push(mse);
        }
        Ok(Self {
            config: cfg.clone(),
            base,
            trees,
            history,
        })
    }

    pub fn predict(&self, record: &DatasetRecord) -> Vec<f64> {
        record
            .features
            .iter()
            .map(|row| {
                self.base
                    + self
                        .trees
                        .iter()
                        .map(|t| self.config.learning_rate * t.predict_row(row))
                        .sum::<f64>()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(f: impl Fn(&[f64; N_FEATURES]) -> f64) -> Vec<DatasetRecord> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        (0..5)
            .map(|g| {
                let n = 20;
                let features: Vec<[f64; N_FEATURES]> = (0..n)
                    .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
                    .collect();
                let labels = features.iter().map(&f).collect();
                DatasetRecord {
                    grid_id: format!("g{g}"),
                    edges: (1..n).map(|k| (k - 1, k)).collect(),
                    features,
                    labels,
                    mask: (0..n).map(|k| k != 0).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn zero_trees_predicts_training_mean() {
        let recs = records(|f| f[0]);
        let cfg = GbtConfig {
            n_trees: 0,
            ..Default::default()
        };
        let m = Gbt::fit(&recs, &cfg).unwrap();
        let mean: f64 = recs
            .iter()
            .flat_map(|r| {
                r.labels
                    .iter()
                    .zip(r.mask.iter())
                    .filter(|&(_, &mk)| mk)
                    .map(|(y, _)| *y)
            })
            .sum::<f64>()
            / recs.iter().map(|r| r.n_nodes() - 1).sum::<usize>() as f64;
        let p = m.predict(&recs[0]);
        assert!(p.iter().all(|&v| (v - mean).abs() < 1e-12));
    }

    #[test]
    fn training_loss_is_non_increasing() {
        let recs = records(|f| (3.0 * f[2]).sin() + 0.5 * f[5]);
        let m = Gbt::fit(&recs, &GbtConfig::default()).unwrap();
        for w in m.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!(*m.history.last().unwrap() < m.history[0] * 0.1);
    }

    #[test]
    fn learns_a_step_function_exactly() {
        let recs = records(|f| if f[3] > 0.0 { 1.0 } else { 0.0 });
        let cfg = GbtConfig {
            n_trees: 100,
            min_leaf: 1,
            ..Default::default()
        };
        let m = Gbt::fit(&recs, &cfg).unwrap();
        for r in &recs {
            let p = m.predict(r);
            for k in 0..r.n_nodes() {
                if r.mask[k] {
                    assert!((p[k] - r.labels[k]).abs() < 0.02);
                }
            }
        }
    }

    #[test]
    fn deterministic_fit() {
        let recs = records(|f| f[0] * f[1]);
        let cfg = GbtConfig {
            n_trees: 20,
            ..Default::default()
        };
        let a = Gbt::fit(&recs, &cfg).unwrap();
        let b = Gbt::fit(&recs, &cfg).unwrap();
        assert_eq!(a.predict(&recs[0]), b.predict(&recs[0]));
    }
}
