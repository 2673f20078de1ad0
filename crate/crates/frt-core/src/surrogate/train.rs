//! Model training dispatch, evaluation, and the cross-model generalization
//! report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::dataset::DatasetRecord;
use crate::surrogate::gbt::{Gbt, GbtConfig};
use crate::surrogate::linreg::LinReg;
use crate::surrogate::metrics::{r2, spearman};
use crate::surrogate::tag::{TagConfig, TagNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinReg,
    Gbt,
    Tag,
    TagReg,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LinReg,
        ModelKind::Gbt,
        ModelKind::Tag,
        ModelKind::TagReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LinReg => "linreg",
            ModelKind::Gbt => "gbt",
            ModelKind::Tag => "tag",
            ModelKind::TagReg => "tag_reg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linreg" => Ok(ModelKind::LinReg),
            "gbt" => Ok(ModelKind::Gbt),
            "tag" => Ok(ModelKind::Tag),
            "tag_reg" => Ok(ModelKind::TagReg),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected linreg|gbt|tag|tag_reg)"
            ))),
        }
    }

    /// Whether repeated fits with different seeds give different models.
    pub fn is_stochastic(self) -> bool {
        matches!(self, ModelKind::Tag | ModelKind::TagReg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub tag: TagConfig,
    pub gbt: GbtConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            tag: TagConfig::desk(),
            gbt: GbtConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn full_scale() -> Self {
        Self {
            tag: TagConfig::full_scale(),
            gbt: GbtConfig::default(),
        }
    }
}

/// A trained surrogate of any kind, serializable as a single artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    LinReg(LinReg),
    Gbt(Gbt),
    Tag(TagNet),
    TagReg(TagNet),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::LinReg(_) => ModelKind::LinReg,
            Model::Gbt(_) => ModelKind::Gbt,
            Model::Tag(_) => ModelKind::Tag,
            Model::TagReg(_) => ModelKind::TagReg,
        }
    }

    pub fn predict(&self, record: &DatasetRecord) -> Vec<f64> {
        match self {
            Model::LinReg(m) => m.predict(record),
            Model::Gbt(m) => m.predict(record),
            Model::Tag(m) | Model::TagReg(m) => m.predict(record),
        }
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn train_model(
    kind: ModelKind,
    train: &[DatasetRecord],
    val: &[DatasetRecord],
    opts: &TrainOptions,
    seed: u64,
) -> Result<Model> {
    match kind {
        ModelKind::LinReg => Ok(Model::LinReg(LinReg::fit(train)?)),
        ModelKind::Gbt => Ok(Model::Gbt(Gbt::fit(train, &opts.gbt)?)),
        ModelKind::Tag => {
            let cfg = TagConfig { seed, ..opts.tag.clone() };
            Ok(Model::Tag(TagNet::fit(train, val, &cfg)?))
        }
        ModelKind::TagReg => {
            let cfg = TagConfig { seed, ..opts.tag.clone() }.with_reg_dropout();
            Ok(Model::TagReg(TagNet::fit(train, val, &cfg)?))
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub r2: f64,
    pub spearman: f64,
    pub n_points: usize,
}

/// Pooled metrics over all masked nodes of `records`.
pub fn evaluate(model: &Model, records: &[DatasetRecord]) -> Result<EvalMetrics> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for r in records {
        let p = model.predict(r);
        for k in 0..r.n_nodes() {
            if r.mask[k] {
                preds.push(p[k]);
                labels.push(r.labels[k]);
            }
        }
    }
    Ok(EvalMetrics {
        r2: r2(&preds, &labels)?,
        spearman: spearman(&preds, &labels)?,
        n_points: labels.len(),
    })
}

/// Mean and (population) standard deviation of repeated metric values.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

impl Spread {
    fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }

    pub fn render(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub test_r2: Spread,
    pub case_r2: Spread,
    pub test_spearman: Spread,
    pub case_spearman: Spread,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub rows: Vec<ReportRow>,
    pub n_seeds: usize,
}

impl GeneralizationReport {
    /// All four models on the held-out test split and on a separate
    /// out-of-distribution case; stochastic models repeated over `seeds`.
    pub fn build(
        train: &[DatasetRecord],
        val: &[DatasetRecord],
        test: &[DatasetRecord],
        case: &[DatasetRecord],
        opts: &TrainOptions,
        seeds: &[u64],
    ) -> Result<Self> {
        if seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        let mut rows = Vec::new();
        for kind in ModelKind::ALL {
            let fit_seeds: &[u64] = if kind.is_stochastic() {
                seeds
            } else {
                &seeds[..1]
            };
            let mut tr2 = Vec::new();
            let mut cr2 = Vec::new();
            let mut trho = Vec::new();
            let mut crho = Vec::new();
            for &seed in fit_seeds {
                let model = train_model(kind, train, val, opts, seed)?;
                let mt = evaluate(&model, test)?;
                let mc = evaluate(&model, case)?;
                tr2.push(mt.r2);
                trho.push(mt.spearman);
                cr2.push(mc.r2);
                crho.push(mc.spearman);
            }
            rows.push(ReportRow {
                model: kind.name().to_string(),
                test_r2: Spread::from_values(&tr2),
                case_r2: Spread::from_values(&cr2),
                test_spearman: Spread::from_values(&trho),
                case_spearman: Spread::from_values(&crho),
            });
        }
        Ok(Self {
            rows,
            n_seeds: seeds.len(),
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::from(
            "model     test_r2          case_r2          test_spearman    case_spearman\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<9} {:<16} {:<16} {:<16} {}\n",
                r.model,
                r.test_r2.render(),
                r.case_r2.render(),
                r.test_spearman.render(),
                r.case_spearman.render()
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::features::N_FEATURES;

    fn records(seed: u64, count: usize) -> Vec<DatasetRecord> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|g| {
                let n = 8;
                let features: Vec<[f64; N_FEATURES]> = (0..n)
                    .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
                    .collect();
                let labels = features
                    .iter()
                    .map(|f| (0.5 + 0.3 * f[0] - 0.2 * f[4]).clamp(0.0, 1.0))
                    .collect();
                DatasetRecord {
                    grid_id: format!("g{seed}_{g}"),
                    edges: (1..n).map(|k| (k - 1, k)).chain([(n - 1, 0)]).collect(),
                    features,
                    labels,
                    mask: (0..n).map(|k| k != 0).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn kind_parse_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(ModelKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(ModelKind::parse("mlp").is_err());
    }

    #[test]
    fn all_kinds_train_and_serialize() {
        let recs = records(1, 14);
        let (train, val, test) = crate::surrogate::dataset::split_records(&recs, 5);
        let opts = TrainOptions {
            tag: TagConfig {
                epochs: 30,
                ..TagConfig::desk()
            },
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let m = train_model(kind, &train, &val, &opts, 0).unwrap();
            let metrics = evaluate(&m, &test).unwrap();
            assert!(metrics.r2.is_finite() && metrics.spearman.is_finite());
            let path = dir.path().join(format!("{}.json", kind.name()));
            m.save_json(&path).unwrap();
            let back = Model::load_json(&path).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(back.predict(&test[0]), m.predict(&test[0]));
        }
    }

    #[test]
    fn report_has_all_rows_with_finite_entries() {
        let recs = records(2, 14);
        let case = records(77, 2);
        let (train, val, test) = crate::surrogate::dataset::split_records(&recs, 5);
        let opts = TrainOptions {
            tag: TagConfig {
                epochs: 15,
                ..TagConfig::desk()
            },
            ..Default::default()
        };
        let report =
            GeneralizationReport::build(&train, &val, &test, &case, &opts, &[0, 1]).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            for s in [
                &row.test_r2,
                &row.case_r2,
                &row.test_spearman,
                &row.case_spearman,
            ] {
                assert!(s.mean.is_finite() && s.std.is_finite());
            }
        }
        // deterministic rows have zero spread
        assert_eq!(report.rows[0].test_r2.std, 0.0);
        assert_eq!(report.rows[1].test_r2.std, 0.0);
        let text = report.render();
        assert!(text.contains("linreg") && text.contains("tag_reg"));
    }
}
