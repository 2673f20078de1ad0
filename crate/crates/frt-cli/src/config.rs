//! Run configuration: one struct bundling every module's knobs, loadable from
//! TOML or JSON.

use std::path::Path;

use frt_core::frt::{FrtOptions, RideThroughCurve};
use frt_core::model::LineParams;
use frt_core::perturb::PerturbationSpec;
use frt_core::surrogate::TrainOptions;
use frt_core::synthesis::SynthesisConfig;
use frt_core::topogen::GrowthConfig;
use frt_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub n_grids: usize,
    pub growth: GrowthConfig,
    pub synthesis: SynthesisConfig,
    /// Per-km line parameter template; lengths come from the topology.
    pub line: LineParams,
    pub perturbation: PerturbationSpec,
    pub curve: RideThroughCurve,
    pub frt: FrtOptions,
    pub train: TrainOptions,
    /// Seed of the train/val/test grid split.
    pub split_seed: u64,
    /// Training seeds used for stochastic models in the evaluation report.
    pub report_seeds: Vec<u64>,
    /// Scale applied to the adapted case's net power injections.
    pub case_power_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_grids: 50,
            growth: GrowthConfig::default(),
            synthesis: SynthesisConfig::default(),
            line: LineParams::standard_380kv(0.0),
            perturbation: PerturbationSpec::default(),
            curve: RideThroughCurve::default(),
            frt: FrtOptions::default(),
            train: TrainOptions::default(),
            split_seed: 0,
            report_seeds: vec![0, 1, 2],
            case_power_scale: 0.2,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
            other => Err(Error::Config(format!(
                "unsupported config extension {other:?} (expected .toml or .json)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grids == 0 {
            return Err(Error::Config("n_grids must be positive".into()));
        }
        if self.report_seeds.is_empty() {
            return Err(Error::Config("report_seeds must not be empty".into()));
        }
        if !(self.case_power_scale > 0.0) {
            return Err(Error::Config("case_power_scale must be positive".into()));
        }
        self.growth.validate()?;
        self.synthesis.validate()?;
        self.curve.validate()?;
        Ok(())
    }
}
