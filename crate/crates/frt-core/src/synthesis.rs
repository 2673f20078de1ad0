//! Turns a raw topology into a validated operating grid: bimodal net-power
//! sampling, bus-kind assignment, reactive dispatch via load flow, and the
//! three validation stages (voltage band, small-signal stability, line
//! loading). Rejected candidates are retried with fresh sub-seeds.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynModel;
use crate::error::{Error, Result};
use crate::model::{BusKind, Grid, LineParams, NfLabel, NormalFormParams};
use crate::powerflow::{newton_load_flow, LoadFlowOptions, OperatingPoint};
use crate::stability::small_signal_check;
use crate::topogen::{assign_line_params, grow_topology, GrowthConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Mode location of the bimodal net-power distribution (p.u.).
    pub p0: f64,
    /// Std dev of each mixture component (p.u.). Free parameter, not from the
    /// source distribution fit.
    pub sigma: f64,
    /// Mixture weights over the NF1/NF2/NF3 parametrizations.
    pub nf_mix: [f64; 3],
    /// Weight of the producing (+p0) mixture component, i.e. the expected
    /// share of grid-forming buses. 0.5 recovers the equal-weight mixture.
    pub grid_forming_share: f64,
    /// Voltage magnitude target for dispatch (p.u.).
    pub v_target: f64,
    /// Allowed |V - v_target| band (p.u.).
    pub v_tol: f64,
    /// Maximum allowed line loading as a fraction of the thermal rating.
    pub loading_margin: f64,
    /// Thermal rating of the line type (p.u. apparent power).
    pub s_rated_pu: f64,
    /// Power factor applied to load buses (q = p * tan(acos(pf))).
    pub load_power_factor: f64,
    /// Bus-count range sampled per attempt (inclusive).
    pub n_bus_range: (usize, usize),
    /// Retry budget per grid.
    pub max_retries: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            p0: 1.31,
            sigma: 0.2,
            nf_mix: [1.0 / 3.0; 3],
            grid_forming_share: 0.5,
            v_target: 1.0,
            v_tol: 0.1,
            loading_margin: 0.5,
            // 1.8 kA per circuit at 380 kV: sqrt(3)*380*1.8 MVA ~ 11.8 p.u.
            s_rated_pu: 11.8,
            load_power_factor: 0.95,
            n_bus_range: (20, 30),
            max_retries: 10,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidGrid("sigma must be > 0".into()));
        }
        let w: f64 = self.nf_mix.iter().sum();
        if (w - 1.0).abs() > 1e-9 || self.nf_mix.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidGrid("nf_mix must be a distribution".into()));
        }
        if !(self.grid_forming_share > 0.0 && self.grid_forming_share < 1.0) {
            return Err(Error::InvalidGrid("grid_forming_share must be in (0,1)".into()));
        }
        if !(self.loading_margin > 0.0 && self.loading_margin <= 1.0) {
            return Err(Error::InvalidGrid("loading_margin must be in (0,1]".into()));
        }
        Ok(())
    }
}

/// Standard normal draw (Box-Muller).
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws a net power from the two-component Gaussian mixture with means
/// `+-p0`, std `sigma`, and producing-component weight `grid_forming_share`.
pub fn sample_net_power<R: Rng>(cfg: &SynthesisConfig, rng: &mut R) -> f64 {
    let mean = if rng.gen::<f64>() < cfg.grid_forming_share {
        cfg.p0
    } else {
        -cfg.p0
    };
    mean + cfg.sigma * standard_normal(rng)
}

fn erf(x: f64) -> f64 {
    // Abramowitz & Stegun 7.1.26, |error| < 1.5e-7
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// CDF of the net-power mixture, for distribution tests.
pub fn net_power_cdf(cfg: &SynthesisConfig, x: f64) -> f64 {
    let w = cfg.grid_forming_share;
    w * normal_cdf((x - cfg.p0) / cfg.sigma) + (1.0 - w) * normal_cdf((x + cfg.p0) / cfg.sigma)
}

/// Draws an NF parametrization label according to `cfg.nf_mix`.
pub fn draw_nf_label<R: Rng>(cfg: &SynthesisConfig, rng: &mut R) -> NfLabel {
    let u: f64 = rng.gen();
    if u < cfg.nf_mix[0] {
        NfLabel::NF1
    } else if u < cfg.nf_mix[0] + cfg.nf_mix[1] {
        NfLabel::NF2
    } else {
        NfLabel::NF3
    }
}

/// Assigns bus kinds by the sign of the sampled net power: producers become
/// NormalForm buses, consumers PQ loads, and the largest producer the slack.
pub fn assign_bus_kinds<R: Rng>(grid: &mut Grid, cfg: &SynthesisConfig, rng: &mut R) -> Result<()> {
    let n = grid.n_buses();
    let tan_phi = cfg.load_power_factor.acos().tan();
    for _attempt in 0..50 {
        let p_net: Vec<f64> = (0..n).map(|_| sample_net_power(cfg, rng)).collect();
        let n_pos = p_net.iter().filter(|&&p| p > 0.0).count();
        if n > 1 && (n_pos == 0 || n_pos == n) {
            continue; // degenerate draw: one kind only
        }
        let slack = p_net
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        for (i, bus) in grid.buses.iter_mut().enumerate() {
            if i == slack {
                bus.kind = BusKind::Slack;
                bus.p_set = 0.0;
                bus.q_set = 0.0;
                bus.v_set = Some(cfg.v_target);
            } else if p_net[i] > 0.0 {
                bus.kind = BusKind::NormalForm {
                    params: NormalFormParams::preset(draw_nf_label(cfg, rng)),
                };
                bus.p_set = p_net[i];
                bus.q_set = 0.0; // dispatched by the load flow
                bus.v_set = Some(cfg.v_target);
            } else {
                bus.kind = BusKind::PqLoad;
                bus.p_set = p_net[i];
                bus.q_set = p_net[i] * tan_phi;
                bus.v_set = None;
            }
        }
        return Ok(());
    }
    Err(Error::InfeasibleDispatch(
        "degenerate net-power draws: all buses of one kind".into(),
    ))
}

/// Per-line apparent-power loadings relative to the thermal rating.
pub fn line_loadings(grid: &Grid, op: &OperatingPoint, s_rated_pu: f64) -> Vec<f64> {
    let v = op.voltages();
    grid.lines
        .iter()
        .map(|l| {
            let half = l.y_shunt * 0.5;
            let i_from = l.y_series * (v[l.from] - v[l.to]) + half * v[l.from];
            let i_to = l.y_series * (v[l.to] - v[l.from]) + half * v[l.to];
            let s_from = (v[l.from] * i_from.conj()).norm();
            let s_to = (v[l.to] * i_to.conj()).norm();
            s_from.max(s_to) / s_rated_pu
        })
        .collect()
}

/// Lines whose loading exceeds the margin, with their loading fraction.
pub fn line_loading_check(
    grid: &Grid,
    op: &OperatingPoint,
    cfg: &SynthesisConfig,
) -> Vec<(usize, f64)> {
    line_loadings(grid, op, cfg.s_rated_pu)
        .into_iter()
        .enumerate()
        .filter(|&(_, loading)| loading > cfg.loading_margin)
        .collect()
}

/// Why a candidate grid was rejected at which pipeline stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Rejection {
    Degenerate,
    LoadFlow(String),
    VoltageBand { max_deviation: f64 },
    SmallSignal,
    IndexProblem,
    Overload { worst: f64 },
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::Degenerate => write!(f, "degenerate"),
            Rejection::LoadFlow(e) => write!(f, "load-flow: {e}"),
            Rejection::VoltageBand { max_deviation } => {
                write!(f, "voltage-band: max |V-1| = {max_deviation:.4}")
            }
            Rejection::SmallSignal => write!(f, "small-signal"),
            Rejection::IndexProblem => write!(f, "index-problem"),
            Rejection::Overload { worst } => write!(f, "overload: {worst:.3}"),
        }
    }
}

/// A validated synthetic grid with its operating point.
#[derive(Debug, Clone)]
pub struct SynthesizedGrid {
    pub grid: Grid,
    pub op: OperatingPoint,
    pub seed: u64,
    pub attempts: usize,
    pub rejections: Vec<Rejection>,
}

fn sub_seed(seed: u64, attempt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(attempt)
        .rotate_left(17)
}

/// Full synthesis pipeline for one grid, deterministic in `(configs, seed)`.
pub fn synthesize_grid(
    growth: &GrowthConfig,
    cfg: &SynthesisConfig,
    line_template: &LineParams,
    base: &crate::model::PerUnitBase,
    seed: u64,
) -> Result<SynthesizedGrid> {
    cfg.validate()?;
    let mut rejections = Vec::new();

    for attempt in 0..cfg.max_retries {
        let s = sub_seed(seed, attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let n_buses = rng.gen_range(cfg.n_bus_range.0..=cfg.n_bus_range.1);
        let gcfg = GrowthConfig {
            n_buses,
            rng_seed: s,
            ..growth.clone()
        };
        let skeleton = grow_topology(&gcfg)?;
        let mut grid = assign_line_params(&skeleton, line_template, base)?;

        if let Err(e) = assign_bus_kinds(&mut grid, cfg, &mut rng) {
            rejections.push(Rejection::Degenerate);
            let _ = e;
            continue;
        }

        let op = match newton_load_flow(&grid, &LoadFlowOptions::default()) {
            Ok(op) => op,
            Err(e) => {
                rejections.push(Rejection::LoadFlow(e.to_string()));
                continue;
            }
        };

        let max_dev = op
            .v
            .iter()
            .map(|v| (v - cfg.v_target).abs())
            .fold(0.0, f64::max);
        if max_dev > cfg.v_tol {
            rejections.push(Rejection::VoltageBand {
                max_deviation: max_dev,
            });
            continue;
        }

        // reactive dispatch: the load flow's Q becomes the NF set point
        for bus in &mut grid.buses {
            if bus.kind.is_normal_form() {
                bus.q_set = op.q[bus.id];
            }
        }

        let model = DynModel::new(&grid, &op);
        let x_eq = model.state_from_op(&op);
        match small_signal_check(&model, &x_eq) {
            Ok(v) if v.is_stable() => {}
            Ok(_) => {
                rejections.push(Rejection::SmallSignal);
                continue;
            }
            Err(Error::IndexProblem) => {
                rejections.push(Rejection::IndexProblem);
                continue;
            }
            Err(e) => return Err(e),
        }

        let overloads = line_loading_check(&grid, &op, cfg);
        if !overloads.is_empty() {
            let worst = overloads.iter().map(|&(_, l)| l).fold(0.0, f64::max);
            rejections.push(Rejection::Overload { worst });
            continue;
        }

        return Ok(SynthesizedGrid {
            grid,
            op,
            seed,
            attempts: attempt + 1,
            rejections,
        });
    }

    let summary = rejections
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::RetriesExhausted {
        attempts: cfg.max_retries,
        summary,
    })
}
