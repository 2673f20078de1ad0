//! Ride-through classification and per-bus fault-ride-through probabilities.
//!
//! A trajectory survives when every bus voltage magnitude stays between the
//! low and high envelopes and every normal-form frequency stays inside the
//! band, checked on a fixed time grid. The per-bus probability is the survived
//! fraction over a Sobol-sampled set of single-bus perturbations; states that
//! cannot be initialized or integrated count as not survived.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynModel;
use crate::error::{Error, Result};
use crate::integrate::{integrate_observed, IntegrateOptions, StepControl, Trajectory};
use crate::model::Grid;
use crate::perturb::{consistent_init, make_perturbation, PerturbationSpec};
use crate::powerflow::OperatingPoint;
use crate::sobol::SobolSampler;

/// Time-dependent voltage envelopes plus a symmetric frequency band.
///
/// Envelopes are piecewise-linear in `(time, value)` knots; before the first
/// knot and after the last the value is held constant. A repeated time makes
/// a step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RideThroughCurve {
    pub low_v: Vec<(f64, f64)>,
    pub high_v: Vec<(f64, f64)>,
    /// Allowed |frequency offset| in Hz at normal-form buses.
    pub freq_band_hz: f64,
}

impl Default for RideThroughCurve {
    fn default() -> Self {
        Self {
            low_v: vec![(0.0, 0.15), (0.15, 0.15), (3.0, 0.85)],
            high_v: vec![(0.0, 1.3), (0.1, 1.3), (0.1, 1.2)],
            freq_band_hz: 2.0,
        }
    }
}

fn eval_envelope(knots: &[(f64, f64)], t: f64) -> f64 {
    let first = knots.first().expect("empty envelope");
    let last = knots.last().unwrap();
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    for w in knots.windows(2) {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        if t >= t0 && t <= t1 {
            if t1 == t0 {
                continue;
            }
            return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
        }
    }
    last.1
}

impl RideThroughCurve {
    pub fn low(&self, t: f64) -> f64 {
        eval_envelope(&self.low_v, t)
    }

    pub fn high(&self, t: f64) -> f64 {
        eval_envelope(&self.high_v, t)
    }

    pub fn validate(&self) -> Result<()> {
        for knots in [&self.low_v, &self.high_v] {
            if knots.is_empty() {
                return Err(Error::InvalidGrid("empty ride-through envelope".into()));
            }
            if knots.windows(2).any(|w| w[1].0 < w[0].0) {
                return Err(Error::InvalidGrid("envelope knots not sorted".into()));
            }
        }
        if !(self.freq_band_hz > 0.0) {
            return Err(Error::InvalidGrid("freq_band_hz must be > 0".into()));
        }
        Ok(())
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let curve: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        curve.validate()?;
        Ok(curve)
    }

    /// True when the state at time `t` violates no envelope.
    fn state_ok(&self, model: &DynModel, x: &nalgebra::DVector<f64>, t: f64) -> bool {
        let (lo, hi) = (self.low(t), self.high(t));
        let v = model.voltages(x);
        if v.iter().any(|vk| {
            let m = vk.norm();
            m < lo || m > hi
        }) {
            return false;
        }
        let band = 2.0 * std::f64::consts::PI * self.freq_band_hz;
        (0..model.layout.nf_buses.len()).all(|i| x[model.layout.nf_var(i) + 2].abs() <= band)
    }
}

/// Assessment controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FrtOptions {
    /// Length of the checked window (s).
    pub t_end: f64,
    /// Check-grid spacing (s).
    pub resolution: f64,
    /// Integration tolerance.
    pub tol: f64,
    /// Sobol samples per bus.
    pub n_samples: usize,
    /// Early success: after the envelopes settle, a state this close to the
    /// equilibrium (max-norm) cannot leave them anymore.
    pub settle_ball: f64,
}

impl Default for FrtOptions {
    fn default() -> Self {
        Self {
            t_end: 30.0,
            resolution: 0.01,
            tol: 1e-5,
            n_samples: 100,
            settle_ball: 0.05,
        }
    }
}

/// Classifies a finished trajectory on the full check grid.
pub fn classify(
    model: &DynModel,
    traj: &Trajectory,
    curve: &RideThroughCurve,
    opts: &FrtOptions,
) -> Result<bool> {
    if !traj.stopped_early && traj.end_time() + 1e-9 < opts.t_end {
        return Err(Error::TrajectoryTooShort {
            covered: traj.end_time(),
            needed: opts.t_end,
        });
    }
    let n = (opts.t_end / opts.resolution).round() as usize;
    for k in 0..=n {
        let t = (k as f64 * opts.resolution).min(traj.end_time());
        let x = traj.sample(model, t)?;
        if !curve.state_ok(model, &x, t) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Outcome of a single perturbation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Survived,
    Violated,
    InitFailed,
    IntegrationFailed,
}

/// Early-success certificate for settled transients.
///
/// In modal coordinates of the reduced linearized system every amplitude
/// `|z_i|` decays monotonically, so `sum_i |C S|_{ki} |z_i|` bounds all future
/// deviations of the constrained quantities (voltage magnitudes, frequencies).
/// Once every bound fits inside the strictest envelope values with a safety
/// shrink, the run cannot violate anymore and counts as survived.
pub struct SettleCertificate {
    s_lu: nalgebra::LU<num_complex::Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    bound: nalgebra::DMatrix<f64>,
    margins: nalgebra::DVector<f64>,
    x_eq_diff: nalgebra::DVector<f64>,
    nd: usize,
}

impl SettleCertificate {
    /// Shrink factor on the envelope margins to absorb nonlinear error.
    pub const MARGIN_SHRINK: f64 = 0.8;

    pub fn build(
        model: &DynModel,
        x_eq: &nalgebra::DVector<f64>,
        curve: &RideThroughCurve,
    ) -> Option<Self> {
        let a = crate::stability::reduced_state_matrix(model, x_eq).ok()?;
        let nd = model.layout.n_diff();
        let na = model.layout.n_alg();
        if nd == 0 {
            return None;
        }
        let (eig, s) = crate::stability::eigen_decomposition(&a).ok()?;
        if eig.iter().any(|e| e.re >= -crate::stability::EPS_EIG) {
            return None;
        }
        let s_lu = s.clone().lu();

        // sensitivity of the algebraic variables to the differential ones
        let m_alg = if na > 0 {
            let (_, jg) = model.jacobian(x_eq).ok()?;
            let g_x = jg.columns(0, nd).into_owned();
            let g_y = jg.columns(nd, na).into_owned();
            Some(-(g_y.lu().solve(&g_x)?))
        } else {
            None
        };

        let strict_low = curve
            .low_v
            .iter()
            .map(|k| k.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let strict_high = curve.high_v.iter().map(|k| k.1).fold(f64::INFINITY, f64::min);
        let v_eq = model.voltages(x_eq);

        let n_nf = model.layout.nf_buses.len();
        let n_pq = model.layout.pq_buses.len();
        let rows = n_nf + n_pq + n_nf;
        let mut c = nalgebra::DMatrix::<f64>::zeros(rows, nd);
        let mut margins = nalgebra::DVector::<f64>::zeros(rows);
        let mut r = 0;
        for (i, &b) in model.layout.nf_buses.iter().enumerate() {
            let a0 = model.layout.nf_var(i);
            let vm = v_eq[b].norm();
            c[(r, a0)] = v_eq[b].re / vm;
            c[(r, a0 + 1)] = v_eq[b].im / vm;
            margins[r] = Self::MARGIN_SHRINK * (vm - strict_low).min(strict_high - vm);
            r += 1;
        }
        for (j, &b) in model.layout.pq_buses.iter().enumerate() {
            let m = m_alg.as_ref().unwrap();
            let vm = v_eq[b].norm();
            for col in 0..nd {
                c[(r, col)] =
                    (v_eq[b].re * m[(2 * j, col)] + v_eq[b].im * m[(2 * j + 1, col)]) / vm;
            }
            margins[r] = Self::MARGIN_SHRINK * (vm - strict_low).min(strict_high - vm);
            r += 1;
        }
        let band = 2.0 * std::f64::consts::PI * curve.freq_band_hz;
        for i in 0..n_nf {
            c[(r, model.layout.nf_var(i) + 2)] = 1.0;
            margins[r] = Self::MARGIN_SHRINK * band;
            r += 1;
        }
        if margins.iter().any(|&m| m <= 0.0) {
            return None;
        }

        let cs = c.map(|x| num_complex::Complex64::new(x, 0.0)) * &s;
        let bound = cs.map(|x| x.norm());
        Some(Self {
            s_lu,
            bound,
            margins,
            x_eq_diff: x_eq.rows(0, nd).into_owned(),
            nd,
        })
    }

    /// True when no future envelope violation is possible from `x` under the
    /// linearized dynamics.
    pub fn certifies(&self, x: &nalgebra::DVector<f64>) -> bool {
        let dx = x.rows(0, self.nd) - &self.x_eq_diff;
        let dxc = dx.map(|v| num_complex::Complex64::new(v, 0.0));
        let z = match self.s_lu.solve(&dxc) {
            Some(z) => z,
            None => return false,
        };
        let amp = z.map(|v| v.norm());
        let m = &self.bound * amp;
        m.iter().zip(self.margins.iter()).all(|(a, b)| a <= b)
    }
}

/// Per-bus quantities the envelopes constrain: voltage magnitudes everywhere
/// and frequency offsets at normal-form buses.
fn envelope_coords(model: &DynModel, x: &nalgebra::DVector<f64>) -> (Vec<f64>, Vec<f64>) {
    let vmag = model.voltages(x).iter().map(|v| v.norm()).collect();
    let dom = (0..model.layout.nf_buses.len())
        .map(|i| x[model.layout.nf_var(i) + 2])
        .collect();
    (vmag, dom)
}

fn coords_ok(curve: &RideThroughCurve, vmag: &[f64], dom: &[f64], t: f64) -> bool {
    let (lo, hi) = (curve.low(t), curve.high(t));
    let band = 2.0 * std::f64::consts::PI * curve.freq_band_hz;
    vmag.iter().all(|&m| m >= lo && m <= hi) && dom.iter().all(|&w| w.abs() <= band)
}

/// Integrates one consistent initial state and classifies it, exiting early on
/// the first envelope violation or once the state has settled near the
/// equilibrium after the envelopes have flattened.
///
/// Between accepted steps the checked quantities are linearly interpolated on
/// the resolution grid; [`classify`] on the full dense output is the reference
/// this fast path is tested against.
pub fn run_one(
    model: &DynModel,
    x_eq: &nalgebra::DVector<f64>,
    x0: &nalgebra::DVector<f64>,
    curve: &RideThroughCurve,
    opts: &FrtOptions,
    cert: Option<&SettleCertificate>,
) -> Outcome {
    let settle_t = curve
        .low_v
        .last()
        .map(|k| k.0)
        .unwrap_or(0.0)
        .max(curve.high_v.last().map(|k| k.0).unwrap_or(0.0));
    let iopts = IntegrateOptions::with_tol(opts.tol, opts.t_end);
    let res = opts.resolution;
    let (vmag0, dom0) = envelope_coords(model, x0);
    if !coords_ok(curve, &vmag0, &dom0, 0.0) {
        return Outcome::Violated;
    }
    let mut prev = (vmag0, dom0);
    let mut violated = false;
    let result = integrate_observed(model, x0, &iopts, |traj, t_prev, t_new| {
        let cur = envelope_coords(model, traj.states.last().unwrap());
        let h = t_new - t_prev;
        let mut k = (t_prev / res).floor() as usize + 1;
        loop {
            let t = k as f64 * res;
            if t > t_new {
                break;
            }
            let w = (t - t_prev) / h;
            let vmag: Vec<f64> = prev
                .0
                .iter()
                .zip(cur.0.iter())
                .map(|(a, b)| a + (b - a) * w)
                .collect();
            let dom: Vec<f64> = prev
                .1
                .iter()
                .zip(cur.1.iter())
                .map(|(a, b)| a + (b - a) * w)
                .collect();
            if !coords_ok(curve, &vmag, &dom, t) {
                violated = true;
                return Ok(StepControl::Stop);
            }
            k += 1;
        }
        if !coords_ok(curve, &cur.0, &cur.1, t_new) {
            violated = true;
            return Ok(StepControl::Stop);
        }
        let x = traj.states.last().unwrap();
        let settled = match cert {
            Some(c) => c.certifies(x),
            None => t_new > settle_t && (x - x_eq).amax() < opts.settle_ball,
        };
        prev = cur;
        if settled {
            return Ok(StepControl::Stop);
        }
        Ok(StepControl::Continue)
    });
    match result {
        Ok(_) if violated => Outcome::Violated,
        Ok(_) => Outcome::Survived,
        Err(_) => Outcome::IntegrationFailed,
    }
}

/// Per-bus assessment result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusAssessment {
    pub bus: usize,
    pub bus_kind: String,
    /// Survived count.
    pub v_star: usize,
    /// Total perturbations tried.
    pub v_total: usize,
    pub p_frt: f64,
    pub std_err: f64,
    pub n_init_failed: usize,
    pub n_integ_failed: usize,
}

/// Assesses one bus with `opts.n_samples` Sobol perturbations.
pub fn assess_bus(
    model: &DynModel,
    x_eq: &nalgebra::DVector<f64>,
    bus: usize,
    bus_kind: &str,
    spec: &PerturbationSpec,
    curve: &RideThroughCurve,
    opts: &FrtOptions,
    cert: Option<&SettleCertificate>,
) -> Result<BusAssessment> {
    let is_nf = model.layout.nf_buses.contains(&bus);
    let mut sampler = SobolSampler::new(spec.dim(is_nf))?;
    let mut v_star = 0;
    let mut n_init_failed = 0;
    let mut n_integ_failed = 0;
    for _ in 0..opts.n_samples {
        let u = sampler.next_point();
        let pert = make_perturbation(spec, &u, is_nf)?;
        let x0 = match consistent_init(model, x_eq, bus, &pert) {
            Ok(x0) => x0,
            Err(_) => {
                n_init_failed += 1;
                continue;
            }
        };
        match run_one(model, x_eq, &x0, curve, opts, cert) {
            Outcome::Survived => v_star += 1,
            Outcome::Violated => {}
            Outcome::InitFailed => n_init_failed += 1,
            Outcome::IntegrationFailed => n_integ_failed += 1,
        }
    }
    let n = opts.n_samples;
    let p = v_star as f64 / n as f64;
    Ok(BusAssessment {
        bus,
        bus_kind: bus_kind.to_string(),
        v_star,
        v_total: n,
        p_frt: p,
        std_err: (p * (1.0 - p) / n as f64).sqrt(),
        n_init_failed,
        n_integ_failed,
    })
}

/// Assesses every non-slack bus of a grid, in parallel over buses. The result
/// is deterministic: each bus uses its own Sobol stream.
pub fn assess_grid(
    grid: &Grid,
    op: &OperatingPoint,
    spec: &PerturbationSpec,
    curve: &RideThroughCurve,
    opts: &FrtOptions,
) -> Result<Vec<BusAssessment>> {
    curve.validate()?;
    let model = DynModel::new(grid, op);
    let x_eq = model.state_from_op(op);
    let cert = SettleCertificate::build(&model, &x_eq, curve);
    let targets: Vec<&crate::model::Bus> = grid
        .buses
        .iter()
        .filter(|b| !b.kind.is_slack())
        .collect();
    targets
        .par_iter()
        .map(|b| {
            assess_bus(
                &model,
                &x_eq,
                b.id,
                b.kind.name(),
                spec,
                curve,
                opts,
                cert.as_ref(),
            )
        })
        .collect()
}
