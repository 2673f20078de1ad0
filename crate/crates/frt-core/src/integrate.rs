//! Adaptive implicit integration of the grid DAE.
//!
//! Variable-step BDF (order 1 on the first step, order 2 afterwards) with a
//! modified Newton corrector on the analytic Jacobian. Algebraic rows are
//! enforced exactly at every step; the error estimate and step controller act
//! on the differential variables only. Dense output interpolates the
//! differential states and re-projects the algebraic variables onto the
//! constraint manifold, so sampled states satisfy the constraints to solver
//! accuracy.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::DynModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    pub t_end: f64,
    pub h0: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl IntegrateOptions {
    /// Options with a single tolerance knob; `atol = tol / 100`.
    pub fn with_tol(tol: f64, t_end: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol * 1e-2,
            t_end,
            h0: 1e-4,
            h_max: 1.0,
            max_steps: 200_000,
        }
    }
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self::with_tol(1e-6, 30.0)
    }
}

/// Verdict of a step observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    Stop,
}

/// Piecewise solution with dense-output capability.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Differential right-hand side at each stored state (for Hermite
    /// interpolation).
    derivs: Vec<DVector<f64>>,
    /// Tolerance the trajectory was produced with; dense-output projection
    /// targets 10x this value.
    pub rtol: f64,
    /// True if an observer stopped the run before `t_end`.
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    /// State at time `t` (clamped to the covered interval). Differential
    /// variables are cubic-Hermite interpolated; algebraic variables are
    /// projected back onto the constraints.
    pub fn sample(&self, model: &DynModel, t: f64) -> Result<DVector<f64>> {
        let t = t.clamp(self.times[0], self.end_time());
        let k = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(i) => return Ok(self.states[i].clone()),
            Err(i) => i.saturating_sub(1).min(self.times.len() - 2),
        };
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (x0, x1) = (&self.states[k], &self.states[k + 1]);
        let (f0, f1) = (&self.derivs[k], &self.derivs[k + 1]);

        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);

        let nd = model.layout.n_diff();
        let mut x = DVector::zeros(x0.len());
        for i in 0..nd {
            x[i] = h00 * x0[i] + h10 * h * f0[i] + h01 * x1[i] + h11 * h * f1[i];
        }
        for i in nd..x0.len() {
            x[i] = (1.0 - s) * x0[i] + s * x1[i];
        }
        if model.layout.n_alg() > 0 {
            model.solve_algebraic(&mut x, None, 10.0 * self.rtol, 30).map_err(|e| {
                Error::IntegrationFailure {
                    t,
                    reason: format!("dense-output projection failed: {e}"),
                }
            })?;
        }
        Ok(x)
    }
}

struct Stepper<'m> {
    model: &'m DynModel,
    opts: IntegrateOptions,
    /// Factored Newton matrix and the (h * beta) it was built with.
    lu: Option<(f64, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
}

impl<'m> Stepper<'m> {
    fn wrms(&self, e: &DVector<f64>, x: &DVector<f64>, nd: usize) -> f64 {
        if nd == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..nd {
            let w = self.opts.atol + self.opts.rtol * x[i].abs();
            acc += (e[i] / w) * (e[i] / w);
        }
        (acc / nd as f64).sqrt()
    }

    fn build_lu(&mut self, x: &DVector<f64>, hb: f64) -> Result<()> {
        let (jf, jg) = self.model.jacobian(x)?;
        let dim = self.model.layout.dim();
        let nd = self.model.layout.n_diff();
        let mut m = DMatrix::zeros(dim, dim);
        for r in 0..nd {
            for c in 0..dim {
                m[(r, c)] = -hb * jf[(r, c)];
            }
            m[(r, r)] += 1.0;
        }
        for r in 0..self.model.layout.n_alg() {
            for c in 0..dim {
                m[(nd + r, c)] = jg[(r, c)];
            }
        }
        self.lu = Some((hb, m.lu()));
        Ok(())
    }

    /// One implicit solve: find z with
    /// `z - hb*f(z) = rhs_diff` (diff rows), `g(z) = 0` (alg rows).
    /// Returns the converged state and its rhs evaluation.
    fn corrector(
        &mut self,
        pred: &DVector<f64>,
        rhs_diff: &DVector<f64>,
        hb: f64,
        allow_rebuild: bool,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let nd = self.model.layout.n_diff();
        let dim = self.model.layout.dim();
        if self
            .lu
            .as_ref()
            .map_or(true, |(h_used, _)| (hb - h_used).abs() > 0.1 * h_used.abs())
        {
            self.build_lu(pred, hb)?;
        }
        let mut z = pred.clone();
        let mut rebuilt = false;
        let mut last_norm = f64::INFINITY;
        for _it in 0..12 {
            let (f, g) = self.model.rhs(&z)?;
            let mut res = DVector::zeros(dim);
            for i in 0..nd {
                res[i] = z[i] - hb * f[i] - rhs_diff[i];
            }
            for i in 0..self.model.layout.n_alg() {
                res[nd + i] = g[i];
            }
            let (_, lu) = self.lu.as_ref().unwrap();
            let dz = lu.solve(&res).ok_or_else(|| Error::IntegrationFailure {
                t: f64::NAN,
                reason: "singular iteration matrix".into(),
            })?;
            z -= &dz;
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::IntegrationFailure {
                    t: f64::NAN,
                    reason: "non-finite Newton iterate".into(),
                });
            }
            let norm = self.wrms(&dz, &z, dim);
            let abs_floor = 100.0 * f64::EPSILON * (1.0 + z.amax());
            if norm < 0.33 || dz.amax() < abs_floor {
                let (f, _) = self.model.rhs(&z)?;
                return Ok((z, f));
            }
            // diverging or stalling: refresh the Jacobian once, then give up
            if norm > 0.9 * last_norm {
                if allow_rebuild && !rebuilt {
                    self.build_lu(&z, hb)?;
                    rebuilt = true;
                } else if norm > last_norm {
                    break;
                }
            }
            last_norm = norm;
        }
        Err(Error::IntegrationFailure {
            t: f64::NAN,
            reason: "corrector did not converge".into(),
        })
    }
}

/// Integrates from a consistent initial state to `opts.t_end`.
pub fn integrate(model: &DynModel, x0: &DVector<f64>, opts: &IntegrateOptions) -> Result<Trajectory> {
    integrate_observed(model, x0, opts, |_, _, _| Ok(StepControl::Continue))
}

/// Integration with a per-step observer. The observer sees the trajectory
/// built so far plus the time window `(t_prev, t_new)` of the step just
/// accepted; returning [`StepControl::Stop`] ends the run early.
pub fn integrate_observed<F>(
    model: &DynModel,
    x0: &DVector<f64>,
    opts: &IntegrateOptions,
    mut observer: F,
) -> Result<Trajectory>
where
    F: FnMut(&Trajectory, f64, f64) -> Result<StepControl>,
{
    if x0.len() != model.layout.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial state length {} vs layout {}",
            x0.len(),
            model.layout.dim()
        )));
    }
    let alg0 = model.algebraic_residual(x0)?;
    if alg0 > 1e-6 {
        return Err(Error::IntegrationFailure {
            t: 0.0,
            reason: format!("inconsistent initial state (algebraic residual {alg0:.3e})"),
        });
    }

    let mut st = Stepper {
        model,
        opts: opts.clone(),
        lu: None,
    };
    let nd = model.layout.n_diff();
    let (f0, _) = model.rhs(x0)?;

    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.clone()],
        derivs: vec![f0],
        rtol: opts.rtol,
        stopped_early: false,
    };

    let mut t = 0.0;
    let mut h = opts.h0.min(opts.t_end);
    let mut h_prev: Option<f64> = None; // step size behind the last accepted step
    let mut steps = 0usize;

    while t < opts.t_end - 1e-12 {
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::IntegrationFailure {
                t,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }
        h = h.min(opts.t_end - t).min(opts.h_max);
        if h < 1e-12 {
            return Err(Error::IntegrationFailure {
                t,
                reason: "step-size collapse".into(),
            });
        }

        let k = traj.states.len() - 1;
        let xn = traj.states[k].clone();
        let fn_ = traj.derivs[k].clone();

        // predictor and BDF coefficients
        let (pred, rhs_diff, hb) = match h_prev {
            None => {
                // BDF1 with explicit-Euler predictor
                let mut pred = xn.clone();
                for i in 0..nd {
                    pred[i] += h * fn_[i];
                }
                (pred, xn.clone().rows(0, nd).into_owned(), h)
            }
            Some(hp) => {
                let rho = h / hp;
                let a1 = -(1.0 + rho) * (1.0 + rho) / (1.0 + 2.0 * rho);
                let a2 = rho * rho / (1.0 + 2.0 * rho);
                let beta = (1.0 + rho) / (1.0 + 2.0 * rho);
                let xm = &traj.states[k - 1];
                let mut rhs = DVector::zeros(nd);
                for i in 0..nd {
                    rhs[i] = -(a1 * xn[i] + a2 * xm[i]);
                }
                let mut pred = xn.clone();
                for i in 0..xn.len() {
                    pred[i] = xn[i] + rho * (xn[i] - xm[i]);
                }
                (pred, rhs, h * beta)
            }
        };

        match st.corrector(&pred, &rhs_diff, hb, true) {
            Ok((z, fz)) => {
                // local error estimate: against quadratic extrapolation once
                // enough history exists (O(h^3), matching BDF2), otherwise
                // against the one-order-lower predictor
                let (est, inv_order) = if k >= 2 && h_prev.is_some() {
                    let t_new = t + h;
                    let (t0, t1, t2) = (traj.times[k - 2], traj.times[k - 1], traj.times[k]);
                    let (y0, y1, y2) = (&traj.states[k - 2], &traj.states[k - 1], &traj.states[k]);
                    let l0 = (t_new - t1) * (t_new - t2) / ((t0 - t1) * (t0 - t2));
                    let l1 = (t_new - t0) * (t_new - t2) / ((t1 - t0) * (t1 - t2));
                    let l2 = (t_new - t0) * (t_new - t1) / ((t2 - t0) * (t2 - t1));
                    let mut e = DVector::zeros(nd);
                    for i in 0..nd {
                        e[i] = z[i] - (l0 * y0[i] + l1 * y1[i] + l2 * y2[i]);
                    }
                    (st.wrms(&e, &z, nd) / 3.0, 1.0 / 3.0)
                } else {
                    let err_vec = &z - &pred;
                    (st.wrms(&err_vec, &z, nd) / 2.0, 1.0 / 2.0)
                };
                if est <= 1.0 {
                    let t_new = t + h;
                    traj.times.push(t_new);
                    traj.states.push(z);
                    traj.derivs.push(fz);
                    let t_prev = t;
                    t = t_new;
                    h_prev = Some(h);
                    let factor = if est > 0.0 {
                        (0.9 * est.powf(-inv_order)).clamp(0.2, 4.0)
                    } else {
                        4.0
                    };
                    h *= factor;
                    if observer(&traj, t_prev, t_new)? == StepControl::Stop {
                        traj.stopped_early = true;
                        return Ok(traj);
                    }
                } else {
                    let factor = (0.9 * est.powf(-inv_order)).clamp(0.1, 0.9);
                    h *= factor;
                    st.lu = None;
                }
            }
            Err(Error::IntegrationFailure { reason, .. }) => {
                // corrector trouble: retry with a smaller step
                if h <= 1e-11 {
                    return Err(Error::IntegrationFailure { t, reason });
                }
                h *= 0.25;
                st.lu = None;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}
