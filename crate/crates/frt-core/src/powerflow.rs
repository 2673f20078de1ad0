//! Newton-Raphson AC load flow in polar coordinates.
//!
//! NormalForm buses are treated as PV (voltage-magnitude targets, reactive
//! power computed), PQ loads as PQ, and the single slack holds magnitude and
//! angle. All quantities in per-unit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{BusKind, Grid};

/// Converged operating point: polar voltages and net injections per bus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OperatingPoint {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl OperatingPoint {
    pub fn voltage(&self, bus: usize) -> Complex64 {
        Complex64::from_polar(self.v[bus], self.theta[bus])
    }

    pub fn voltages(&self) -> Vec<Complex64> {
        (0..self.v.len()).map(|i| self.voltage(i)).collect()
    }
}

/// Net complex injection at every bus for the given complex voltages.
pub fn injections(y: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    let mut s = vec![Complex64::default(); n];
    for k in 0..n {
        let mut i_k = Complex64::default();
        for m in 0..n {
            i_k += y[(k, m)] * v[m];
        }
        s[k] = v[k] * i_k.conj();
    }
    s
}

pub struct LoadFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LoadFlowOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 40,
        }
    }
}

/// Solves the load flow. PV magnitudes come from `v_set` (falling back to 1.0),
/// the slack angle is fixed at zero.
pub fn newton_load_flow(grid: &Grid, opts: &LoadFlowOptions) -> Result<OperatingPoint> {
    let n = grid.n_buses();
    let y = grid.admittance_matrix();
    let slack = grid.slack();

    let mut pv: Vec<usize> = Vec::new();
    let mut pq: Vec<usize> = Vec::new();
    for b in &grid.buses {
        match b.kind {
            BusKind::NormalForm { .. } => pv.push(b.id),
            BusKind::PqLoad => pq.push(b.id),
            BusKind::Slack => {}
        }
    }

    let mut vm = vec![1.0; n];
    let mut th = vec![0.0; n];
    for b in &grid.buses {
        if !b.kind.is_load() {
            vm[b.id] = b.v_set.unwrap_or(1.0);
        }
    }

    // unknown ordering: theta at pv+pq, then v at pq
    let ang: Vec<usize> = pv.iter().chain(pq.iter()).copied().collect();
    let n_ang = ang.len();
    let n_unknown = n_ang + pq.len();

    let mut residual_norm = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let v: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(vm[k], th[k])).collect();
        let s = injections(&y, &v);

        let mut mis = DVector::zeros(n_unknown);
        for (i, &k) in ang.iter().enumerate() {
            mis[i] = s[k].re - grid.buses[k].p_set;
        }
        for (i, &k) in pq.iter().enumerate() {
            mis[n_ang + i] = s[k].im - grid.buses[k].q_set;
        }
        residual_norm = mis.amax();
        if residual_norm < opts.tol {
            let q: Vec<f64> = (0..n).map(|k| s[k].im).collect();
            let p: Vec<f64> = (0..n).map(|k| s[k].re).collect();
            return Ok(OperatingPoint {
                v: vm,
                theta: th,
                p,
                q,
            });
        }
        if it == opts.max_iter {
            break;
        }

        // polar power-flow Jacobian
        let mut jac = DMatrix::zeros(n_unknown, n_unknown);
        let dp_dth = |k: usize, m: usize| -> f64 {
            if k == m {
                -s[k].im - y[(k, k)].im * vm[k] * vm[k]
            } else {
                let g = y[(k, m)].re;
                let b = y[(k, m)].im;
                let dth = th[k] - th[m];
                vm[k] * vm[m] * (g * dth.sin() - b * dth.cos())
            }
        };
        let dq_dth = |k: usize, m: usize| -> f64 {
            if k == m {
                s[k].re - y[(k, k)].re * vm[k] * vm[k]
            } else {
                let g = y[(k, m)].re;
                let b = y[(k, m)].im;
                let dth = th[k] - th[m];
                -vm[k] * vm[m] * (g * dth.cos() + b * dth.sin())
            }
        };
        let dp_dv = |k: usize, m: usize| -> f64 {
            if k == m {
                s[k].re / vm[k] + y[(k, k)].re * vm[k]
            } else {
                let g = y[(k, m)].re;
                let b = y[(k, m)].im;
                let dth = th[k] - th[m];
                vm[k] * (g * dth.cos() + b * dth.sin())
            }
        };
        let dq_dv = |k: usize, m: usize| -> f64 {
            if k == m {
                s[k].im / vm[k] - y[(k, k)].im * vm[k]
            } else {
                let g = y[(k, m)].re;
                let b = y[(k, m)].im;
                let dth = th[k] - th[m];
                vm[k] * (g * dth.sin() - b * dth.cos())
            }
        };

        for (i, &k) in ang.iter().enumerate() {
            for (j, &m) in ang.iter().enumerate() {
                jac[(i, j)] = dp_dth(k, m);
            }
            for (j, &m) in pq.iter().enumerate() {
                jac[(i, n_ang + j)] = dp_dv(k, m);
            }
        }
        for (i, &k) in pq.iter().enumerate() {
            for (j, &m) in ang.iter().enumerate() {
                jac[(n_ang + i, j)] = dq_dth(k, m);
            }
            for (j, &m) in pq.iter().enumerate() {
                jac[(n_ang + i, n_ang + j)] = dq_dv(k, m);
            }
        }

        let lu = jac.lu();
        let dx = lu
            .solve(&mis)
            .ok_or_else(|| Error::InfeasibleDispatch("singular load-flow Jacobian".into()))?;
        for (i, &k) in ang.iter().enumerate() {
            th[k] -= dx[i];
        }
        for (i, &k) in pq.iter().enumerate() {
            vm[k] -= dx[n_ang + i];
            if vm[k] <= 1e-3 {
                return Err(Error::InfeasibleDispatch(format!(
                    "voltage collapse at bus {k} during load flow"
                )));
            }
        }
    }
    let _ = slack;
    Err(Error::LoadFlowDiverged {
        iterations: opts.max_iter,
        residual: residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bus, BusKind, Grid, Line, LineParams, PerUnitBase};
    use approx::assert_relative_eq;

    #[test]
    fn single_slack_bus() {
        let base = PerUnitBase::transmission_380kv();
        let g = Grid::new(
            vec![Bus {
                id: 0,
                kind: BusKind::Slack,
                p_set: 0.0,
                q_set: 0.0,
                v_set: Some(1.0),
            }],
            vec![],
            base,
        )
        .unwrap();
        let op = newton_load_flow(&g, &LoadFlowOptions::default()).unwrap();
        assert_eq!(op.v, vec![1.0]);
        assert_eq!(op.theta, vec![0.0]);
        assert_relative_eq!(op.p[0], 0.0);
        assert_relative_eq!(op.q[0], 0.0);
    }

    #[test]
    fn flat_start_exact_for_zero_load() {
        let base = PerUnitBase::transmission_380kv();
        // lossless line, zero loads -> flat profile is the exact solution
        let params = LineParams {
            r_per_km: 0.0,
            x_per_km: 0.25,
            c_sh_per_km: 0.0,
            length: 100.0,
        };
        let line = Line::new(0, 1, params, &base).unwrap();
        let g = Grid::new(
            vec![
                Bus {
                    id: 0,
                    kind: BusKind::Slack,
                    p_set: 0.0,
                    q_set: 0.0,
                    v_set: Some(1.0),
                },
                Bus {
                    id: 1,
                    kind: BusKind::PqLoad,
                    p_set: 0.0,
                    q_set: 0.0,
                    v_set: None,
                },
            ],
            vec![line],
            base,
        )
        .unwrap();
        let op = newton_load_flow(&g, &LoadFlowOptions::default()).unwrap();
        assert_relative_eq!(op.v[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(op.theta[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(op.p[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_below_tolerance_with_load() {
        let base = PerUnitBase::transmission_380kv();
        let line = Line::new(0, 1, LineParams::standard_380kv(100.0), &base).unwrap();
        let g = Grid::new(
            vec![
                Bus {
                    id: 0,
                    kind: BusKind::Slack,
                    p_set: 0.0,
                    q_set: 0.0,
                    v_set: Some(1.0),
                },
                Bus {
                    id: 1,
                    kind: BusKind::PqLoad,
                    p_set: -0.5,
                    q_set: 0.0,
                    v_set: None,
                },
            ],
            vec![line],
            base,
        )
        .unwrap();
        let op = newton_load_flow(&g, &LoadFlowOptions::default()).unwrap();
        let y = g.admittance_matrix();
        let s = injections(&y, &op.voltages());
        assert!((s[1].re + 0.5).abs() < 1e-8);
        assert!(s[1].im.abs() < 1e-8);
        // light load + line charging: voltage close to but not exactly 1
        assert!((op.v[1] - 1.0).abs() < 0.05 && op.v[1] != 1.0);
    }

    #[test]
    fn pv_bus_hits_voltage_target() {
        let base = PerUnitBase::transmission_380kv();
        let l01 = Line::new(0, 1, LineParams::standard_380kv(60.0), &base).unwrap();
        let l12 = Line::new(1, 2, LineParams::standard_380kv(60.0), &base).unwrap();
        let g = Grid::new(
            vec![
                Bus {
                    id: 0,
                    kind: BusKind::Slack,
                    p_set: 0.0,
                    q_set: 0.0,
                    v_set: Some(1.0),
                },
                Bus {
                    id: 1,
                    kind: BusKind::NormalForm {
                        params: crate::model::NormalFormParams::nf1(),
                    },
                    p_set: 0.8,
                    q_set: 0.0,
                    v_set: Some(1.0),
                },
                Bus {
                    id: 2,
                    kind: BusKind::PqLoad,
                    p_set: -0.7,
                    q_set: -0.2,
                    v_set: None,
                },
            ],
            vec![l01, l12],
            base,
        )
        .unwrap();
        let op = newton_load_flow(&g, &LoadFlowOptions::default()).unwrap();
        assert_relative_eq!(op.v[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(op.p[1], 0.8, epsilon = 1e-8);
    }
}
