//! Grid DAE: normal-form differential buses, PQ algebraic buses, and a fixed
//! slack voltage. The state vector stacks, per NormalForm bus, the cartesian
//! voltage components and the frequency deviation (co-rotating frame), followed
//! by the cartesian voltages of the PQ buses as algebraic variables.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{BusKind, Grid, NormalFormParams};
use crate::powerflow::OperatingPoint;

/// Minimum voltage magnitude before the normal form's `vdot/v` row is
/// considered singular.
pub const V_SINGULAR: f64 = 1e-9;

/// Evaluates the normal-form right-hand side at one bus.
///
/// Returns `(domega_dot, vdot/v)` where the complex rate combines the radial
/// row with the phase advance `j*domega`.
pub fn normal_form_rhs(
    params: &NormalFormParams,
    v: Complex64,
    domega: f64,
    v_set: f64,
    p_set: f64,
    q_set: f64,
    p: f64,
    q: f64,
) -> Result<(f64, Complex64)> {
    let nu = v.norm_sqr();
    if nu.sqrt() < V_SINGULAR {
        return Err(Error::IntegrationFailure {
            t: f64::NAN,
            reason: "singular voltage in normal form".into(),
        });
    }
    let dnu = nu - v_set * v_set;
    let dp = p - p_set;
    let dq = q - q_set;
    let omega_dot =
        params.b_omega * domega + params.c_omega * dnu + params.g_omega * dp + params.h_omega * dq;
    let radial = params.b_v * domega + params.c_v * dnu + params.g_v * dp + params.h_v * dq;
    Ok((omega_dot, Complex64::new(radial, domega)))
}

/// Index layout of the stacked state vector.
#[derive(Debug, Clone)]
pub struct StateLayout {
    /// Bus ids of NormalForm buses, in bus order.
    pub nf_buses: Vec<usize>,
    /// Bus ids of PQ buses, in bus order.
    pub pq_buses: Vec<usize>,
    pub slack: usize,
    pub n_buses: usize,
}

impl StateLayout {
    pub fn of(grid: &Grid) -> Self {
        let nf_buses = grid
            .buses
            .iter()
            .filter(|b| b.kind.is_normal_form())
            .map(|b| b.id)
            .collect();
        let pq_buses = grid
            .buses
            .iter()
            .filter(|b| b.kind.is_load())
            .map(|b| b.id)
            .collect();
        Self {
            nf_buses,
            pq_buses,
            slack: grid.slack(),
            n_buses: grid.n_buses(),
        }
    }

    pub fn n_diff(&self) -> usize {
        3 * self.nf_buses.len()
    }
    pub fn n_alg(&self) -> usize {
        2 * self.pq_buses.len()
    }
    pub fn dim(&self) -> usize {
        self.n_diff() + self.n_alg()
    }

    /// State index of the voltage real part of NF bus `i` (by position).
    pub fn nf_var(&self, i: usize) -> usize {
        3 * i
    }
    /// State index of the voltage real part of PQ bus `j` (by position).
    pub fn pq_var(&self, j: usize) -> usize {
        self.n_diff() + 2 * j
    }
}

/// The assembled dynamic model of one grid at one operating point. Immutable;
/// safe to share across worker threads.
#[derive(Debug, Clone)]
pub struct DynModel {
    pub layout: StateLayout,
    pub y: DMatrix<Complex64>,
    /// NormalForm parameters per entry of `layout.nf_buses`.
    pub nf_params: Vec<NormalFormParams>,
    pub p_set: Vec<f64>,
    pub q_set: Vec<f64>,
    /// Voltage set points for NF buses (squared target for the dnu term).
    pub v_set: Vec<f64>,
    /// Fixed complex slack voltage during transients.
    pub slack_v: Complex64,
    /// Per-bus state variable base index of the voltage components, or None
    /// for the slack.
    v_index: Vec<Option<usize>>,
}

impl DynModel {
    /// Builds the model. NF reactive set points are taken from the bus data;
    /// the operating point supplies the frozen slack voltage.
    pub fn new(grid: &Grid, op: &OperatingPoint) -> Self {
        let layout = StateLayout::of(grid);
        let y = grid.admittance_matrix();
        let nf_params = layout
            .nf_buses
            .iter()
            .map(|&b| match &grid.buses[b].kind {
                BusKind::NormalForm { params } => *params,
                _ => unreachable!(),
            })
            .collect();
        let p_set = grid.buses.iter().map(|b| b.p_set).collect();
        let q_set = grid.buses.iter().map(|b| b.q_set).collect();
        let v_set = grid
            .buses
            .iter()
            .map(|b| b.v_set.unwrap_or(1.0))
            .collect();
        let mut v_index = vec![None; layout.n_buses];
        for (i, &b) in layout.nf_buses.iter().enumerate() {
            v_index[b] = Some(layout.nf_var(i));
        }
        for (j, &b) in layout.pq_buses.iter().enumerate() {
            v_index[b] = Some(layout.pq_var(j));
        }
        DynModel {
            slack_v: op.voltage(layout.slack),
            layout,
            y,
            nf_params,
            p_set,
            q_set,
            v_set,
            v_index,
        }
    }

    /// Stacks the operating point into a state vector (domega = 0).
    pub fn state_from_op(&self, op: &OperatingPoint) -> DVector<f64> {
        let mut x = DVector::zeros(self.layout.dim());
        for (i, &b) in self.layout.nf_buses.iter().enumerate() {
            let v = op.voltage(b);
            let a = self.layout.nf_var(i);
            x[a] = v.re;
            x[a + 1] = v.im;
            x[a + 2] = 0.0;
        }
        for (j, &b) in self.layout.pq_buses.iter().enumerate() {
            let v = op.voltage(b);
            let a = self.layout.pq_var(j);
            x[a] = v.re;
            x[a + 1] = v.im;
        }
        x
    }

    /// Complex voltage of every bus for the given state.
    pub fn voltages(&self, x: &DVector<f64>) -> Vec<Complex64> {
        (0..self.layout.n_buses)
            .map(|b| match self.v_index[b] {
                Some(a) => Complex64::new(x[a], x[a + 1]),
                None => self.slack_v,
            })
            .collect()
    }

    /// Net complex power injected into the network at every bus.
    pub fn network_power(&self, voltages: &[Complex64]) -> Vec<Complex64> {
        crate::powerflow::injections(&self.y, voltages)
    }

    /// Differential right-hand side `f` (length n_diff) and algebraic residual
    /// `g` (length n_alg).
    pub fn rhs(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let v = self.voltages(x);
        let s = self.network_power(&v);
        let mut f = DVector::zeros(self.layout.n_diff());
        let mut g = DVector::zeros(self.layout.n_alg());

        for (i, &b) in self.layout.nf_buses.iter().enumerate() {
            let a = self.layout.nf_var(i);
            let domega = x[a + 2];
            let (omega_dot, rate) = normal_form_rhs(
                &self.nf_params[i],
                v[b],
                domega,
                self.v_set[b],
                self.p_set[b],
                self.q_set[b],
                s[b].re,
                s[b].im,
            )?;
            // complex vdot = rate * v
            f[a] = rate.re * v[b].re - rate.im * v[b].im;
            f[a + 1] = rate.re * v[b].im + rate.im * v[b].re;
            f[a + 2] = omega_dot;
        }
        for (j, &b) in self.layout.pq_buses.iter().enumerate() {
            let a = 2 * j;
            g[a] = s[b].re - self.p_set[b];
            g[a + 1] = s[b].im - self.q_set[b];
        }
        Ok((f, g))
    }

    /// Analytic Jacobians of `f` and `g` with respect to the full state.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let v = self.voltages(x);
        let n = self.layout.n_buses;
        let dim = self.layout.dim();

        // complex currents I = Y v
        let mut cur = vec![Complex64::default(); n];
        for k in 0..n {
            let mut i_k = Complex64::default();
            for m in 0..n {
                i_k += self.y[(k, m)] * v[m];
            }
            cur[k] = i_k;
        }
        let s: Vec<Complex64> = (0..n).map(|k| v[k] * cur[k].conj()).collect();

        // dS[m]/d(vr_b), dS[m]/d(vi_b) for every pair of non-slack buses
        let ds = |m: usize, b: usize| -> (Complex64, Complex64) {
            let ycc = self.y[(m, b)].conj();
            let mut d_re = v[m] * ycc;
            let mut d_im = -Complex64::i() * v[m] * ycc;
            if m == b {
                d_re += cur[m].conj();
                d_im += Complex64::i() * cur[m].conj();
            }
            (d_re, d_im)
        };

        let mut jf = DMatrix::zeros(self.layout.n_diff(), dim);
        let mut jg = DMatrix::zeros(self.layout.n_alg(), dim);

        // columns iterate over state variables of every modeled bus
        let var_buses: Vec<(usize, usize)> = (0..n)
            .filter_map(|b| self.v_index[b].map(|a| (b, a)))
            .collect();

        for (i, &bm) in self.layout.nf_buses.iter().enumerate() {
            let a = self.layout.nf_var(i);
            let p = &self.nf_params[i];
            let domega = x[a + 2];
            let vm = v[bm];
            if vm.norm() < V_SINGULAR {
                return Err(Error::IntegrationFailure {
                    t: f64::NAN,
                    reason: "singular voltage in Jacobian".into(),
                });
            }
            let dnu = vm.norm_sqr() - self.v_set[bm] * self.v_set[bm];
            let dp = s[bm].re - self.p_set[bm];
            let dq = s[bm].im - self.q_set[bm];
            let radial = p.b_v * domega + p.c_v * dnu + p.g_v * dp + p.h_v * dq;

            for &(bb, ab) in &var_buses {
                let (dsr, dsi) = ds(bm, bb);
                for (col, dsc) in [(ab, dsr), (ab + 1, dsi)] {
                    let mut dnu_d = 0.0;
                    if bb == bm {
                        dnu_d = if col == ab { 2.0 * vm.re } else { 2.0 * vm.im };
                    }
                    let d_radial = p.c_v * dnu_d + p.g_v * dsc.re + p.h_v * dsc.im;
                    let d_omega_dot = p.c_omega * dnu_d + p.g_omega * dsc.re + p.h_omega * dsc.im;
                    let mut d_fvr = d_radial * vm.re;
                    let mut d_fvi = d_radial * vm.im;
                    if bb == bm {
                        if col == ab {
                            d_fvr += radial;
                            d_fvi += domega;
                        } else {
                            d_fvr -= domega;
                            d_fvi += radial;
                        }
                    }
                    jf[(a, col)] = d_fvr;
                    jf[(a + 1, col)] = d_fvi;
                    jf[(a + 2, col)] = d_omega_dot;
                }
            }
            // frequency column
            jf[(a, a + 2)] = p.b_v * vm.re - vm.im;
            jf[(a + 1, a + 2)] = p.b_v * vm.im + vm.re;
            jf[(a + 2, a + 2)] = p.b_omega;
        }

        for (j, &bm) in self.layout.pq_buses.iter().enumerate() {
            let r = 2 * j;
            for &(bb, ab) in &var_buses {
                let (dsr, dsi) = ds(bm, bb);
                jg[(r, ab)] = dsr.re;
                jg[(r, ab + 1)] = dsi.re;
                jg[(r + 1, ab)] = dsr.im;
                jg[(r + 1, ab + 1)] = dsi.im;
            }
        }

        Ok((jf, jg))
    }

    /// Full DAE residual for the given state and state derivative:
    /// differential rows `xdot - f(x)`, algebraic rows `g(x)`.
    pub fn dae_residual(&self, x: &DVector<f64>, xdot: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.layout.dim() || xdot.len() != self.layout.dim() {
            return Err(Error::DimensionMismatch(format!(
                "state length {} / {} vs layout {}",
                x.len(),
                xdot.len(),
                self.layout.dim()
            )));
        }
        let (f, g) = self.rhs(x)?;
        let mut r = DVector::zeros(self.layout.dim());
        let nd = self.layout.n_diff();
        for i in 0..nd {
            r[i] = xdot[i] - f[i];
        }
        for i in 0..self.layout.n_alg() {
            r[nd + i] = g[i];
        }
        Ok(r)
    }

    /// Max-norm of the algebraic residual.
    pub fn algebraic_residual(&self, x: &DVector<f64>) -> Result<f64> {
        let (_, g) = self.rhs(x)?;
        Ok(g.amax())
    }

    /// Damped-Newton solve of the algebraic rows for the algebraic variables,
    /// holding all differential states fixed. `skip_pq` excludes one PQ bus
    /// (its two variables stay pinned and its two rows are dropped).
    pub fn solve_algebraic(
        &self,
        x: &mut DVector<f64>,
        skip_pq: Option<usize>,
        tol: f64,
        max_iter: usize,
    ) -> Result<()> {
        let free: Vec<usize> = (0..self.layout.pq_buses.len())
            .filter(|&j| Some(self.layout.pq_buses[j]) != skip_pq)
            .collect();
        if free.is_empty() {
            return Ok(());
        }
        let m = 2 * free.len();
        let (_, mut g) = self.rhs(x)?;
        let mut norm = masked_alg_norm(&g, &free);
        for _ in 0..max_iter {
            if norm < tol {
                return Ok(());
            }
            let (_, jg) = self.jacobian(x)?;
            let mut a = DMatrix::zeros(m, m);
            let mut rhs = DVector::zeros(m);
            for (ri, &j) in free.iter().enumerate() {
                for k in 0..2 {
                    rhs[2 * ri + k] = g[2 * j + k];
                    for (ci, &j2) in free.iter().enumerate() {
                        let col = self.layout.pq_var(j2);
                        a[(2 * ri + k, 2 * ci)] = jg[(2 * j + k, col)];
                        a[(2 * ri + k, 2 * ci + 1)] = jg[(2 * j + k, col + 1)];
                    }
                }
            }
            let dx = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::ConsistentInit("singular algebraic Jacobian".into()))?;

            // backtracking on the residual norm
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let mut trial = x.clone();
                for (ci, &j) in free.iter().enumerate() {
                    let col = self.layout.pq_var(j);
                    trial[col] -= lambda * dx[2 * ci];
                    trial[col + 1] -= lambda * dx[2 * ci + 1];
                }
                match self.rhs(&trial) {
                    Ok((_, gt)) => {
                        let nt = masked_alg_norm(&gt, &free);
                        if nt < norm || nt < tol {
                            *x = trial;
                            g = gt;
                            norm = nt;
                            accepted = true;
                            break;
                        }
                    }
                    Err(_) => {}
                }
                lambda *= 0.5;
            }
            if !accepted {
                return Err(Error::ConsistentInit(format!(
                    "damped Newton stalled at residual {norm:.3e}"
                )));
            }
        }
        if norm < tol {
            Ok(())
        } else {
            Err(Error::ConsistentInit(format!(
                "algebraic Newton did not converge (residual {norm:.3e})"
            )))
        }
    }
}

fn masked_alg_norm(g: &DVector<f64>, free: &[usize]) -> f64 {
    free.iter()
        .flat_map(|&j| [g[2 * j].abs(), g[2 * j + 1].abs()])
        .fold(0.0, f64::max)
}
