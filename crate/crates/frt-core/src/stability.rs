//! Small-signal stability of the grid DAE at an operating point.
//!
//! The full Jacobian is split into differential and algebraic blocks and the
//! algebraic variables are eliminated through the Schur complement
//! `A = f_x - f_y g_y^{-1} g_x`. The reduced matrix must have all eigenvalues
//! in the open left half plane, except for at most one numerically-zero mode
//! (global phase invariance, broken only by the slack).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dynamics::DynModel;
use crate::error::{Error, Result};

/// Eigenvalues with real part above `-EPS_EIG` (and magnitude above the zero
///-mode threshold) mark the system unstable.
pub const EPS_EIG: f64 = 1e-6;
/// Eigenvalues below this magnitude count as the symmetry zero mode.
pub const ZERO_MODE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub enum StabilityVerdict {
    Stable { eigenvalues: Vec<Complex64> },
    Unstable { eigenvalues: Vec<Complex64> },
}

impl StabilityVerdict {
    pub fn is_stable(&self) -> bool {
        matches!(self, StabilityVerdict::Stable { .. })
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        match self {
            StabilityVerdict::Stable { eigenvalues } | StabilityVerdict::Unstable { eigenvalues } => {
                eigenvalues
            }
        }
    }
}

/// Reduced state matrix of the linearized DAE at state `x`.
pub fn reduced_state_matrix(model: &DynModel, x: &nalgebra::DVector<f64>) -> Result<DMatrix<f64>> {
    let (jf, jg) = model.jacobian(x)?;
    let nd = model.layout.n_diff();
    let na = model.layout.n_alg();

    let f_x = jf.columns(0, nd).into_owned();
    if na == 0 {
        return Ok(f_x);
    }
    let f_y = jf.columns(nd, na).into_owned();
    let g_x = jg.columns(0, nd).into_owned();
    let g_y = jg.columns(nd, na).into_owned();

    let lu = g_y.lu();
    let solved = lu.solve(&g_x).ok_or(Error::IndexProblem)?;
    Ok(f_x - f_y * solved)
}

/// Eigenvalues and (right) eigenvectors of a real matrix, computed by Schur
/// followed by shifted inverse iteration. Fails when an eigenvector does not
/// converge or the eigenvector matrix is ill-conditioned enough that a
/// residual check fails; callers should then fall back to eigenvalue-only
/// information.
pub fn eigen_decomposition(
    a: &DMatrix<f64>,
) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    let eig: Vec<Complex64> = a
        .clone()
        .schur()
        .complex_eigenvalues()
        .iter()
        .copied()
        .collect();
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let scale = a.amax().max(1.0);
    let mut s = DMatrix::<Complex64>::zeros(n, n);
    for (i, &lam) in eig.iter().enumerate() {
        let shift = lam + Complex64::new(1e-10 * scale, 1e-10 * scale);
        let m = &ac - DMatrix::<Complex64>::identity(n, n) * shift;
        let lu = m.lu();
        let mut v = nalgebra::DVector::<Complex64>::from_fn(n, |k, _| {
            Complex64::new(1.0, (k as f64 + 1.0) / n as f64)
        });
        v /= Complex64::new(v.norm(), 0.0);
        for _ in 0..4 {
            v = lu.solve(&v).ok_or(Error::IndexProblem)?;
            v /= Complex64::new(v.norm(), 0.0);
        }
        let res = (&ac * &v - &v * lam).norm();
        if res > 1e-6 * scale {
            return Err(Error::IndexProblem);
        }
        s.set_column(i, &v);
    }
    Ok((eig, s))
}

/// Linear stability verdict at state `x` (normally the operating point).
pub fn small_signal_check(model: &DynModel, x: &nalgebra::DVector<f64>) -> Result<StabilityVerdict> {
    let a = reduced_state_matrix(model, x)?;
    if a.nrows() == 0 {
        return Ok(StabilityVerdict::Stable {
            eigenvalues: vec![],
        });
    }
    let schur = a.schur();
    let eig = schur.complex_eigenvalues().iter().copied().collect::<Vec<_>>();

    let mut zero_modes = 0usize;
    let mut stable = true;
    for ev in &eig {
        if ev.norm() < ZERO_MODE_TOL {
            zero_modes += 1;
            continue;
        }
        if ev.re >= -EPS_EIG {
            stable = false;
        }
    }
    if zero_modes > 1 {
        stable = false;
    }
    Ok(if stable {
        StabilityVerdict::Stable { eigenvalues: eig }
    } else {
        StabilityVerdict::Unstable { eigenvalues: eig }
    })
}
