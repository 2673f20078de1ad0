//! Cross-checks of the Newton load flow against an independently coded
//! Gauss-Seidel solver.

use frt_core::model::{Bus, BusKind, Grid, Line, LineParams, PerUnitBase};
use frt_core::powerflow::{newton_load_flow, LoadFlowOptions};
use num_complex::Complex64;

/// Textbook Gauss-Seidel for grids with one slack (bus 0 here) and PQ buses
/// only: V_k <- (1/Y_kk) (S_k*/V_k* - sum_{j!=k} Y_kj V_j).
fn gauss_seidel(grid: &Grid, iters: usize) -> Vec<Complex64> {
    let n = grid.n_buses();
    let y = grid.admittance_matrix();
    let slack = grid.slack();
    let mut v = vec![Complex64::new(1.0, 0.0); n];
    for _ in 0..iters {
        for k in 0..n {
            if k == slack {
                continue;
            }
            let s = Complex64::new(grid.buses[k].p_set, grid.buses[k].q_set);
            let mut sum = Complex64::new(0.0, 0.0);
            for j in 0..n {
                if j != k {
                    sum += y[(k, j)] * v[j];
                }
            }
            v[k] = (s.conj() / v[k].conj() - sum) / y[(k, k)];
        }
    }
    v
}

fn pq_grid(loads: &[(f64, f64)], length_km: f64) -> Grid {
    let base = PerUnitBase::transmission_380kv();
    let mut buses = vec![Bus {
        id: 0,
        kind: BusKind::Slack,
        p_set: 0.0,
        q_set: 0.0,
        v_set: Some(1.0),
    }];
    let mut lines = Vec::new();
    for (i, &(p, q)) in loads.iter().enumerate() {
        buses.push(Bus {
            id: i + 1,
            kind: BusKind::PqLoad,
            p_set: p,
            q_set: q,
            v_set: None,
        });
        lines.push(Line::new(i, i + 1, LineParams::standard_380kv(length_km), &base).unwrap());
    }
    Grid::new(buses, lines, base).unwrap()
}

#[test]
fn gauss_seidel_matches_newton_two_bus() {
    let grid = pq_grid(&[(-0.5, 0.0)], 100.0);
    let op = newton_load_flow(&grid, &LoadFlowOptions::default()).unwrap();
    let v_gs = gauss_seidel(&grid, 500);
    let newton = op.voltage(1);
    assert!((newton.norm() - v_gs[1].norm()).abs() < 1e-7);
    assert!((newton.arg() - v_gs[1].arg()).abs() < 1e-7);
}

#[test]
fn gauss_seidel_matches_newton_on_a_radial_feeder() {
    let grid = pq_grid(
        &[(-0.4, -0.1), (-0.2, 0.05), (-0.6, -0.2), (-0.1, 0.0)],
        60.0,
    );
    let op = newton_load_flow(&grid, &LoadFlowOptions::default()).unwrap();
    let v_gs = gauss_seidel(&grid, 2000);
    for k in 1..grid.n_buses() {
        let newton = op.voltage(k);
        assert!(
            (newton - v_gs[k]).norm() < 1e-7,
            "bus {k}: newton {newton} vs gauss-seidel {}",
            v_gs[k]
        );
    }
}
