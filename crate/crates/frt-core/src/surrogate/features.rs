//! Nodal feature construction and standardization.

use serde::{Deserialize, Serialize};

use crate::model::{BusKind, Grid};

pub const N_FEATURES: usize = 8;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "p_set", "q_set", "re_bx", "g_k", "b_k", "b_sh_k", "is_slack", "is_load",
];

/// Eight features per bus: set points, droop coefficient, summed line
/// admittance components (off-diagonal admittance-matrix sign convention for
/// g_k and b_k, positive half-shunt susceptance for b_sh_k), and kind flags.
pub fn build_features(grid: &Grid) -> Vec<[f64; N_FEATURES]> {
    let n = grid.n_buses();
    let mut g_k = vec![0.0; n];
    let mut b_k = vec![0.0; n];
    let mut b_sh_k = vec![0.0; n];
    for l in &grid.lines {
        for &end in &[l.from, l.to] {
            g_k[end] += -l.y_series.re;
            b_k[end] += -l.y_series.im;
            b_sh_k[end] += (l.y_shunt * 0.5).im;
        }
    }
    grid.buses
        .iter()
        .map(|bus| {
            let re_bx = match &bus.kind {
                BusKind::NormalForm { params } => params.re_bx(),
                _ => 0.0,
            };
            [
                bus.p_set,
                bus.q_set,
                re_bx,
                g_k[bus.id],
                b_k[bus.id],
                b_sh_k[bus.id],
                if bus.kind.is_slack() { 1.0 } else { 0.0 },
                if bus.kind.is_load() { 1.0 } else { 0.0 },
            ]
        })
        .collect()
}

/// Per-column mean/std scaling fitted on training rows. Zero-variance columns
/// keep std 1 so they pass through unscaled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; N_FEATURES],
            std: [1.0; N_FEATURES],
        }
    }

    pub fn fit<'a, I>(rows: I) -> Self
    where
        I: Iterator<Item = &'a [f64; N_FEATURES]> + Clone,
    {
        let n = rows.clone().count().max(1) as f64;
        let mut mean = [0.0; N_FEATURES];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut std = [0.0; N_FEATURES];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r.iter()).zip(mean.iter()) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Self { mean, std }
    }

    pub fn transform(&self, row: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for i in 0..N_FEATURES {
            out[i] = (row[i] - self.mean[i]) / self.std[i];
        }
        out
    }

    pub fn inverse(&self, row: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for i in 0..N_FEATURES {
            out[i] = row[i] * self.std[i] + self.mean[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bus, Line, LineParams, NormalFormParams, PerUnitBase};

    fn two_bus_grid(extra_line: bool) -> Grid {
        let base = PerUnitBase::transmission_380kv();
        let mut lines = vec![Line::new(0, 1, LineParams::standard_380kv(80.0), &base).unwrap()];
        if extra_line {
            lines.push(Line::new(0, 1, LineParams::standard_380kv(80.0), &base).unwrap());
        }
        Grid::new(
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
                        params: NormalFormParams::nf2(),
                    },
                    p_set: 0.7,
                    q_set: 0.1,
                    v_set: Some(1.0),
                },
            ],
            lines,
            base,
        )
        .unwrap()
    }

    #[test]
    fn feature_values_and_flags() {
        let grid = two_bus_grid(false);
        let f = build_features(&grid);
        assert_eq!(f.len(), 2);
        assert_eq!(f[0][6], 1.0);
        assert_eq!(f[0][2], 0.0);
        assert_eq!(f[1][2], -2.0);
        assert_eq!(f[1][0], 0.7);
        assert_eq!(f[1][7], 0.0);
        // off-diagonal admittance-matrix sign convention
        let l = &grid.lines[0];
        assert!((f[1][3] + l.y_series.re).abs() < 1e-12);
        assert!((f[1][4] + l.y_series.im).abs() < 1e-12);
        assert!((f[1][5] - (l.y_shunt * 0.5).im).abs() < 1e-12);
    }

    #[test]
    fn parallel_lines_double_line_features() {
        let single = build_features(&two_bus_grid(false));
        let double = build_features(&two_bus_grid(true));
        for k in 3..6 {
            assert!((double[1][k] - 2.0 * single[1][k]).abs() < 1e-12);
        }
        for k in 0..3 {
            assert_eq!(double[1][k], single[1][k]);
        }
    }

    #[test]
    fn standardizer_round_trip_and_degenerate_column() {
        let rows = vec![
            [1.0, 2.0, 5.0, 0.0, 1.0, 2.0, 1.0, 0.0],
            [3.0, 4.0, 5.0, 0.0, 2.0, 1.0, 0.0, 1.0],
        ];
        let s = Standardizer::fit(rows.iter());
        // constant column keeps std 1
        assert_eq!(s.std[2], 1.0);
        assert_eq!(s.std[3], 1.0);
        for r in &rows {
            let t = s.transform(r);
            let back = s.inverse(&t);
            for (a, b) in r.iter().zip(back.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let t0 = s.transform(&rows[0]);
        assert!((t0[0] + 1.0).abs() < 1e-12);
    }
}
