//! Grid data model: buses, pi-model lines, per-unit system and the bus
//! admittance matrix. Everything downstream works on the per-unit quantities
//! produced here; physical units only appear at construction time.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-unit bases. `z_base` is derived as `v_base^2 / s_base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    /// Base voltage in kV.
    pub v_base: f64,
    /// Base power in MW.
    pub s_base: f64,
    /// Nominal frequency in Hz.
    pub f_nominal: f64,
}

impl PerUnitBase {
    pub fn new(v_base: f64, s_base: f64, f_nominal: f64) -> Result<Self> {
        if v_base <= 0.0 || s_base <= 0.0 || f_nominal <= 0.0 {
            return Err(Error::InvalidGrid(
                "per-unit bases must be strictly positive".into(),
            ));
        }
        Ok(Self {
            v_base,
            s_base,
            f_nominal,
        })
    }

    /// 380 kV / 100 MW / 50 Hz transmission-level base.
    pub fn transmission_380kv() -> Self {
        Self {
            v_base: 380.0,
            s_base: 100.0,
            f_nominal: 50.0,
        }
    }

    /// Impedance base in Ohm.
    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }
}

/// Physical overhead-line parameters per km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    /// Resistance in Ohm/km.
    pub r_per_km: f64,
    /// Reactance in Ohm/km.
    pub x_per_km: f64,
    /// Shunt capacitance in nF/km.
    pub c_sh_per_km: f64,
    /// Line length in km.
    pub length: f64,
}

impl LineParams {
    /// Standard 380 kV overhead line (dena): 0.025 Ohm/km, 0.25 Ohm/km, 13.7 nF/km.
    pub fn standard_380kv(length: f64) -> Self {
        Self {
            r_per_km: 0.025,
            x_per_km: 0.25,
            c_sh_per_km: 13.7,
            length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::InvalidLine(format!(
                "length must be > 0, got {}",
                self.length
            )));
        }
        if self.r_per_km < 0.0 || self.c_sh_per_km < 0.0 {
            return Err(Error::InvalidLine("negative r or c_sh".into()));
        }
        if !(self.x_per_km > 0.0) {
            return Err(Error::InvalidLine("x_per_km must be > 0".into()));
        }
        Ok(())
    }
}

/// A pi-model line in per-unit. `y_shunt` is the total shunt admittance of the
/// line; half is attached at each terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub params: LineParams,
    pub y_series: Complex64,
    pub y_shunt: Complex64,
}

/// Converts physical line parameters to per-unit pi-model admittances.
///
/// `y_series = 1 / ((r + jx) * length / z_base)` and
/// `y_shunt = j * 2 pi f * c_sh * length * z_base` (total, farads from nF).
pub fn line_admittance(params: &LineParams, base: &PerUnitBase) -> Result<(Complex64, Complex64)> {
    params.validate()?;
    let z_base = base.z_base();
    let z_ohm = Complex64::new(params.r_per_km, params.x_per_km) * params.length;
    if z_ohm.norm() == 0.0 {
        return Err(Error::InvalidLine("zero series impedance".into()));
    }
    let y_series = z_base / z_ohm;
    let b_sh =
        2.0 * std::f64::consts::PI * base.f_nominal * params.c_sh_per_km * 1e-9 * params.length
            * z_base;
    Ok((y_series, Complex64::new(0.0, b_sh)))
}

impl Line {
    pub fn new(from: usize, to: usize, params: LineParams, base: &PerUnitBase) -> Result<Self> {
        if from == to {
            return Err(Error::InvalidLine(format!("self-loop at bus {from}")));
        }
        let (y_series, y_shunt) = line_admittance(&params, base)?;
        Ok(Self {
            from,
            to,
            params,
            y_series,
            y_shunt,
        })
    }
}

/// Label of a normal-form parametrization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NfLabel {
    NF1,
    NF2,
    NF3,
}

impl std::fmt::Display for NfLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NfLabel::NF1 => write!(f, "NF1"),
            NfLabel::NF2 => write!(f, "NF2"),
            NfLabel::NF3 => write!(f, "NF3"),
        }
    }
}

/// Coefficients of the grid-forming normal form at one bus.
///
/// The frequency row reads
/// `domega/dt = b_omega*domega + c_omega*dnu + g_omega*dP + h_omega*dQ`
/// and the radial voltage row
/// `vdot/v = b_v*domega + c_v*dnu + g_v*dP + h_v*dQ`,
/// with `dnu = |v|^2 - v_set^2`, `dP = P - P_set`, `dQ = Q - Q_set`.
///
/// The three shipped presets fix only the published real parts of B and G
/// (the droop/inertia pair); the remaining cross-coefficients default to zero.
/// They are provisional stand-ins, not published values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFormParams {
    pub b_omega: f64,
    pub c_omega: f64,
    pub g_omega: f64,
    pub h_omega: f64,
    pub b_v: f64,
    pub c_v: f64,
    pub g_v: f64,
    pub h_v: f64,
    pub label: NfLabel,
}

impl NormalFormParams {
    /// Preset from the published `(Re(B_x), Re(G_x))` pair. `Re(G_x)` is tied
    /// to `5 * Re(B_x)` for all three parametrizations.
    fn from_bx_gx(re_bx: f64, re_gx: f64, label: NfLabel) -> Self {
        Self {
            b_omega: re_bx,
            c_omega: 0.0,
            g_omega: re_gx,
            h_omega: 0.0,
            b_v: 0.0,
            c_v: re_bx,
            g_v: 0.0,
            h_v: re_gx / 5.0,
            label,
        }
    }

    /// Small virtual inertia: Re(B_x) = -1, Re(G_x) = -5.
    pub fn nf1() -> Self {
        Self::from_bx_gx(-1.0, -5.0, NfLabel::NF1)
    }

    /// Medium virtual inertia: Re(B_x) = -2, Re(G_x) = -10.
    pub fn nf2() -> Self {
        Self::from_bx_gx(-2.0, -10.0, NfLabel::NF2)
    }

    /// Large virtual inertia: Re(B_x) = -0.2, Re(G_x) = -1.
    pub fn nf3() -> Self {
        Self::from_bx_gx(-0.2, -1.0, NfLabel::NF3)
    }

    pub fn preset(label: NfLabel) -> Self {
        match label {
            NfLabel::NF1 => Self::nf1(),
            NfLabel::NF2 => Self::nf2(),
            NfLabel::NF3 => Self::nf3(),
        }
    }

    /// `Re(B_x)` of the underlying parametrization, used as an ML feature.
    pub fn re_bx(&self) -> f64 {
        self.b_omega
    }
}

/// Dynamic model attached to a bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BusKind {
    NormalForm { params: NormalFormParams },
    PqLoad,
    Slack,
}

impl BusKind {
    pub fn is_normal_form(&self) -> bool {
        matches!(self, BusKind::NormalForm { .. })
    }
    pub fn is_slack(&self) -> bool {
        matches!(self, BusKind::Slack)
    }
    pub fn is_load(&self) -> bool {
        matches!(self, BusKind::PqLoad)
    }

    pub fn name(&self) -> &'static str {
        match self {
            BusKind::NormalForm { params } => match params.label {
                NfLabel::NF1 => "NF1",
                NfLabel::NF2 => "NF2",
                NfLabel::NF3 => "NF3",
            },
            BusKind::PqLoad => "load",
            BusKind::Slack => "slack",
        }
    }
}

/// A bus with its set points. `v_set` is meaningful for NormalForm and Slack.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub p_set: f64,
    pub q_set: f64,
    pub v_set: Option<f64>,
}

/// Immutable network description. Construct through [`Grid::new`] so the
/// invariants (dense ids, single slack, connectivity) hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub base: PerUnitBase,
}

/// A single violated grid invariant. Violations are data, not errors:
/// `validate_grid` reports all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NonDenseIds,
    NoSlack,
    MultipleSlacks(usize),
    Disconnected { components: usize },
    DanglingLine { from: usize, to: usize },
    NonFiniteSetPoint(usize),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonDenseIds => write!(f, "bus ids are not dense 0..N-1"),
            Violation::NoSlack => write!(f, "no slack bus"),
            Violation::MultipleSlacks(n) => write!(f, "multiple slacks ({n})"),
            Violation::Disconnected { components } => {
                write!(f, "disconnected ({components} components)")
            }
            Violation::DanglingLine { from, to } => {
                write!(f, "line {from}-{to} references a missing bus")
            }
            Violation::NonFiniteSetPoint(id) => write!(f, "non-finite set point at bus {id}"),
        }
    }
}

/// Checks all grid invariants and returns every violation found.
pub fn validate_grid(grid: &Grid) -> Vec<Violation> {
    let n = grid.buses.len();
    let mut out = Vec::new();

    if grid.buses.iter().enumerate().any(|(i, b)| b.id != i) {
        out.push(Violation::NonDenseIds);
    }
    let slacks = grid.buses.iter().filter(|b| b.kind.is_slack()).count();
    match slacks {
        0 => out.push(Violation::NoSlack),
        1 => {}
        k => out.push(Violation::MultipleSlacks(k)),
    }
    for b in &grid.buses {
        if !b.p_set.is_finite() || !b.q_set.is_finite() {
            out.push(Violation::NonFiniteSetPoint(b.id));
        }
    }
    for l in &grid.lines {
        if l.from >= n || l.to >= n {
            out.push(Violation::DanglingLine {
                from: l.from,
                to: l.to,
            });
        }
    }

    // connectivity via union-find
    if n > 0 {
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for l in &grid.lines {
            if l.from < n && l.to < n {
                let (a, b) = (find(&mut parent, l.from), find(&mut parent, l.to));
                parent[a] = b;
            }
        }
        let mut roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() > 1 {
            out.push(Violation::Disconnected {
                components: roots.len(),
            });
        }
    }
    out
}

impl Grid {
    /// Builds a grid and rejects it if any invariant is violated.
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>, base: PerUnitBase) -> Result<Self> {
        let grid = Self { buses, lines, base };
        let violations = validate_grid(&grid);
        if violations.is_empty() {
            Ok(grid)
        } else {
            let msg = violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            Err(Error::InvalidGrid(msg))
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind.is_slack())
            .expect("grid invariant: one slack")
    }

    /// Dense bus admittance matrix in per-unit.
    ///
    /// `Y[k][k] = sum(y_series + y_shunt/2)` over incident lines,
    /// `Y[k][m] = -y_series` for each line k-m.
    pub fn admittance_matrix(&self) -> DMatrix<Complex64> {
        let n = self.n_buses();
        let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for l in &self.lines {
            let half_shunt = l.y_shunt * 0.5;
            y[(l.from, l.from)] += l.y_series + half_shunt;
            y[(l.to, l.to)] += l.y_series + half_shunt;
            y[(l.from, l.to)] -= l.y_series;
            y[(l.to, l.from)] -= l.y_series;
        }
        y
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file: GridFile = self.into();
        let s = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: GridFile = serde_json::from_str(s)?;
        file.into_grid()
    }

    pub fn to_json(&self) -> Result<String> {
        let file: GridFile = self.into();
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

// --- on-disk schema -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct BusFile {
    id: usize,
    #[serde(flatten)]
    kind: BusKind,
    p_set: f64,
    q_set: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_set: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LineFile {
    from: usize,
    to: usize,
    length: f64,
    r_per_km: f64,
    x_per_km: f64,
    c_sh_per_km: f64,
}

/// Canonical on-disk grid format. Admittances are recomputed on load from the
/// physical line parameters, so the file carries no redundant derived data.
#[derive(Debug, Serialize, Deserialize)]
pub struct GridFile {
    base: PerUnitBase,
    buses: Vec<BusFile>,
    lines: Vec<LineFile>,
}

impl From<&Grid> for GridFile {
    fn from(g: &Grid) -> Self {
        GridFile {
            base: g.base,
            buses: g
                .buses
                .iter()
                .map(|b| BusFile {
                    id: b.id,
                    kind: b.kind.clone(),
                    p_set: b.p_set,
                    q_set: b.q_set,
                    v_set: b.v_set,
                })
                .collect(),
            lines: g
                .lines
                .iter()
                .map(|l| LineFile {
                    from: l.from,
                    to: l.to,
                    length: l.params.length,
                    r_per_km: l.params.r_per_km,
                    x_per_km: l.params.x_per_km,
                    c_sh_per_km: l.params.c_sh_per_km,
                })
                .collect(),
        }
    }
}

impl GridFile {
    fn into_grid(self) -> Result<Grid> {
        let base = PerUnitBase::new(self.base.v_base, self.base.s_base, self.base.f_nominal)?;
        let buses = self
            .buses
            .into_iter()
            .map(|b| Bus {
                id: b.id,
                kind: b.kind,
                p_set: b.p_set,
                q_set: b.q_set,
                v_set: b.v_set,
            })
            .collect();
        let lines = self
            .lines
            .into_iter()
            .map(|l| {
                Line::new(
                    l.from,
                    l.to,
                    LineParams {
                        r_per_km: l.r_per_km,
                        x_per_km: l.x_per_km,
                        c_sh_per_km: l.c_sh_per_km,
                        length: l.length,
                    },
                    &base,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Grid::new(buses, lines, base)
    }
}
