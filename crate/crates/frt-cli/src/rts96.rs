//! Bundled 73-bus reliability-test-style case and its adaptation into a
//! grid-forming-dominated grid: generator buses become normal-form actors with
//! presets drawn like in synthesis, loads stay PQ, line admittances are
//! recomputed from the kept lengths with the standard per-km values.

use frt_core::model::{Bus, BusKind, Grid, Line, LineParams, NormalFormParams, PerUnitBase};
use frt_core::powerflow::{newton_load_flow, LoadFlowOptions, OperatingPoint};
use frt_core::synthesis::draw_nf_label;
use frt_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const BUNDLED_CASE: &str = include_str!("../data/rts96.json");

const MILE_KM: f64 = 1.609_344;
/// Nominal length substituted for zero-length (transformer) branches.
const TRANSFORMER_LENGTH_KM: f64 = 5.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseBus {
    pub name: String,
    pub gen_mw: f64,
    pub load_mw: f64,
    pub generator: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseBranch {
    pub from: String,
    pub to: String,
    pub length_miles: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    pub description: String,
    pub power_base_mw: f64,
    pub buses: Vec<CaseBus>,
    pub branches: Vec<CaseBranch>,
}

pub fn parse_case(text: &str) -> Result<CaseFile> {
    let case: CaseFile =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("case file: {e}")))?;
    if case.buses.len() < 2 {
        return Err(Error::InvalidGrid("case needs at least 2 buses".into()));
    }
    if !(case.power_base_mw > 0.0) {
        return Err(Error::InvalidGrid("case power base must be positive".into()));
    }
    let mut names: Vec<&str> = case.buses.iter().map(|b| b.name.as_str()).collect();
    names.sort();
    names.dedup();
    if names.len() != case.buses.len() {
        return Err(Error::InvalidGrid("duplicate bus names in case".into()));
    }
    for br in &case.branches {
        for name in [&br.from, &br.to] {
            if !case.buses.iter().any(|b| &b.name == name) {
                return Err(Error::InvalidGrid(format!(
                    "branch endpoint {name} not in bus table"
                )));
            }
        }
        if br.length_miles < 0.0 {
            return Err(Error::InvalidGrid("negative branch length".into()));
        }
    }
    Ok(case)
}

/// Deterministic adaptation: topology and active power pattern kept, one slack
/// at the largest injector, generators to normal-form presets.
pub fn adapt_case(case: &CaseFile, cfg: &RunConfig, seed: u64) -> Result<(Grid, OperatingPoint)> {
    let base = PerUnitBase::transmission_380kv();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tan_phi = cfg.synthesis.load_power_factor.acos().tan();
    let index = |name: &str| case.buses.iter().position(|b| b.name == name).unwrap();

    let p_net: Vec<f64> = case
        .buses
        .iter()
        .map(|b| (b.gen_mw - b.load_mw) / case.power_base_mw * cfg.case_power_scale)
        .collect();
    let slack = p_net
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();

    let buses: Vec<Bus> = case
        .buses
        .iter()
        .enumerate()
        .map(|(id, b)| {
            if id == slack {
                Bus {
                    id,
                    kind: BusKind::Slack,
                    p_set: 0.0,
                    q_set: 0.0,
                    v_set: Some(cfg.synthesis.v_target),
                }
            } else if b.generator {
                Bus {
                    id,
                    kind: BusKind::NormalForm {
                        params: NormalFormParams::preset(draw_nf_label(&cfg.synthesis, &mut rng)),
                    },
                    p_set: p_net[id],
                    q_set: 0.0,
                    v_set: Some(cfg.synthesis.v_target),
                }
            } else {
                Bus {
                    id,
                    kind: BusKind::PqLoad,
                    p_set: p_net[id],
                    q_set: p_net[id] * tan_phi,
                    v_set: None,
                }
            }
        })
        .collect();

    let lines: Vec<Line> = case
        .branches
        .iter()
        .map(|br| {
            let km = if br.length_miles > 0.0 {
                br.length_miles * MILE_KM
            } else {
                TRANSFORMER_LENGTH_KM
            };
            let params = LineParams {
                length: km,
                ..cfg.line
            };
            Line::new(index(&br.from), index(&br.to), params, &base)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut grid = Grid::new(buses, lines, base)?;
    let op = newton_load_flow(&grid, &LoadFlowOptions::default())?;
    for bus in &mut grid.buses {
        if bus.kind.is_normal_form() {
            bus.q_set = op.q[bus.id];
        }
    }
    Ok((grid, op))
}

#[cfg(test)]
mod tests {
    use super::*;
    use frt_core::model::line_admittance;

    #[test]
    fn bundled_case_parses_with_73_buses() {
        let case = parse_case(BUNDLED_CASE).unwrap();
        assert_eq!(case.buses.len(), 73);
        assert_eq!(case.branches.len(), 120);
    }

    #[test]
    fn adaptation_has_72_non_slack_buses_and_matching_partition() {
        let case = parse_case(BUNDLED_CASE).unwrap();
        let cfg = RunConfig::default();
        let (grid, op) = adapt_case(&case, &cfg, 11).unwrap();
        assert_eq!(grid.n_buses(), 73);
        let non_slack = grid.buses.iter().filter(|b| !b.kind.is_slack()).count();
        assert_eq!(non_slack, 72);
        for (bus, cb) in grid.buses.iter().zip(case.buses.iter()) {
            if bus.kind.is_slack() {
                assert!(cb.generator);
            } else if cb.generator {
                assert!(bus.kind.is_normal_form());
            } else {
                assert!(bus.kind.is_load());
            }
        }
        assert_eq!(op.v.len(), 73);
    }

    #[test]
    fn admittances_match_line_formula_with_kept_lengths() {
        let case = parse_case(BUNDLED_CASE).unwrap();
        let cfg = RunConfig::default();
        let (grid, _) = adapt_case(&case, &cfg, 11).unwrap();
        for (line, br) in grid.lines.iter().zip(case.branches.iter()) {
            let km = if br.length_miles > 0.0 {
                br.length_miles * MILE_KM
            } else {
                TRANSFORMER_LENGTH_KM
            };
            let params = LineParams {
                length: km,
                ..cfg.line
            };
            let (ys, ysh) = line_admittance(&params, &grid.base).unwrap();
            assert_eq!(line.y_series, ys);
            assert_eq!(line.y_shunt, ysh);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let case = parse_case(BUNDLED_CASE).unwrap();
        let cfg = RunConfig::default();
        let (g1, _) = adapt_case(&case, &cfg, 3).unwrap();
        let (g2, _) = adapt_case(&case, &cfg, 3).unwrap();
        assert_eq!(g1.to_json().unwrap(), g2.to_json().unwrap());
    }

    #[test]
    fn bad_case_rejected() {
        assert!(parse_case("{}").is_err());
        let mut case = parse_case(BUNDLED_CASE).unwrap();
        case.branches[0].from = "999".into();
        let text = serde_json::to_string(&case).unwrap();
        assert!(parse_case(&text).is_err());
    }
}
