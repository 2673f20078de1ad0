//! Command implementations shared by the binary and the integration tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use frt_core::dynamics::DynModel;
use frt_core::frt::{assess_grid, run_one, BusAssessment, Outcome, SettleCertificate};
use frt_core::model::Grid;
use frt_core::perturb::{consistent_init, make_perturbation};
use frt_core::powerflow::{injections, OperatingPoint};
use frt_core::sobol::SobolSampler;
use frt_core::surrogate::{
    split_records, train_model, DatasetRecord, GeneralizationReport, Model, ModelKind,
};
use frt_core::synthesis::synthesize_grid;
use frt_core::{Error, Result};

use crate::config::RunConfig;
use crate::fmt::sig9;
use crate::manifest::RunManifest;
use crate::rts96;

/// Refuses to overwrite existing artifacts unless `--force` was given.
fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn grid_seed(master: u64, index: usize) -> u64 {
    master ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn grid_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

fn op_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.op.json"))
}

/// Sorted ids of all grids in a directory (files `<id>.json` with an
/// `<id>.op.json` sidecar).
pub fn list_grids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if let Some(id) = name.strip_suffix(".json") {
            if !id.ends_with(".op") {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Config(format!(
            "no grid files found in {}",
            dir.display()
        )));
    }
    Ok(ids)
}

pub fn load_grid_with_op(dir: &Path, id: &str) -> Result<(Grid, OperatingPoint)> {
    let grid = Grid::load_json(&grid_path(dir, id))?;
    let op_file = op_path(dir, id);
    if !op_file.exists() {
        return Err(Error::Config(format!(
            "missing operating-point sidecar {}",
            op_file.display()
        )));
    }
    let op: OperatingPoint = serde_json::from_str(&std::fs::read_to_string(op_file)?)?;
    Ok((grid, op))
}

pub fn cmd_generate(cfg: &RunConfig, seed: u64, out: &Path, force: bool) -> Result<()> {
    cfg.validate()?;
    let grids_dir = out.join("grids");
    ensure_writable(&grids_dir, force)?;
    std::fs::create_dir_all(&grids_dir)?;
    let base = frt_core::model::PerUnitBase::transmission_380kv();
    let mut manifest = RunManifest::new("generate", seed, cfg);
    let mut rejections: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for i in 0..cfg.n_grids {
        let id = format!("grid_{i:04}");
        let s = synthesize_grid(&cfg.growth, &cfg.synthesis, &cfg.line, &base, grid_seed(seed, i))?;
        s.grid.save_json(&grid_path(&grids_dir, &id))?;
        std::fs::write(
            op_path(&grids_dir, &id),
            serde_json::to_string_pretty(&s.op)?,
        )?;
        if !s.rejections.is_empty() {
            rejections.insert(
                id.clone(),
                s.rejections.iter().map(|r| format!("{r:?}")).collect(),
            );
        }
        manifest.push_artifact(format!("grids/{id}.json"));
    }
    std::fs::write(
        out.join("rejections.json"),
        serde_json::to_string_pretty(&rejections)?,
    )?;
    manifest.push_artifact("rejections.json");
    manifest.save(out)?;
    Ok(())
}

pub const ASSESSMENT_HEADER: &str =
    "grid_id,bus,bus_kind,v_star,v_total,p_frt,std_err,n_init_failed,n_integ_failed";

pub fn assessment_csv_row(grid_id: &str, a: &BusAssessment) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        grid_id,
        a.bus,
        a.bus_kind,
        a.v_star,
        a.v_total,
        sig9(a.p_frt),
        sig9(a.std_err),
        a.n_init_failed,
        a.n_integ_failed
    )
}

pub fn parse_assessment_csv(text: &str) -> Result<Vec<(String, BusAssessment)>> {
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            if line != ASSESSMENT_HEADER {
                return Err(Error::Config("unexpected assessment CSV header".into()));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Config(format!(
                "assessment CSV line {} has {} fields",
                ln + 1,
                f.len()
            )));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("assessment CSV line {}: {e}", ln + 1)))
        };
        let parse_u = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Config(format!("assessment CSV line {}: {e}", ln + 1)))
        };
        rows.push((
            f[0].to_string(),
            BusAssessment {
                bus: parse_u(f[1])?,
                bus_kind: f[2].to_string(),
                v_star: parse_u(f[3])?,
                v_total: parse_u(f[4])?,
                p_frt: parse_f(f[5])?,
                std_err: parse_f(f[6])?,
                n_init_failed: parse_u(f[7])?,
                n_integ_failed: parse_u(f[8])?,
            },
        ));
    }
    Ok(rows)
}

#[derive(Debug, serde::Serialize)]
struct AssessSummary {
    n_grids: usize,
    n_failed_grids: usize,
    failed_grids: Vec<String>,
    mean_p_frt_by_kind: BTreeMap<String, f64>,
    nf3_exceeds_nf1: Option<bool>,
}

pub fn cmd_assess(cfg: &RunConfig, grids_dir: &Path, out: &Path, force: bool) -> Result<()> {
    cfg.validate()?;
    let csv_path = out.join("assessment.csv");
    ensure_writable(&csv_path, force)?;
    std::fs::create_dir_all(out)?;
    let ids = list_grids(grids_dir)?;
    let mut csv = String::from(ASSESSMENT_HEADER);
    csv.push('\n');
    let mut by_kind: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut failed = Vec::new();
    for id in &ids {
        let assessments = load_grid_with_op(grids_dir, id).and_then(|(grid, op)| {
            assess_grid(&grid, &op, &cfg.perturbation, &cfg.curve, &cfg.frt)
        });
        match assessments {
            Ok(rows) => {
                for a in rows {
                    csv.push_str(&assessment_csv_row(id, &a));
                    csv.push('\n');
                    let e = by_kind.entry(a.bus_kind.clone()).or_insert((0.0, 0));
                    e.0 += a.p_frt;
                    e.1 += 1;
                }
            }
            Err(e) => {
                failed.push(format!("{id}: {e}"));
            }
        }
    }
    if failed.len() == ids.len() {
        return Err(Error::Config(format!(
            "all grids failed assessment; first: {}",
            failed[0]
        )));
    }
    let mean_p_frt_by_kind: BTreeMap<String, f64> = by_kind
        .iter()
        .map(|(k, (sum, n))| (k.clone(), sum / *n as f64))
        .collect();
    let nf3_exceeds_nf1 = match (
        mean_p_frt_by_kind.get("NF3"),
        mean_p_frt_by_kind.get("NF1"),
    ) {
        (Some(a), Some(b)) => Some(a > b),
        _ => None,
    };
    let summary = AssessSummary {
        n_grids: ids.len(),
        n_failed_grids: failed.len(),
        failed_grids: failed,
        mean_p_frt_by_kind,
        nf3_exceeds_nf1,
    };
    std::fs::write(&csv_path, csv)?;
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let mut manifest = RunManifest::new("assess", 0, cfg);
    manifest.push_artifact("assessment.csv");
    manifest.push_artifact("summary.json");
    manifest.save(out)?;
    Ok(())
}

pub fn cmd_adapt_case(
    cfg: &RunConfig,
    case_file: Option<&Path>,
    seed: u64,
    out: &Path,
    force: bool,
) -> Result<()> {
    cfg.validate()?;
    let text = match case_file {
        Some(p) => std::fs::read_to_string(p)?,
        None => rts96::BUNDLED_CASE.to_string(),
    };
    let case = rts96::parse_case(&text)?;
    let grids_dir = out.join("grids");
    let path = grid_path(&grids_dir, "case");
    ensure_writable(&path, force)?;
    std::fs::create_dir_all(&grids_dir)?;
    let (grid, op) = rts96::adapt_case(&case, cfg, seed)?;
    grid.save_json(&path)?;
    std::fs::write(
        op_path(&grids_dir, "case"),
        serde_json::to_string_pretty(&op)?,
    )?;
    let mut manifest = RunManifest::new("adapt-case", seed, cfg);
    manifest.push_artifact("grids/case.json");
    manifest.push_artifact("grids/case.op.json");
    manifest.save(out)?;
    Ok(())
}

pub fn cmd_dataset(
    cfg: &RunConfig,
    grids_dir: &Path,
    assessment_csv: &Path,
    out_file: &Path,
    force: bool,
) -> Result<()> {
    ensure_writable(out_file, force)?;
    if let Some(parent) = out_file.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let rows = parse_assessment_csv(&std::fs::read_to_string(assessment_csv)?)?;
    let mut per_grid: BTreeMap<String, Vec<BusAssessment>> = BTreeMap::new();
    for (id, a) in rows {
        per_grid.entry(id).or_default().push(a);
    }
    let mut records = Vec::new();
    for (id, assessments) in &per_grid {
        let (grid, _) = load_grid_with_op(grids_dir, id)?;
        records.push(DatasetRecord::from_assessment(id, &grid, assessments)?);
    }
    if records.is_empty() {
        return Err(Error::Config("assessment CSV holds no rows".into()));
    }
    frt_core::surrogate::save_jsonl(&records, out_file)?;
    let _ = cfg;
    Ok(())
}

pub fn cmd_train(
    cfg: &RunConfig,
    dataset: &Path,
    kind: ModelKind,
    seed: u64,
    out: &Path,
    force: bool,
) -> Result<()> {
    cfg.validate()?;
    let model_path = out.join(format!("model_{}.json", kind.name()));
    ensure_writable(&model_path, force)?;
    std::fs::create_dir_all(out)?;
    let records = frt_core::surrogate::load_jsonl(dataset)?;
    let (train, val, test) = split_records(&records, cfg.split_seed);
    let model = train_model(kind, &train, &val, &cfg.train, seed)?;
    model.save_json(&model_path)?;
    let metrics = serde_json::json!({
        "model": kind.name(),
        "val": frt_core::surrogate::evaluate(&model, &val)?,
        "test": frt_core::surrogate::evaluate(&model, &test)?,
    });
    std::fs::write(
        out.join(format!("metrics_{}.json", kind.name())),
        serde_json::to_string_pretty(&metrics)?,
    )?;
    let mut manifest = RunManifest::new(&format!("train-{}", kind.name()), seed, cfg);
    manifest.push_artifact(format!("model_{}.json", kind.name()));
    manifest.save(out)?;
    Ok(())
}

pub const REPORT_HEADER: &str = "model,test_r2_mean,test_r2_std,case_r2_mean,case_r2_std,\
test_spearman_mean,test_spearman_std,case_spearman_mean,case_spearman_std";

pub fn report_csv(report: &GeneralizationReport) -> String {
    let mut csv = String::from(REPORT_HEADER);
    csv.push('\n');
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.model,
            sig9(row.test_r2.mean),
            sig9(row.test_r2.std),
            sig9(row.case_r2.mean),
            sig9(row.case_r2.std),
            sig9(row.test_spearman.mean),
            sig9(row.test_spearman.std),
            sig9(row.case_spearman.mean),
            sig9(row.case_spearman.std)
        ));
    }
    csv
}

pub fn cmd_eval(
    cfg: &RunConfig,
    dataset: &Path,
    case_dataset: &Path,
    out: &Path,
    force: bool,
) -> Result<()> {
    cfg.validate()?;
    let csv_path = out.join("report.csv");
    ensure_writable(&csv_path, force)?;
    std::fs::create_dir_all(out)?;
    let records = frt_core::surrogate::load_jsonl(dataset)?;
    let case = frt_core::surrogate::load_jsonl(case_dataset)?;
    let (train, val, test) = split_records(&records, cfg.split_seed);
    let report = GeneralizationReport::build(
        &train,
        &val,
        &test,
        &case,
        &cfg.train,
        &cfg.report_seeds,
    )?;
    std::fs::write(&csv_path, report_csv(&report))?;
    std::fs::write(out.join("report.txt"), report.render())?;
    let mut manifest = RunManifest::new("eval", 0, cfg);
    manifest.push_artifact("report.csv");
    manifest.push_artifact("report.txt");
    manifest.save(out)?;
    Ok(())
}

fn histogram_csv(rows: &[(String, BusAssessment)]) -> String {
    const BINS: usize = 20;
    let mut counts: BTreeMap<String, [usize; BINS]> = BTreeMap::new();
    for (_, a) in rows {
        let bin = ((a.p_frt * BINS as f64) as usize).min(BINS - 1);
        counts.entry(a.bus_kind.clone()).or_insert([0; BINS])[bin] += 1;
    }
    let mut csv = String::from("bus_kind,bin_lo,bin_hi,count\n");
    for (kind, bins) in &counts {
        for (b, count) in bins.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                kind,
                sig9(b as f64 / BINS as f64),
                sig9((b + 1) as f64 / BINS as f64),
                count
            ));
        }
    }
    csv
}

fn scatter_csv(model: &Model, test: &[DatasetRecord]) -> String {
    let mut csv = String::from("grid_id,bus,label,prediction\n");
    for r in test {
        let p = model.predict(r);
        for k in 0..r.n_nodes() {
            if r.mask[k] {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    r.grid_id,
                    k,
                    sig9(r.labels[k]),
                    sig9(p[k])
                ));
            }
        }
    }
    csv
}

/// Per-sample system-wide power deviation of the post-clearance state vs the
/// operating point, with the trajectory outcome.
fn outcomes_csv(cfg: &RunConfig, grid: &Grid, op: &OperatingPoint) -> Result<String> {
    let model = DynModel::new(grid, op);
    let x_eq = model.state_from_op(op);
    let cert = SettleCertificate::build(&model, &x_eq, &cfg.curve);
    let y = grid.admittance_matrix();
    let s_eq: num_complex::Complex64 = injections(&y, &op.voltages()).iter().sum();
    let mut csv = String::from("bus,sample,delta_p,delta_q,outcome\n");
    for bus in grid.buses.iter().filter(|b| !b.kind.is_slack()) {
        let is_nf = bus.kind.is_normal_form();
        let mut sampler = SobolSampler::new(cfg.perturbation.dim(is_nf))?;
        for sample in 0..cfg.frt.n_samples {
            let u = sampler.next_point();
            let pert = make_perturbation(&cfg.perturbation, &u, is_nf)?;
            let (dp, dq, outcome) = match consistent_init(&model, &x_eq, bus.id, &pert) {
                Ok(x0) => {
                    let s0: num_complex::Complex64 =
                        injections(&y, &model.voltages(&x0)).iter().sum();
                    let d = s0 - s_eq;
                    let outcome =
                        match run_one(&model, &x_eq, &x0, &cfg.curve, &cfg.frt, cert.as_ref()) {
                            Outcome::Survived => "survived",
                            Outcome::Violated => "violated",
                            Outcome::InitFailed => "init_failed",
                            Outcome::IntegrationFailed => "integration_failed",
                        };
                    (d.re, d.im, outcome)
                }
                Err(_) => (f64::NAN, f64::NAN, "init_failed"),
            };
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                bus.id,
                sample,
                sig9(dp),
                sig9(dq),
                outcome
            ));
        }
    }
    Ok(csv)
}

pub struct PlotdataInputs<'a> {
    pub assessment_csv: &'a Path,
    /// Scatter plot inputs: dataset + trained model.
    pub dataset: Option<&'a Path>,
    pub model: Option<&'a Path>,
    /// Outcome-map inputs: grids dir + grid id.
    pub grids_dir: Option<&'a Path>,
    pub grid_id: Option<&'a str>,
}

pub fn cmd_plotdata(
    cfg: &RunConfig,
    inputs: &PlotdataInputs,
    out: &Path,
    force: bool,
) -> Result<()> {
    cfg.validate()?;
    let hist_path = out.join("histogram.csv");
    ensure_writable(&hist_path, force)?;
    std::fs::create_dir_all(out)?;
    let rows = parse_assessment_csv(&std::fs::read_to_string(inputs.assessment_csv)?)?;
    std::fs::write(&hist_path, histogram_csv(&rows))?;
    let mut manifest = RunManifest::new("plotdata", 0, cfg);
    manifest.push_artifact("histogram.csv");

    if let (Some(dataset), Some(model_path)) = (inputs.dataset, inputs.model) {
        let records = frt_core::surrogate::load_jsonl(dataset)?;
        let (_, _, test) = split_records(&records, cfg.split_seed);
        let model = Model::load_json(model_path)?;
        let path = out.join("scatter.csv");
        ensure_writable(&path, force)?;
        std::fs::write(&path, scatter_csv(&model, &test))?;
        manifest.push_artifact("scatter.csv");
    }

    if let (Some(grids_dir), Some(grid_id)) = (inputs.grids_dir, inputs.grid_id) {
        let (grid, op) = load_grid_with_op(grids_dir, grid_id)?;
        let path = out.join("outcomes.csv");
        ensure_writable(&path, force)?;
        std::fs::write(&path, outcomes_csv(cfg, &grid, &op)?)?;
        manifest.push_artifact("outcomes.csv");
    }
    manifest.save(out)?;
    Ok(())
}
