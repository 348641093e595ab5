use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rdspill::asymptotics::{lambda_table_for, tau_star, CutoffValues};
use rdspill::estimators::{
    cross_validate_r, donut_rdd, local_linear_rdd, local_spillover_regression, nadaraya_watson_rdd, CvResult,
    EstimateRecord,
};
use rdspill::experiments::{run_experiment, EstimatorKind, Provenance, SolutionCache};
use rdspill::population::{solve_population, true_estimands, SolveMethod, SolverReport, TreatmentRegime};
use rdspill::sampling::{draw_sample, Sample};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{EstimatorChoice, Rescale, RunConfig};
use crate::error::CliError;

#[derive(Debug, Serialize)]
struct TauStar {
    c: f64,
    value: f64,
}

#[derive(Debug, Serialize)]
struct SimulationSidecar {
    provenance: Provenance,
    data_file: String,
    n: usize,
    r: f64,
    grid_n: usize,
    model_hash: String,
    solver: SolverReport,
    tau_d: f64,
    tau_tot: f64,
    tau_star: Option<TauStar>,
}

#[derive(Debug, Serialize)]
struct DataProvenance {
    tool_version: String,
    config_hash: String,
    seed: u64,
    data_sha256: String,
    rescale: Option<Rescale>,
}

#[derive(Debug, Serialize)]
struct EstimateOutput {
    provenance: DataProvenance,
    records: Vec<EstimateRecord>,
}

#[derive(Debug, Serialize)]
struct CrossvalOutput {
    provenance: DataProvenance,
    result: CvResult,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Output(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::Output(e.to_string()))
}

/// `data.csv` -> `data.json`.
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

fn out_path(flag: Option<PathBuf>, cfg: &RunConfig, what: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| CliError::Config(format!("no output path for {what}; pass --out or set paths.out")))
}

fn data_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    flag.or_else(|| cfg.paths.data.clone())
        .ok_or_else(|| CliError::Config("no data file; pass --data or set paths.data".into()))
}

pub fn simulate(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let model = cfg.model()?;
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Config("the configuration has no `simulation` section".into()))?;
    let out = out_path(out, cfg, "the simulated sample")?;
    let sol = solve_population(model, sim.r, TreatmentRegime::Cutoff, sim.grid_n, SolveMethod::Neumann)?;
    let truth = true_estimands(model, sim.r, sim.grid_n)?;
    let tau_star = match sim.h.map(|h| 2.0 * sim.r / h) {
        Some(c) if c > 0.0 && c < 2.0 => {
            let table = lambda_table_for(model.delta0(), c)?;
            Some(TauStar { c, value: tau_star(CutoffValues::of(model), c, rdspill::Kernel::default(), &table)? })
        }
        _ => None,
    };
    let sample = draw_sample(&sol, model, sim.n, cfg.seed);
    let mut w = create(&out)?;
    sample.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::Output(e.to_string()))?;
    let sidecar = SimulationSidecar {
        provenance: Provenance::new(cfg.hash(), cfg.seed),
        data_file: out.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        n: sim.n,
        r: sim.r,
        grid_n: sim.grid_n,
        model_hash: sol.model_hash.clone(),
        solver: sol.solver_report,
        tau_d: truth.tau_d,
        tau_tot: truth.tau_tot,
        tau_star,
    };
    write_json(&sidecar_path(&out), &sidecar)?;
    println!("wrote {} rows to {}", sim.n, out.display());
    println!("tau_d = {}  tau_tot = {}", truth.tau_d, truth.tau_tot);
    if let Some(t) = &sidecar.tau_star {
        println!("tau_star(c = {}) = {}", t.c, t.value);
    }
    Ok(())
}

fn load_data(path: &Path, rescale: Option<Rescale>) -> Result<(Sample, String), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let sample = match rescale {
        Some(t) => Sample::read_csv_mapped(BufReader::new(&bytes[..]), |z| t.apply(z)),
        None => Sample::read_csv(BufReader::new(&bytes[..])),
    }
    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok((sample, digest))
}

fn data_provenance(cfg: &RunConfig, digest: String, rescale: Option<Rescale>) -> DataProvenance {
    let p = Provenance::new(cfg.hash(), cfg.seed);
    DataProvenance { tool_version: p.tool_version, config_hash: p.config_hash, seed: p.seed, data_sha256: digest, rescale }
}

/// Runs the chosen estimators on a sample; shared by the CLI and its tests.
pub fn estimate_records(
    sample: &Sample,
    cfg: &rdspill::estimators::EstimatorConfig,
    choice: EstimatorChoice,
) -> Result<Vec<EstimateRecord>, CliError> {
    let mut records = Vec::new();
    for kind in choice.kinds() {
        let rec = match kind {
            EstimatorKind::Ll => EstimateRecord::local_linear("ll", cfg, &local_linear_rdd(sample, cfg)?),
            EstimatorKind::Nw => EstimateRecord::nadaraya_watson(cfg, nadaraya_watson_rdd(sample, cfg)?),
            EstimatorKind::Donut => EstimateRecord::local_linear("donut", cfg, &donut_rdd(sample, cfg)?),
            EstimatorKind::Spillover => EstimateRecord::spillover(cfg, &local_spillover_regression(sample, cfg)?),
        };
        records.push(rec);
    }
    Ok(records)
}

pub fn estimate(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    choice: Option<EstimatorChoice>,
    rescale: Option<Rescale>,
) -> Result<(), CliError> {
    let est = cfg.estimator()?;
    let choice = choice.unwrap_or(cfg.estimators);
    let out = out_path(out, cfg, "the estimates")?;
    let (sample, digest) = load_data(&data_path(data, cfg)?, rescale)?;
    let records = estimate_records(&sample, est, choice)?;
    for r in &records {
        match r.tau_tot {
            Some(t) => println!("{:<10} tau_d = {:.6}  tau_tot = {:.6}", r.estimator, r.tau_d, t),
            None => println!("{:<10} tau = {:.6}", r.estimator, r.tau_d),
        }
    }
    write_json(&out, &EstimateOutput { provenance: data_provenance(cfg, digest, rescale), records })
}

pub fn crossval(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    rescale: Option<Rescale>,
) -> Result<(), CliError> {
    let est = cfg.estimator()?;
    let cv = cfg
        .crossval
        .as_ref()
        .ok_or_else(|| CliError::Config("the configuration has no `crossval` section".into()))?;
    let (sample, digest) = load_data(&data_path(data, cfg)?, rescale)?;
    let result = cross_validate_r(&sample, est, &cv.candidates, cv.folds, cfg.seed)?;
    let show = |v: Option<f64>| v.map(|m| format!("{m:.6e}")).unwrap_or_else(|| "infeasible".into());
    println!("{:>12}  {:>14}  {:>14}", "r", "mse_plus", "mse_minus");
    for row in &result.cv_table {
        println!("{:>12}  {:>14}  {:>14}", row.r, show(row.mse_plus), show(row.mse_minus));
    }
    println!("selected r_plus = {}  r_minus = {}", result.r_plus, result.r_minus);
    if let Some(out) = out.or_else(|| cfg.paths.out.clone()) {
        write_json(&out, &CrossvalOutput { provenance: data_provenance(cfg, digest, rescale), result })?;
    }
    Ok(())
}

pub fn experiment(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let plan = cfg.plan()?;
    let dir = out_path(out, cfg, "the experiment report")?;
    let mut report = run_experiment(&plan, &SolutionCache::new())?;
    report.provenance = Provenance::new(cfg.hash(), cfg.seed);
    write_json(&dir.join("report.json"), &report)?;
    let mut w = create(&dir.join("report.csv"))?;
    report.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::Output(e.to_string()))?;
    for c in &report.cells {
        let status = match c.pass {
            Some(true) => "pass",
            Some(false) => "FAIL",
            None => "info",
        };
        println!(
            "{status:<4} {:<10} {:<8} n={:<8} {:<9} {:<8} mean={:.5} se={:.5} {}={:.5}",
            c.group, c.regime, c.n, c.estimator, c.quantity, c.mean, c.se, c.target_name, c.target
        );
    }
    for k in &report.checks {
        println!("{} {}: {}", if k.pass { "pass" } else { "FAIL" }, k.name, k.detail);
    }
    if report.all_pass {
        Ok(())
    } else {
        let failed = report.failed_cells().count() + report.checks.iter().filter(|k| !k.pass).count();
        Err(CliError::CellsFailed(format!("{failed} experiment check(s) failed; see {}", dir.display())))
    }
}
