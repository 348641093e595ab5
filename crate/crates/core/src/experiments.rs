//! Monte Carlo studies of the RDD and spillover estimators.
//!
//! Every replication draws from its own ChaCha20 stream, so reports are
//! bit-identical across runs and thread counts.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{lambda_table_for, tau_star, CutoffValues};
use crate::error::{Error, Result};
use crate::estimators::{
    donut_rdd, local_linear_rdd, local_spillover_regression, nadaraya_watson_rdd, EstimatorConfig,
};
use crate::funcspace::{ModelSpec, Support};
use crate::kernel::Kernel;
use crate::limits::{population_local_linear, population_nadaraya_watson};
use crate::population::{solve_population, true_estimands, PopulationSolution, SolveMethod, TreatmentRegime};
use crate::sampling::draw_sample_stream;

/// Absolute tolerances asserted at the largest sample size of the
/// spillover consistency study.
pub const CONSISTENCY_TAU_D_TOL: f64 = 0.05;
pub const CONSISTENCY_COEF_TOL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    PhaseTransition,
    SpilloverConsistency,
    Donut,
    LlVsNw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ll,
    Nw,
    Donut,
    Spillover,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Ll => "ll",
            EstimatorKind::Nw => "nw",
            EstimatorKind::Donut => "donut",
            EstimatorKind::Spillover => "spillover",
        }
    }
}

/// Theoretical limit a regime is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    TauD,
    TauTot,
    TauStar,
}

/// `r = scale * h * n^kappa`, then capped at `cap` and floored at `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub label: String,
    pub target: Target,
    pub scale: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

impl RegimeSpec {
    pub fn radius(&self, h: f64, n: usize) -> f64 {
        let mut r = self.scale * h * (n as f64).powf(self.kappa);
        if let Some(cap) = self.cap {
            r = r.min(cap);
        }
        if let Some(floor) = self.floor {
            r = r.max(floor);
        }
        r
    }

    /// `r = c h / 2`.
    pub fn intermediate(label: &str, c: f64) -> RegimeSpec {
        RegimeSpec { label: label.into(), target: Target::TauStar, scale: 0.5 * c, kappa: 0.0, cap: None, floor: None }
    }

    /// The three regimes of the phase-transition acceptance check:
    /// `r = 8h`, `r = h n^{-1/10}` and `r = h/2`.
    pub fn acceptance_set(grid_n: usize) -> Vec<RegimeSpec> {
        let step = 2.0 / (grid_n - 1) as f64;
        vec![
            RegimeSpec { label: "r>>h".into(), target: Target::TauD, scale: 8.0, kappa: 0.0, cap: Some(0.95), floor: None },
            RegimeSpec {
                label: "r<<h".into(),
                target: Target::TauTot,
                scale: 1.0,
                kappa: -0.1,
                cap: None,
                floor: Some(8.0 * step),
            },
            RegimeSpec::intermediate("r~h", 1.0),
        ]
    }

    /// Rate-based encodings: `r = h n^{1/10}` capped at 0.9,
    /// `r = h n^{-1/10}` floored at eight grid steps, and `r = h/2`.
    pub fn rate_set(grid_n: usize) -> Vec<RegimeSpec> {
        let mut v = RegimeSpec::acceptance_set(grid_n);
        v[0].scale = 1.0;
        v[0].kappa = 0.1;
        v[0].cap = Some(0.9);
        v
    }
}

fn default_bandwidth_scale() -> f64 {
    1.0
}
fn default_grid_n() -> usize {
    crate::population::DEFAULT_GRID_N
}
fn default_se_multiple() -> f64 {
    3.0
}
fn default_bias_allowance() -> f64 {
    0.05
}
fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Ll]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub study: Study,
    pub model: ModelSpec,
    pub regimes: Vec<RegimeSpec>,
    pub n_grid: Vec<usize>,
    /// `h = bandwidth_scale * n^{-1/5}`.
    #[serde(default = "default_bandwidth_scale")]
    pub bandwidth_scale: f64,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Cells pass when `|mean - target| <= max(se_multiple * se, bias_allowance)`.
    #[serde(default = "default_se_multiple")]
    pub se_multiple: f64,
    #[serde(default = "default_bias_allowance")]
    pub bias_allowance: f64,
}

impl ExperimentPlan {
    pub fn new(study: Study, model: ModelSpec, regimes: Vec<RegimeSpec>, n_grid: Vec<usize>, replications: usize, seed: u64) -> Self {
        ExperimentPlan {
            study,
            model,
            regimes,
            n_grid,
            bandwidth_scale: default_bandwidth_scale(),
            replications,
            seed,
            estimators: default_estimators(),
            kernel: Kernel::default(),
            grid_n: default_grid_n(),
            se_multiple: default_se_multiple(),
            bias_allowance: default_bias_allowance(),
        }
    }

    pub fn with_estimators(mut self, estimators: Vec<EstimatorKind>) -> Self {
        self.estimators = estimators;
        self
    }

    pub fn bandwidth(&self, n: usize) -> f64 {
        self.bandwidth_scale * (n as f64).powf(-0.2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config(format!("need at least 2 replications, got {}", self.replications)));
        }
        if self.n_grid.is_empty() || self.regimes.is_empty() {
            return Err(Error::Config("the plan needs at least one sample size and one regime".into()));
        }
        if !(self.bandwidth_scale > 0.0) {
            return Err(Error::Config("bandwidth_scale must be positive".into()));
        }
        for &n in &self.n_grid {
            if n < 20 {
                return Err(Error::Config(format!("sample size {n} is too small")));
            }
            let h = self.bandwidth(n);
            if h > 1.0 {
                return Err(Error::Config(format!("bandwidth {h} at n = {n} exceeds 1")));
            }
            for reg in &self.regimes {
                let r = reg.radius(h, n);
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::Config(format!("regime {} gives r = {r} at n = {n}; need 0 < r < 1", reg.label)));
                }
            }
        }
        Ok(())
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("plan serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64) -> Provenance {
        Provenance { tool_version: env!("CARGO_PKG_VERSION").to_string(), config_hash, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// Pass when the mean is within tolerance of the target.
    Within,
    /// Pass when the mean is more than `tolerance` away from the target.
    Outside,
    /// Reported only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub study: Study,
    pub group: String,
    pub regime: String,
    pub n: usize,
    pub h: f64,
    pub r: f64,
    pub estimator: String,
    pub quantity: String,
    pub replications: usize,
    pub failures: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
    pub target_name: String,
    pub target: f64,
    pub bias: f64,
    pub distance_se: f64,
    /// Finite-bandwidth population limit of the estimator, when known.
    pub population_limit: Option<f64>,
    pub check: CheckKind,
    pub tolerance: f64,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCheck {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub study: Study,
    pub provenance: Provenance,
    pub cells: Vec<CellRecord>,
    pub checks: Vec<StudyCheck>,
    pub all_pass: bool,
}

impl ExperimentReport {
    fn assemble(plan: &ExperimentPlan, cells: Vec<CellRecord>, checks: Vec<StudyCheck>) -> ExperimentReport {
        let all_pass = cells.iter().all(|c| c.pass != Some(false)) && checks.iter().all(|c| c.pass);
        ExperimentReport { study: plan.study, provenance: Provenance::new(plan.content_hash(), plan.seed), cells, checks, all_pass }
    }

    pub fn failed_cells(&self) -> impl Iterator<Item = &CellRecord> {
        self.cells.iter().filter(|c| c.pass == Some(false))
    }

    pub fn write_json<W: Write>(&self, w: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(std::io::Error::other)
    }

    /// One row per cell, provenance repeated on every row.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "study", "group", "regime", "n", "h", "r", "estimator", "quantity", "replications", "failures", "mean",
            "sd", "se", "target_name", "target", "bias", "distance_se", "population_limit", "check", "tolerance",
            "pass", "tool_version", "config_hash", "seed",
        ])?;
        let study = serde_json::to_value(self.study).map_err(std::io::Error::other)?;
        let study = study.as_str().unwrap_or_default().to_string();
        for c in &self.cells {
            let check = match c.check {
                CheckKind::Within => "within",
                CheckKind::Outside => "outside",
                CheckKind::None => "none",
            };
            out.write_record([
                study.clone(),
                c.group.clone(),
                c.regime.clone(),
                c.n.to_string(),
                c.h.to_string(),
                c.r.to_string(),
                c.estimator.clone(),
                c.quantity.clone(),
                c.replications.to_string(),
                c.failures.to_string(),
                c.mean.to_string(),
                c.sd.to_string(),
                c.se.to_string(),
                c.target_name.clone(),
                c.target.to_string(),
                c.bias.to_string(),
                c.distance_se.to_string(),
                c.population_limit.map(|v| v.to_string()).unwrap_or_default(),
                check.to_string(),
                c.tolerance.to_string(),
                c.pass.map(|p| p.to_string()).unwrap_or_default(),
                self.provenance.tool_version.clone(),
                self.provenance.config_hash.clone(),
                self.provenance.seed.to_string(),
            ])?;
        }
        out.flush()
    }
}

/// `(model hash, regime, r bits, grid_n)`.
type CacheKey = (String, TreatmentRegime, u64, usize);

/// Insert-only cache of population solutions.
#[derive(Default)]
pub struct SolutionCache {
    map: Mutex<HashMap<CacheKey, Arc<PopulationSolution>>>,
}

impl SolutionCache {
    pub fn new() -> SolutionCache {
        SolutionCache::default()
    }

    pub fn get(&self, model: &ModelSpec, regime: TreatmentRegime, r: f64, grid_n: usize) -> Result<Arc<PopulationSolution>> {
        let key = (model.content_hash(), regime, r.to_bits(), grid_n);
        if let Some(sol) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(sol.clone());
        }
        let sol = Arc::new(solve_population(model, r, regime, grid_n, SolveMethod::Neumann)?);
        Ok(self.map.lock().expect("cache lock").entry(key).or_insert(sol).clone())
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn cell_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

struct Summary {
    replications: usize,
    failures: usize,
    mean: f64,
    sd: f64,
    se: f64,
}

fn summarize(values: &[Option<f64>]) -> Summary {
    let ok: Vec<f64> = values.iter().flatten().copied().collect();
    let k = ok.len();
    let mean = if k > 0 { ok.iter().sum::<f64>() / k as f64 } else { f64::NAN };
    let sd = if k > 1 { (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt() } else { f64::NAN };
    Summary { replications: values.len(), failures: values.len() - k, mean, sd, se: sd / (k as f64).sqrt() }
}

struct CellSpec<'a> {
    plan: &'a ExperimentPlan,
    group: &'a str,
    regime: &'a str,
    n: usize,
    h: f64,
    r: f64,
}

impl CellSpec<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        estimator: &str,
        quantity: &str,
        values: &[Option<f64>],
        target_name: &str,
        target: f64,
        population_limit: Option<f64>,
        check: CheckKind,
        tolerance: Option<f64>,
    ) -> CellRecord {
        let s = summarize(values);
        let bias = s.mean - target;
        let tolerance = tolerance.unwrap_or_else(|| (self.plan.se_multiple * s.se).max(self.plan.bias_allowance));
        let pass = match check {
            CheckKind::None => None,
            _ if s.failures > 0 || !s.mean.is_finite() => Some(false),
            CheckKind::Within => Some(bias.abs() <= tolerance),
            CheckKind::Outside => Some(bias.abs() > tolerance),
        };
        CellRecord {
            study: self.plan.study,
            group: self.group.into(),
            regime: self.regime.into(),
            n: self.n,
            h: self.h,
            r: self.r,
            estimator: estimator.into(),
            quantity: quantity.into(),
            replications: s.replications,
            failures: s.failures,
            mean: s.mean,
            sd: s.sd,
            se: s.se,
            target_name: target_name.into(),
            target,
            bias,
            distance_se: bias.abs() / s.se,
            population_limit,
            check,
            tolerance,
            pass,
        }
    }
}

/// Runs `f` on every replication sample of a cell, in parallel, returning
/// results in replication order.
fn replicate<T, F>(plan: &ExperimentPlan, sol: &PopulationSolution, model: &ModelSpec, n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&crate::sampling::Sample) -> T + Sync,
{
    (0..plan.replications as u64)
        .into_par_iter()
        .map(|rep| f(&draw_sample_stream(sol, model, n, seed, rep)))
        .collect()
}

fn column<const K: usize>(rows: &[[Option<f64>; K]], k: usize) -> Vec<Option<f64>> {
    rows.iter().map(|r| r[k]).collect()
}

pub fn run_experiment(plan: &ExperimentPlan, cache: &SolutionCache) -> Result<ExperimentReport> {
    match plan.study {
        Study::PhaseTransition => run_phase_transition(plan, cache),
        Study::SpilloverConsistency => run_spillover_consistency(plan, cache),
        Study::Donut => run_donut_study(plan, cache),
        Study::LlVsNw => run_ll_vs_nw(plan, cache),
    }
}

/// Local linear RDD under each regime, compared with `tau_d`, `tau_tot` or
/// `tau_star` according to the regime.
pub fn run_phase_transition(plan: &ExperimentPlan, cache: &SolutionCache) -> Result<ExperimentReport> {
    plan.validate()?;
    let model = &plan.model;
    let at0 = CutoffValues::of(model);
    let mut cells = Vec::new();
    for reg in &plan.regimes {
        for &n in &plan.n_grid {
            let h = plan.bandwidth(n);
            let r = reg.radius(h, n);
            let sol = cache.get(model, TreatmentRegime::Cutoff, r, plan.grid_n)?;
            let (target_name, target) = match reg.target {
                Target::TauD => ("tau_d", model.tau_d()),
                Target::TauTot => ("tau_tot", true_estimands(model, r, plan.grid_n)?.tau_tot),
                Target::TauStar => {
                    let c = 2.0 * r / h;
                    let table = lambda_table_for(at0.delta0, c)?;
                    ("tau_star", tau_star(at0, c, plan.kernel, &table)?)
                }
            };
            let cfg = EstimatorConfig::new(plan.kernel, h);
            let seed = cell_seed(plan.seed, &["phase-transition", &reg.label, &n.to_string()]);
            let kinds = plan.estimators.clone();
            let rows = replicate(plan, &sol, model, n, seed, |s| {
                let mut out = [None; 2];
                if kinds.contains(&EstimatorKind::Ll) {
                    out[0] = local_linear_rdd(s, &cfg).ok().map(|e| e.tau_hat);
                }
                if kinds.contains(&EstimatorKind::Nw) {
                    out[1] = nadaraya_watson_rdd(s, &cfg).ok();
                }
                out
            });
            let spec = CellSpec { plan, group: "cutoff", regime: &reg.label, n, h, r };
            if kinds.contains(&EstimatorKind::Ll) {
                let lim = population_local_linear(&sol, plan.kernel, h, 0.0)?.tau;
                cells.push(spec.record("ll", "tau", &column(&rows, 0), target_name, target, Some(lim), CheckKind::Within, None));
            }
            if kinds.contains(&EstimatorKind::Nw) {
                let lim = population_nadaraya_watson(&sol, plan.kernel, h)?;
                cells.push(spec.record("nw", "tau", &column(&rows, 1), target_name, target, Some(lim), CheckKind::None, None));
            }
        }
    }
    Ok(ExperimentReport::assemble(plan, cells, Vec::new()))
}

/// Spillover regression at `r = c h / 2` over a ladder of sample sizes.
pub fn run_spillover_consistency(plan: &ExperimentPlan, cache: &SolutionCache) -> Result<ExperimentReport> {
    plan.validate()?;
    let model = &plan.model;
    let mut ladder = plan.n_grid.clone();
    ladder.sort_unstable();
    ladder.dedup();
    let largest = *ladder.last().expect("validated non-empty");
    let mut cells = Vec::new();
    let mut checks = Vec::new();
    for reg in &plan.regimes {
        let mut tau_d_bias = Vec::new();
        for &n in &ladder {
            let h = plan.bandwidth(n);
            let r = reg.radius(h, n);
            if 2.0 * r / h >= 2.0 {
                return Err(Error::Config(format!("regime {} has 2r/h >= 2; the spillover regression needs c < 2", reg.label)));
            }
            let sol = cache.get(model, TreatmentRegime::Cutoff, r, plan.grid_n)?;
            let tau_tot = true_estimands(model, r, plan.grid_n)?.tau_tot;
            let cfg = EstimatorConfig::new(plan.kernel, h).with_r(r);
            let seed = cell_seed(plan.seed, &["spillover-consistency", &reg.label, &n.to_string()]);
            let with_ll = plan.estimators.contains(&EstimatorKind::Ll);
            let rows = replicate(plan, &sol, model, n, seed, |s| {
                let mut out = [None; 5];
                if let Ok(e) = local_spillover_regression(s, &cfg) {
                    out = [Some(e.tau_d_hat), Some(e.delta_hat), Some(e.gamma_hat), e.tau_tot_hat, None];
                }
                if with_ll {
                    out[4] = local_linear_rdd(s, &cfg).ok().map(|e| e.tau_hat);
                }
                out
            });
            let spec = CellSpec { plan, group: "cutoff", regime: &reg.label, n, h, r };
            let at_end = n == largest;
            let chk = if at_end { CheckKind::Within } else { CheckKind::None };
            let td = spec.record("spillover", "tau_d", &column(&rows, 0), "tau_d", model.tau_d(), None, chk, Some(CONSISTENCY_TAU_D_TOL));
            tau_d_bias.push((n, td.bias, td.se));
            cells.push(td);
            cells.push(spec.record("spillover", "delta", &column(&rows, 1), "delta0", model.delta0(), None, chk, Some(CONSISTENCY_COEF_TOL)));
            cells.push(spec.record("spillover", "gamma", &column(&rows, 2), "gamma0", model.gamma0(), None, chk, Some(CONSISTENCY_COEF_TOL)));
            cells.push(spec.record("spillover", "tau_tot", &column(&rows, 3), "tau_tot", tau_tot, None, chk, Some(CONSISTENCY_COEF_TOL)));
            if with_ll {
                let lim = population_local_linear(&sol, plan.kernel, h, 0.0)?.tau;
                cells.push(spec.record("ll", "tau", &column(&rows, 4), "tau_d", model.tau_d(), Some(lim), CheckKind::None, None));
            }
        }
        let mut ok = true;
        let mut detail = Vec::new();
        for w in tau_d_bias.windows(2) {
            let ((n0, b0, s0), (n1, b1, s1)) = (w[0], w[1]);
            let slack = (s0 * s0 + s1 * s1).sqrt();
            let step_ok = b1.abs() - b0.abs() <= slack;
            ok &= step_ok;
            detail.push(format!("n {n0}->{n1}: |bias| {:.4}->{:.4} (slack {slack:.4})", b0.abs(), b1.abs()));
        }
        checks.push(StudyCheck {
            name: format!("{}: |bias(tau_d)| nonincreasing in n", reg.label),
            detail: detail.join("; "),
            pass: ok,
        });
    }
    Ok(ExperimentReport::assemble(plan, cells, checks))
}

/// Donut RD with `h_donut = r` on the plan model (two-sided `gamma`,
/// target `tau_tot`) and on its one-sided variant `gamma(z) 1{z <= 0}`
/// (target `tau_d`).
pub fn run_donut_study(plan: &ExperimentPlan, cache: &SolutionCache) -> Result<ExperimentReport> {
    plan.validate()?;
    if !plan.model.has_no_endogenous_spillover() {
        return Err(Error::Config("the donut study requires delta = 0".into()));
    }
    let two_sided = plan.model.clone();
    let one_sided = ModelSpec::new(
        two_sided.m_plus.clone(),
        two_sided.m_minus.clone(),
        two_sided.delta.clone(),
        two_sided.gamma.clone().with_support(Support::Nonpositive),
        two_sided.noise_sd.clone(),
    )?;
    let mut cells = Vec::new();
    for (group, model, use_tot) in [("two-sided", &two_sided, true), ("one-sided", &one_sided, false)] {
        for reg in &plan.regimes {
            for &n in &plan.n_grid {
                let h = plan.bandwidth(n);
                let r = reg.radius(h, n);
                if r >= h {
                    return Err(Error::Config(format!("regime {} has r >= h; the donut needs r < h", reg.label)));
                }
                let sol = cache.get(model, TreatmentRegime::Cutoff, r, plan.grid_n)?;
                let (target_name, target) =
                    if use_tot { ("tau_tot", true_estimands(model, r, plan.grid_n)?.tau_tot) } else { ("tau_d", model.tau_d()) };
                let cfg = EstimatorConfig::new(plan.kernel, h).with_donut(r);
                let seed = cell_seed(plan.seed, &["donut", group, &reg.label, &n.to_string()]);
                let rows = replicate(plan, &sol, model, n, seed, |s| [donut_rdd(s, &cfg).ok().map(|e| e.tau_hat)]);
                let lim = population_local_linear(&sol, plan.kernel, h, r)?.tau;
                let spec = CellSpec { plan, group, regime: &reg.label, n, h, r };
                cells.push(spec.record("donut", "tau", &column(&rows, 0), target_name, target, Some(lim), CheckKind::Within, None));
            }
        }
    }
    Ok(ExperimentReport::assemble(plan, cells, Vec::new()))
}

/// Local linear versus Nadaraya-Watson with exogenous spillovers only and
/// `r >= h`.
pub fn run_ll_vs_nw(plan: &ExperimentPlan, cache: &SolutionCache) -> Result<ExperimentReport> {
    plan.validate()?;
    let model = &plan.model;
    if !model.has_no_endogenous_spillover() {
        return Err(Error::Config("the LL-vs-NW study requires delta = 0".into()));
    }
    let exogenous = !model.has_no_exogenous_spillover();
    let mut cells = Vec::new();
    for reg in &plan.regimes {
        for &n in &plan.n_grid {
            let h = plan.bandwidth(n);
            let r = reg.radius(h, n);
            if r < h {
                return Err(Error::Config(format!("regime {} has r < h; this study needs r >= h", reg.label)));
            }
            let sol = cache.get(model, TreatmentRegime::Cutoff, r, plan.grid_n)?;
            let tau_d = model.tau_d();
            let tau_tot = true_estimands(model, r, plan.grid_n)?.tau_tot;
            let cfg = EstimatorConfig::new(plan.kernel, h);
            let seed = cell_seed(plan.seed, &["ll-vs-nw", &reg.label, &n.to_string()]);
            let rows = replicate(plan, &sol, model, n, seed, |s| {
                [local_linear_rdd(s, &cfg).ok().map(|e| e.tau_hat), nadaraya_watson_rdd(s, &cfg).ok()]
            });
            let spec = CellSpec { plan, group: "cutoff", regime: &reg.label, n, h, r };
            let ll_lim = population_local_linear(&sol, plan.kernel, h, 0.0)?.tau;
            let nw_lim = population_nadaraya_watson(&sol, plan.kernel, h)?;
            cells.push(spec.record("ll", "tau", &column(&rows, 0), "tau_d", tau_d, Some(ll_lim), CheckKind::Within, None));
            let nw = column(&rows, 1);
            if exogenous {
                // separated from both targets by more than 5 SE
                let se = summarize(&nw).se;
                for (name, t) in [("tau_d", tau_d), ("tau_tot", tau_tot)] {
                    cells.push(spec.record("nw", "tau", &nw, name, t, Some(nw_lim), CheckKind::Outside, Some(5.0 * se)));
                }
            } else {
                cells.push(spec.record("nw", "tau", &nw, "tau_d", tau_d, Some(nw_lim), CheckKind::Within, None));
            }
        }
    }
    Ok(ExperimentReport::assemble(plan, cells, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcspace::FuncSpec;

    fn no_spillover() -> ModelSpec {
        ModelSpec::new(
            FuncSpec::polynomial(vec![1.0, 0.3]).unwrap(),
            FuncSpec::polynomial(vec![0.0, 0.2]).unwrap(),
            FuncSpec::constant(0.0),
            FuncSpec::constant(0.0),
            FuncSpec::constant(0.2),
        )
        .unwrap()
    }

    fn exogenous_only(gamma: f64) -> ModelSpec {
        let b = ModelSpec::benchmark();
        ModelSpec::new(b.m_plus, b.m_minus, FuncSpec::constant(0.0), FuncSpec::constant(gamma), b.noise_sd).unwrap()
    }

    #[test]
    fn regime_radii() {
        let set = RegimeSpec::acceptance_set(4001);
        let h = 0.1;
        assert!((set[0].radius(h, 100_000) - 0.8).abs() < 1e-15);
        assert!((set[1].radius(h, 100_000) - 0.1 * 100_000f64.powf(-0.1)).abs() < 1e-15);
        assert_eq!(set[1].radius(1e-4, 100_000), 8.0 * 2.0 / 4000.0);
        assert_eq!(set[2].radius(h, 7), 0.05);
        assert_eq!(RegimeSpec::rate_set(4001)[0].radius(0.5, 1 << 30), 0.9);
    }

    #[test]
    fn plan_validation() {
        let plan = ExperimentPlan::new(Study::PhaseTransition, no_spillover(), RegimeSpec::acceptance_set(4001), vec![1000], 1, 0);
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::new(Study::PhaseTransition, no_spillover(), vec![RegimeSpec::intermediate("x", 1.0)], vec![1000], 5, 0);
        assert!(plan.validate().is_ok());
        plan.regimes[0].scale = 20.0;
        assert!(plan.validate().is_err());
        let json = serde_json::to_string(&plan).unwrap();
        let back: ExperimentPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        let extra = json.replacen('{', r#"{"bogus":1,"#, 1);
        assert!(serde_json::from_str::<ExperimentPlan>(&extra).is_err());
    }

    #[test]
    fn no_spillover_phase_transition_all_pass() {
        let plan = ExperimentPlan::new(Study::PhaseTransition, no_spillover(), RegimeSpec::acceptance_set(4001), vec![20_000], 40, 3)
            .with_estimators(vec![EstimatorKind::Ll, EstimatorKind::Nw]);
        let report = run_phase_transition(&plan, &SolutionCache::new()).unwrap();
        assert_eq!(report.cells.len(), 3 * 2);
        for c in &report.cells {
            assert!((c.target - 1.0).abs() < 1e-6, "{c:?}");
        }
        assert!(report.all_pass, "{:#?}", report.cells);
    }

    #[test]
    fn reports_are_reproducible_and_thread_independent() {
        let mut plan = ExperimentPlan::new(Study::PhaseTransition, ModelSpec::benchmark(), vec![RegimeSpec::intermediate("r~h", 1.0)], vec![5000], 8, 42);
        plan.grid_n = 1001;
        let a = run_experiment(&plan, &SolutionCache::new()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_experiment(&plan, &SolutionCache::new()).unwrap());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let mut ja = Vec::new();
        a.write_csv(&mut ja).unwrap();
        let mut jb = Vec::new();
        b.write_csv(&mut jb).unwrap();
        assert_eq!(ja, jb);
        assert_eq!(String::from_utf8(ja).unwrap().lines().count(), 2);
        plan.seed = 43;
        let c = run_experiment(&plan, &SolutionCache::new()).unwrap();
        assert_ne!(a.cells[0].mean, c.cells[0].mean);
    }

    #[test]
    fn cache_reuses_solutions() {
        let cache = SolutionCache::new();
        let m = ModelSpec::benchmark();
        let a = cache.get(&m, TreatmentRegime::Cutoff, 0.1, 801).unwrap();
        let b = cache.get(&m, TreatmentRegime::Cutoff, 0.1, 801).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        cache.get(&m, TreatmentRegime::Cutoff, 0.2, 801).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn ll_vs_nw_guards_and_collapse() {
        let reg = vec![RegimeSpec { label: "r=h".into(), target: Target::TauD, scale: 1.0, kappa: 0.0, cap: None, floor: None }];
        let plan = ExperimentPlan::new(Study::LlVsNw, ModelSpec::benchmark(), reg.clone(), vec![20_000], 20, 1);
        assert!(matches!(run_ll_vs_nw(&plan, &SolutionCache::new()), Err(Error::Config(_))));
        let plan = ExperimentPlan::new(Study::LlVsNw, exogenous_only(0.0), reg, vec![20_000], 40, 1);
        let report = run_ll_vs_nw(&plan, &SolutionCache::new()).unwrap();
        assert_eq!(report.cells.len(), 2);
        assert!(report.all_pass, "{:#?}", report.cells);
    }

    #[test]
    fn donut_requires_no_endogenous_spillover() {
        let plan = ExperimentPlan::new(Study::Donut, ModelSpec::benchmark(), vec![RegimeSpec::intermediate("r~h", 1.0)], vec![1000], 4, 1);
        assert!(matches!(run_donut_study(&plan, &SolutionCache::new()), Err(Error::Config(_))));
    }

    #[test]
    fn spillover_study_rejects_wide_radius() {
        let plan = ExperimentPlan::new(Study::SpilloverConsistency, ModelSpec::benchmark(), vec![RegimeSpec::intermediate("c=2", 2.0)], vec![5000], 4, 1);
        assert!(matches!(run_spillover_consistency(&plan, &SolutionCache::new()), Err(Error::Config(_))));
    }
}
