use std::path::{Path, PathBuf};

use rdspill::estimators::EstimatorConfig;
use rdspill::experiments::{EstimatorKind, ExperimentPlan, RegimeSpec, Study};
use rdspill::funcspace::ModelSpec;
use rdspill::Kernel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Ll,
    Nw,
    Donut,
    Spillover,
    #[default]
    All,
}

impl EstimatorChoice {
    pub fn kinds(&self) -> Vec<EstimatorKind> {
        match self {
            EstimatorChoice::Ll => vec![EstimatorKind::Ll],
            EstimatorChoice::Nw => vec![EstimatorKind::Nw],
            EstimatorChoice::Donut => vec![EstimatorKind::Donut],
            EstimatorChoice::Spillover => vec![EstimatorKind::Spillover],
            EstimatorChoice::All => {
                vec![EstimatorKind::Ll, EstimatorKind::Nw, EstimatorKind::Donut, EstimatorKind::Spillover]
            }
        }
    }
}

fn default_grid_n() -> usize {
    rdspill::population::DEFAULT_GRID_N
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n: usize,
    pub r: f64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Bandwidth of an intended analysis; when `0 < 2r/h < 2` the sidecar
    /// also reports `tau_star` at `c = 2r/h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossvalSection {
    pub candidates: Vec<f64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_folds() -> usize {
    5
}

/// `ExperimentPlan` without the model and seed, which come from the top
/// level of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub study: Study,
    pub regimes: Vec<RegimeSpec>,
    pub n_grid: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_scale: Option<f64>,
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<EstimatorKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_multiple: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_allowance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// One JSON document driving simulate, estimate, crossval and experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default)]
    pub estimators: EstimatorChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossval: Option<CrossvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentSection>,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(est) = &self.estimator {
            est.validate()?;
        }
        if let Some(sim) = &self.simulation {
            if sim.n == 0 {
                return Err(CliError::Config("simulation.n must be positive".into()));
            }
            if !(sim.r > 0.0 && sim.r < 2.0) {
                return Err(CliError::Config(format!("simulation.r must lie in (0, 2), got {}", sim.r)));
            }
            if let Some(h) = sim.h {
                if !(h > 0.0 && h <= 1.0) {
                    return Err(CliError::Config(format!("simulation.h must lie in (0, 1], got {h}")));
                }
            }
        }
        if let Some(cv) = &self.crossval {
            if cv.candidates.is_empty() {
                return Err(CliError::Config("crossval.candidates is empty".into()));
            }
        }
        if self.experiment.is_some() {
            self.plan()?.validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration (after command-line overrides).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn model(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Config("the configuration has no `model`".into()))
    }

    pub fn estimator(&self) -> Result<&EstimatorConfig, CliError> {
        self.estimator.as_ref().ok_or_else(|| CliError::Config("the configuration has no `estimator`".into()))
    }

    pub fn plan(&self) -> Result<ExperimentPlan, CliError> {
        let e = self
            .experiment
            .as_ref()
            .ok_or_else(|| CliError::Config("the configuration has no `experiment`".into()))?;
        let mut plan =
            ExperimentPlan::new(e.study, self.model()?.clone(), e.regimes.clone(), e.n_grid.clone(), e.replications, self.seed);
        if let Some(v) = e.bandwidth_scale {
            plan.bandwidth_scale = v;
        }
        if let Some(v) = &e.estimators {
            plan.estimators = v.clone();
        }
        if let Some(v) = e.kernel {
            plan.kernel = v;
        }
        if let Some(v) = e.grid_n {
            plan.grid_n = v;
        }
        if let Some(v) = e.se_multiple {
            plan.se_multiple = v;
        }
        if let Some(v) = e.bias_allowance {
            plan.bias_allowance = v;
        }
        Ok(plan)
    }
}

/// Affine map of a raw running variable onto `[-1, 1]` with the cutoff at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub min: f64,
    pub cutoff: f64,
    pub max: f64,
    pub scale: f64,
}

impl std::str::FromStr for Rescale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
            .collect::<Result<_, _>>()?;
        let [min, cutoff, max] = parts[..] else {
            return Err("expected `min,cutoff,max`".into());
        };
        if !(min < cutoff && cutoff < max) {
            return Err("need min < cutoff < max".into());
        }
        Ok(Rescale { min, cutoff, max, scale: (cutoff - min).max(max - cutoff) })
    }
}

impl Rescale {
    pub fn apply(&self, z: f64) -> f64 {
        (z - self.cutoff) / self.scale
    }
}
