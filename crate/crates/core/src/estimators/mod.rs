//! Local linear, Nadaraya-Watson, donut and local spillover regression
//! estimators, and cross-validation of the spillover radius.

mod crossval;
mod rdd;
mod spillover;
mod wls;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result, Side};
use crate::kernel::Kernel;
use crate::sampling::Sample;

pub use crossval::{cross_validate_r, CvResult, CvRow};
pub use rdd::{donut_rdd, local_linear_rdd, nadaraya_watson_rdd, RddEstimate};
pub use spillover::{
    local_spillover_regression, local_spillover_regression_with, mu_hat, mu_hat_at_observation, spillover_columns,
    MuHat, NeighborMeans, SpilloverColumns, SpilloverEstimate, ILL_POSED_CONDITION,
};

/// Condition number above which a local linear design counts as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// How the per-side coefficients on the spillover regressors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Average,
    PlusOnly,
    MinusOnly,
}

impl Pooling {
    pub fn pool(&self, plus: f64, minus: f64) -> f64 {
        match self {
            Pooling::Average => 0.5 * (plus + minus),
            Pooling::PlusOnly => plus,
            Pooling::MinusOnly => minus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default)]
    pub kernel: Kernel,
    pub h: f64,
    /// Spillover radius; required by the spillover regression only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Inner exclusion radius of the donut estimator.
    #[serde(default)]
    pub h_donut: f64,
    #[serde(default)]
    pub pooling: Pooling,
}

impl EstimatorConfig {
    pub fn new(kernel: Kernel, h: f64) -> EstimatorConfig {
        EstimatorConfig { kernel, h, r: None, h_donut: 0.0, pooling: Pooling::Average }
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = Some(r);
        self
    }

    pub fn with_donut(mut self, h_donut: f64) -> Self {
        self.h_donut = h_donut;
        self
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h <= 1.0) {
            return Err(Error::Config(format!("bandwidth h must lie in (0, 1], got {}", self.h)));
        }
        if !(self.h_donut >= 0.0 && self.h_donut < self.h) {
            return Err(Error::Config(format!("h_donut must lie in [0, h), got {}", self.h_donut)));
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r < 2.0) {
                return Err(Error::Config(format!("spillover radius must lie in (0, 2), got {r}")));
            }
        }
        Ok(())
    }

    pub fn radius(&self) -> Result<f64> {
        self.r.ok_or_else(|| Error::Config("the spillover regression needs a radius `r`".into()))
    }
}

/// Kernel-weighted observations on one side, sorted by `(z, y)` so results
/// do not depend on the row order of the sample.
#[derive(Debug, Clone)]
pub(crate) struct SideRows {
    pub side: Side,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub index: Vec<usize>,
}

impl SideRows {
    /// Rows on `side` with positive weight and `|z| >= inner`.
    pub fn collect(sample: &Sample, kernel: Kernel, h: f64, inner: f64, side: Side) -> SideRows {
        let mut rows: Vec<(f64, f64, f64, usize)> = sample
            .z
            .iter()
            .zip(&sample.y)
            .enumerate()
            .filter(|(_, (z, _))| Side::of(**z) == side && z.abs() >= inner)
            .filter_map(|(i, (&z, &y))| {
                let w = kernel.weight(z / h);
                (w > 0.0).then_some((z, y, w, i))
            })
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        SideRows {
            side,
            z: rows.iter().map(|r| r.0).collect(),
            y: rows.iter().map(|r| r.1).collect(),
            w: rows.iter().map(|r| r.2).collect(),
            index: rows.iter().map(|r| r.3).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    /// At least `min` points with at least two distinct `z` values.
    pub fn require(&self, min: usize) -> Result<()> {
        let distinct = self.z.first().zip(self.z.last()).is_some_and(|(a, b)| a != b);
        if self.len() < min || (min > 1 && !distinct) {
            return Err(Error::InsufficientSupport {
                side: self.side,
                detail: format!(
                    "{} positively weighted observations{}; at least {min} with distinct z are needed",
                    self.len(),
                    if distinct || self.len() < 2 { "" } else { " all at the same z" }
                ),
            });
        }
        Ok(())
    }
}

/// JSON record written for every estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub estimator: String,
    pub config: EstimatorConfig,
    pub coefficients: Value,
    pub tau_d: f64,
    pub tau_tot: Option<f64>,
    pub diagnostics: Value,
}

impl EstimateRecord {
    pub fn local_linear(name: &str, cfg: &EstimatorConfig, e: &RddEstimate) -> EstimateRecord {
        EstimateRecord {
            estimator: name.into(),
            config: *cfg,
            coefficients: json!({ "beta_plus": e.beta_plus, "beta_minus": e.beta_minus }),
            tau_d: e.tau_hat,
            tau_tot: None,
            diagnostics: json!({
                "n_plus": e.n_plus,
                "n_minus": e.n_minus,
                "min_side_support": e.min_side_support,
                "condition_plus": e.condition_plus,
                "condition_minus": e.condition_minus,
            }),
        }
    }

    pub fn nadaraya_watson(cfg: &EstimatorConfig, tau: f64) -> EstimateRecord {
        EstimateRecord {
            estimator: "nw".into(),
            config: *cfg,
            coefficients: json!({}),
            tau_d: tau,
            tau_tot: None,
            diagnostics: json!({}),
        }
    }

    pub fn spillover(cfg: &EstimatorConfig, e: &SpilloverEstimate) -> EstimateRecord {
        EstimateRecord {
            estimator: "spillover".into(),
            config: *cfg,
            coefficients: json!({
                "beta_plus": e.beta_plus,
                "beta_minus": e.beta_minus,
                "delta": e.delta_hat,
                "gamma": e.gamma_hat,
            }),
            tau_d: e.tau_d_hat,
            tau_tot: e.tau_tot_hat,
            diagnostics: json!({
                "condition_plus": e.condition_plus,
                "condition_minus": e.condition_minus,
                "mu_hat_at_0": e.mu_hat_at_0,
                "n_plus": e.n_plus,
                "n_minus": e.n_minus,
                "tau_tot_defined": e.tau_tot_hat.is_some(),
            }),
        }
    }
}
