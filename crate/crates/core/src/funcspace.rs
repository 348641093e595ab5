//! Parametric function families for the structural functions of the model.
//!
//! Every function lives on `[-1, 1]` and carries a closed-form Lipschitz
//! bound, so contraction factors and regularity constants can be checked
//! rather than assumed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Points used when a property has to be verified by sweeping the domain.
const CHECK_GRID: usize = 20_001;

/// Margin below one that `sup |delta|` must respect.
pub const DELTA_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `coefficients = [c]`.
    Constant,
    /// `coefficients = [c0, c1, ...]`, `f(z) = sum c_k z^k`.
    Polynomial,
    /// `coefficients = [A1, w1, p1, A2, w2, p2, ...]`, `f(z) = sum A_j sin(w_j z + p_j)`.
    SinusoidSum,
}

/// Optional restriction of a function to one half of the domain.
///
/// `Nonpositive` gives `f(z) * 1{z <= 0}`, which is how one-sided exogenous
/// spillovers are written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    #[default]
    Full,
    Nonpositive,
    Nonnegative,
}

impl Support {
    fn is_full(&self) -> bool {
        *self == Support::Full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFuncSpec {
    family: Family,
    coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Support::is_full")]
    support: Support,
}

/// A validated function on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFuncSpec", into = "RawFuncSpec")]
pub struct FuncSpec {
    family: Family,
    coefficients: Vec<f64>,
    support: Support,
}

impl TryFrom<RawFuncSpec> for FuncSpec {
    type Error = Error;

    fn try_from(raw: RawFuncSpec) -> Result<Self> {
        FuncSpec::new(raw.family, raw.coefficients).map(|f| f.with_support(raw.support))
    }
}

impl From<FuncSpec> for RawFuncSpec {
    fn from(f: FuncSpec) -> Self {
        RawFuncSpec { family: f.family, coefficients: f.coefficients, support: f.support }
    }
}

impl FuncSpec {
    pub fn new(family: Family, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("function coefficients must be finite".into()));
        }
        match family {
            Family::Constant if coefficients.len() != 1 => {
                return Err(Error::Config(format!(
                    "constant family takes exactly one coefficient, got {}",
                    coefficients.len()
                )));
            }
            Family::Polynomial if coefficients.is_empty() => {
                return Err(Error::Config("polynomial family needs at least one coefficient".into()));
            }
            Family::SinusoidSum if !coefficients.len().is_multiple_of(3) => {
                return Err(Error::Config(format!(
                    "sinusoid-sum coefficients come in (amplitude, frequency, phase) triples, got {}",
                    coefficients.len()
                )));
            }
            _ => {}
        }
        Ok(FuncSpec { family, coefficients, support: Support::Full })
    }

    pub fn constant(c: f64) -> Self {
        FuncSpec::new(Family::Constant, vec![c]).expect("finite constant")
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Result<Self> {
        FuncSpec::new(Family::Polynomial, coefficients)
    }

    /// `sum A_j sin(w_j z + p_j)` from `(A, w, p)` triples.
    pub fn sinusoid_sum(terms: &[(f64, f64, f64)]) -> Result<Self> {
        let coefficients = terms.iter().flat_map(|&(a, w, p)| [a, w, p]).collect();
        FuncSpec::new(Family::SinusoidSum, coefficients)
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn support(&self) -> Support {
        self.support
    }

    /// Evaluates at `z`, rejecting points outside `[-1, 1]`.
    pub fn eval(&self, z: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&z) {
            return Err(Error::Domain(format!("z = {z} lies outside [-1, 1]")));
        }
        Ok(self.value(z))
    }

    /// Evaluation without the domain check. Used on grids known to be in range.
    pub fn value(&self, z: f64) -> f64 {
        match self.support {
            Support::Nonpositive if z > 0.0 => return 0.0,
            Support::Nonnegative if z < 0.0 => return 0.0,
            _ => {}
        }
        self.unrestricted(z)
    }

    fn unrestricted(&self, z: f64) -> f64 {
        let c = &self.coefficients;
        match self.family {
            Family::Constant => c[0],
            Family::Polynomial => c.iter().rev().fold(0.0, |acc, &ck| acc * z + ck),
            Family::SinusoidSum => {
                c.chunks_exact(3).map(|t| t[0] * (t[1] * z + t[2]).sin()).sum()
            }
        }
    }

    /// Closed-form Lipschitz bound on `[-1, 1]`.
    ///
    /// A one-sided function that does not vanish at the cut point is
    /// discontinuous, and the bound is `+inf`.
    pub fn lipschitz_constant(&self) -> f64 {
        if !self.support.is_full() && self.unrestricted(0.0) != 0.0 {
            return f64::INFINITY;
        }
        let c = &self.coefficients;
        match self.family {
            Family::Constant => 0.0,
            Family::Polynomial => {
                c.iter().enumerate().skip(1).map(|(k, ck)| k as f64 * ck.abs()).sum()
            }
            Family::SinusoidSum => c.chunks_exact(3).map(|t| (t[0] * t[1]).abs()).sum(),
        }
    }

    /// Sup of `|f|` over `[-1, 1]`, estimated on a fine grid and then widened
    /// by the Lipschitz bound over half a grid step.
    pub fn sup_abs_certified(&self) -> f64 {
        let step = 2.0 / (CHECK_GRID - 1) as f64;
        let grid_sup = check_grid().map(|z| self.value(z).abs()).fold(0.0, f64::max);
        let lip = self.lipschitz_constant();
        if lip.is_finite() {
            grid_sup + 0.5 * step * lip
        } else {
            grid_sup
        }
    }
}

fn check_grid() -> impl Iterator<Item = f64> {
    let step = 2.0 / (CHECK_GRID - 1) as f64;
    (0..CHECK_GRID).map(move |k| (-1.0 + k as f64 * step).clamp(-1.0, 1.0))
}

/// Regularity constants reported for a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    /// `max(Lip(m+), Lip(m-))`
    pub c: f64,
    pub c_delta: f64,
    pub c_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    m_plus: FuncSpec,
    m_minus: FuncSpec,
    delta: FuncSpec,
    gamma: FuncSpec,
    noise_sd: FuncSpec,
}

/// The structural functions of the outcome model plus derived constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    pub m_plus: FuncSpec,
    pub m_minus: FuncSpec,
    pub delta: FuncSpec,
    pub gamma: FuncSpec,
    pub noise_sd: FuncSpec,
    delta_bar: f64,
    sigma_bar_sq: f64,
    lipschitz: LipschitzConstants,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawModelSpec) -> Result<Self> {
        ModelSpec::new(raw.m_plus, raw.m_minus, raw.delta, raw.gamma, raw.noise_sd)
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(m: ModelSpec) -> Self {
        RawModelSpec {
            m_plus: m.m_plus,
            m_minus: m.m_minus,
            delta: m.delta,
            gamma: m.gamma,
            noise_sd: m.noise_sd,
        }
    }
}

impl ModelSpec {
    pub fn new(
        m_plus: FuncSpec,
        m_minus: FuncSpec,
        delta: FuncSpec,
        gamma: FuncSpec,
        noise_sd: FuncSpec,
    ) -> Result<Self> {
        let mut d_max = f64::NEG_INFINITY;
        let mut d_min = f64::INFINITY;
        let mut s_max = 0.0f64;
        for z in check_grid() {
            let d = delta.value(z);
            d_max = d_max.max(d);
            d_min = d_min.min(d);
            let s = noise_sd.value(z);
            if s < 0.0 {
                return Err(Error::Config(format!("noise_sd is negative at z = {z}")));
            }
            s_max = s_max.max(s);
        }
        let grid_sup = d_max.abs().max(d_min.abs());
        if grid_sup > 1.0 - DELTA_MARGIN {
            return Err(Error::Config(format!(
                "sup |delta| = {grid_sup} exceeds 1 - {DELTA_MARGIN:e}"
            )));
        }
        let delta_bar = delta.sup_abs_certified();
        if !(delta_bar < 1.0) {
            return Err(Error::Config(format!(
                "certified bound on sup |delta| is {delta_bar}, which is not below 1"
            )));
        }
        if d_max - d_min > delta_bar {
            return Err(Error::Config(format!(
                "oscillation of delta ({}) exceeds its sup bound {delta_bar}",
                d_max - d_min
            )));
        }
        let lipschitz = LipschitzConstants {
            c: m_plus.lipschitz_constant().max(m_minus.lipschitz_constant()),
            c_delta: delta.lipschitz_constant(),
            c_gamma: gamma.lipschitz_constant(),
        };
        Ok(ModelSpec {
            m_plus,
            m_minus,
            delta,
            gamma,
            noise_sd,
            delta_bar,
            sigma_bar_sq: s_max * s_max,
            lipschitz,
        })
    }

    /// Certified upper bound on `sup |delta|`, strictly below one.
    pub fn delta_bar(&self) -> f64 {
        self.delta_bar
    }

    /// Grid estimate of `sup sigma^2`.
    pub fn sigma_bar_sq(&self) -> f64 {
        self.sigma_bar_sq
    }

    pub fn lipschitz(&self) -> LipschitzConstants {
        self.lipschitz
    }

    /// `m+(0) - m-(0)`.
    pub fn tau_d(&self) -> f64 {
        self.m_plus.value(0.0) - self.m_minus.value(0.0)
    }

    pub fn delta0(&self) -> f64 {
        self.delta.value(0.0)
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma.value(0.0)
    }

    /// True when `delta` is identically zero (checked on the sweep grid).
    pub fn has_no_endogenous_spillover(&self) -> bool {
        check_grid().all(|z| self.delta.value(z) == 0.0)
    }

    /// True when `gamma` is identically zero (checked on the sweep grid).
    pub fn has_no_exogenous_spillover(&self) -> bool {
        check_grid().all(|z| self.gamma.value(z) == 0.0)
    }

    /// Hex SHA-256 of the canonical JSON form. Used as a cache and provenance key.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// The model used throughout the examples and acceptance checks:
    /// `m+ = 1 + 0.3z`, `m- = 0.2z`, `delta = 0.4`, `gamma = 0.5`, `sigma = 0.05`.
    pub fn benchmark() -> ModelSpec {
        ModelSpec::new(
            FuncSpec::polynomial(vec![1.0, 0.3]).unwrap(),
            FuncSpec::polynomial(vec![0.0, 0.2]).unwrap(),
            FuncSpec::constant(0.4),
            FuncSpec::constant(0.5),
            FuncSpec::constant(0.05),
        )
        .expect("benchmark model is valid")
    }
}
