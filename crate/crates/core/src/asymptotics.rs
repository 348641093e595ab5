//! Limit objects for the regime where the spillover radius and the
//! bandwidth shrink at the same rate (`r = c h / 2`).
//!
//! Near the cutoff, rescaled to `a = z / r`, the outcome converges to
//! `const + tau_d * lambda(a) + gamma0 * (M lambda)(a)`, where `M` is the
//! unit-radius window mean and `lambda = (I - delta0 M)^{-1} 1{a >= 0}`.
//! The local linear estimator applied to that profile converges to `tau_star`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::quad::integrate;
use crate::window::{assemble_operator, Grid, Outside, Profile};

pub const DEFAULT_TRUNCATION: f64 = 12.0;
/// Grid spacing of the default table; divides 1 so the kinks of `lambda` at
/// the integers fall on nodes.
pub const DEFAULT_SPACING: f64 = 0.005;
pub const TAIL_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_PANELS: usize = 48;

/// `lambda(a)` tabulated on `[-A, A]` and extended by its limits outside.
#[derive(Debug, Clone)]
pub struct LambdaTable {
    pub delta0: f64,
    pub truncation_a: f64,
    pub residual: f64,
    /// False when the solved table decreases somewhere. Only informational.
    pub monotone: bool,
    profile: Profile,
}

impl LambdaTable {
    pub fn grid(&self) -> &Grid {
        self.profile.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.profile.values()
    }

    /// `1 / (1 - delta0)`, the right limit.
    pub fn upper_limit(&self) -> f64 {
        1.0 / (1.0 - self.delta0)
    }

    fn outside(&self) -> Outside {
        Outside::Pad { left: 0.0, right: self.upper_limit() }
    }

    pub fn value(&self, a: f64) -> f64 {
        if a < -self.truncation_a {
            0.0
        } else if a > self.truncation_a {
            self.upper_limit()
        } else {
            self.profile.value_at(a)
        }
    }

    /// Mean of `lambda` over `[lo, hi]`; a degenerate interval evaluates at the point.
    pub fn mean(&self, lo: f64, hi: f64) -> f64 {
        if hi - lo <= 1e-13 {
            self.value(lo)
        } else {
            self.profile.interval_mean(lo, hi, self.outside())
        }
    }

    /// Mean of `lambda(a) - 1{a >= 0}` over `[lo, hi]`.
    pub fn mean_tilde(&self, lo: f64, hi: f64) -> f64 {
        if hi - lo <= 1e-13 {
            let ind = if lo >= 0.0 { 1.0 } else { 0.0 };
            self.value(lo) - ind
        } else {
            let treated = (hi - lo.max(0.0)).max(0.0) / (hi - lo);
            self.mean(lo, hi) - treated
        }
    }

    /// Bound on the truncation error at `|a|`.
    pub fn tail_bound(&self, a_abs: f64) -> f64 {
        let d = self.delta0.abs();
        if d == 0.0 {
            return 0.0;
        }
        d.powf(self.truncation_a - a_abs) / (1.0 - d)
    }

    /// True when the truncation error is below tolerance up to `|a| = a_abs`.
    pub fn covers(&self, a_abs: f64) -> bool {
        a_abs <= self.truncation_a && self.tail_bound(a_abs) < TAIL_TOLERANCE
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "a,lambda")?;
        let g = self.grid();
        for (k, v) in self.values().iter().enumerate() {
            writeln!(w, "{},{}", g.node(k), v)?;
        }
        Ok(())
    }
}

pub fn build_lambda_table(delta0: f64, truncation_a: f64, grid_n: usize) -> Result<LambdaTable> {
    if !(delta0.abs() < 1.0) {
        return Err(Error::Domain(format!("|delta0| must be below 1, got {delta0}")));
    }
    if !(truncation_a >= 8.0) {
        return Err(Error::Config(format!("truncation A must be at least 8, got {truncation_a}")));
    }
    if grid_n < 1601 {
        return Err(Error::Config(format!("lambda grid needs at least 1601 points, got {grid_n}")));
    }
    let grid = Grid::symmetric(truncation_a, grid_n)?;
    let indicator: Vec<f64> =
        grid.nodes().iter().map(|&a| if a >= 0.0 { 1.0 } else { 0.0 }).collect();
    let outside = Outside::Pad { left: 0.0, right: 1.0 / (1.0 - delta0) };
    let values = if delta0 == 0.0 {
        indicator.clone()
    } else {
        let scale = vec![delta0; grid.len()];
        let (m, correction) = assemble_operator(&grid, 1.0, outside, &scale, 1.0);
        let rhs: Vec<f64> = indicator.iter().zip(&correction).map(|(a, b)| a + b).collect();
        m.solve(&rhs)?
    };
    let profile = Profile::new(&grid, &values, 1.0);
    let residual = (0..grid.len())
        .map(|k| {
            let mean = profile.window_mean(grid.node(k), 1.0, outside);
            (values[k] - indicator[k] - delta0 * mean).abs()
        })
        .fold(0.0, f64::max);
    if !(residual <= 1e-8) {
        return Err(Error::Numeric(format!("lambda table residual {residual:.3e} exceeds 1e-8")));
    }
    let monotone = values.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    Ok(LambdaTable { delta0, truncation_a, residual, monotone, profile })
}

/// Table for `delta0` that covers every point used when `2r/h = c`, starting
/// from `A = 12` and doubling `A` until the tail bound is below tolerance.
pub fn lambda_table_for(delta0: f64, c: f64) -> Result<LambdaTable> {
    check_c(c)?;
    let mut a = DEFAULT_TRUNCATION;
    while !covers(delta0, a, reach(c)) {
        a *= 2.0;
    }
    build_lambda_table(delta0, a, grid_n_for(a))
}

fn grid_n_for(a: f64) -> usize {
    (2.0 * a / DEFAULT_SPACING).round() as usize + 1
}

fn covers(delta0: f64, a: f64, a_abs: f64) -> bool {
    let d = delta0.abs();
    a_abs <= a && (d == 0.0 || d.powf(a - a_abs) / (1.0 - d) < TAIL_TOLERANCE)
}

/// Largest `|a|` touched by the windows when `x` ranges over `[-1, 1]`.
fn reach(c: f64) -> f64 {
    1.0 + 2.0 / c
}

fn check_c(c: f64) -> Result<()> {
    if c > 0.0 && c < 2.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("c = 2r/h must lie in (0, 2), got {c}")))
    }
}

/// Neighbourhood averages of `lambda` at rescaled distance `x` from the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPm {
    pub lam_plus: f64,
    pub lam_minus: f64,
    pub lam_tilde_plus: f64,
    pub lam_tilde_minus: f64,
}

/// Averages of `lambda` (and of `lambda - 1{a >= 0}`) over the part of the
/// window gained, `[max(1, 2x/c - 1), 1 + 2x/c]`, and the part lost,
/// `[-1, min(1, 2x/c - 1)]`, when the window centre moves from 0 to `x`.
pub fn lambda_pm(x: f64, c: f64, table: &LambdaTable) -> Result<LambdaPm> {
    check_c(c)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} must lie in [0, 1]")));
    }
    let ((g0, g1), (l0, l1)) = moved_windows(2.0 * x / c);
    Ok(LambdaPm {
        lam_plus: table.mean(g0, g1),
        lam_minus: table.mean(l0, l1),
        lam_tilde_plus: table.mean_tilde(g0, g1),
        lam_tilde_minus: table.mean_tilde(l0, l1),
    })
}

/// Gained and lost parts of `[s - 1, s + 1]` relative to `[-1, 1]`.
fn moved_windows(s: f64) -> ((f64, f64), (f64, f64)) {
    if s >= 0.0 {
        (((s - 1.0).max(1.0), s + 1.0), (-1.0, (s - 1.0).min(1.0)))
    } else {
        ((s - 1.0, (s + 1.0).min(-1.0)), ((s + 1.0).max(-1.0), 1.0))
    }
}

/// The three pieces of the limiting change in the spillover terms between 0
/// and `x` (signed, in bandwidth units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileTerms {
    /// Change in the window mean of `lambda`.
    pub d_lambda: f64,
    /// Change in the window mean of `lambda - 1{a >= 0}`.
    pub d_lambda_tilde: f64,
    /// Change in the treated share, `clamp(x / c, -1/2, 1/2)`.
    pub d_nu: f64,
}

pub fn profile_terms(x: f64, c: f64, table: &LambdaTable) -> ProfileTerms {
    let s = 2.0 * x / c;
    let w = (x.abs() / c).min(1.0);
    let ((g0, g1), (l0, l1)) = moved_windows(s);
    ProfileTerms {
        d_lambda: w * (table.mean(g0, g1) - table.mean(l0, l1)),
        d_lambda_tilde: w * (table.mean_tilde(g0, g1) - table.mean_tilde(l0, l1)),
        d_nu: (x / c).clamp(-0.5, 0.5),
    }
}

type Key3 = (u32, u32, u32);
type Key4 = (u32, u32, u32, u32);

/// Incomplete kernel moments entering the limit of the estimator.
///
/// One-sided integrals run over `[0, 1]` for the plus side and over
/// `[-1, 0]` (with signed `x^p`) for the minus side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub kernel: Kernel,
    pub c: f64,
    /// `(p, s) -> int_0^1 x^p K^s`
    pub gamma_ps: BTreeMap<(u32, u32), f64>,
    /// `(p, q, s) -> int x^p d_lambda^q K^s`
    pub lambda_plus: BTreeMap<Key3, f64>,
    pub lambda_minus: BTreeMap<Key3, f64>,
    /// `(p, q, s) -> int x^p d_lambda_tilde^q K^s`
    pub lambda_tilde_plus: BTreeMap<Key3, f64>,
    pub lambda_tilde_minus: BTreeMap<Key3, f64>,
    /// `(p, q, s) -> int x^p d_nu^q K^s`
    pub gamma_plus: BTreeMap<Key3, f64>,
    pub gamma_minus: BTreeMap<Key3, f64>,
    /// `(p, q, r, s) -> int_0^1 x^p d_lambda^q d_nu^r K^s`
    pub phi: BTreeMap<Key4, f64>,
}

impl MomentSet {
    pub fn compute(kernel: Kernel, c: f64, table: &LambdaTable, panels: usize) -> Result<MomentSet> {
        check_c(c)?;
        if !table.covers(reach(c)) {
            return Err(Error::Config(format!(
                "lambda table truncated at A = {} does not cover |a| = {}",
                table.truncation_a,
                reach(c)
            )));
        }
        let breaks: Vec<f64> = (1..)
            .map(|k| k as f64 * c / 2.0)
            .take_while(|&b| b < 1.0)
            .flat_map(|b| [b, -b])
            .chain([0.0])
            .collect();
        let side_integral = |plus: bool, p: u32, s: u32, f: &dyn Fn(f64) -> f64| {
            let (a, b) = if plus { (0.0, 1.0) } else { (-1.0, 0.0) };
            integrate(|x| x.powi(p as i32) * f(x) * kernel.weight(x).powi(s as i32), a, b, &breaks, panels)
        };

        let mut gamma_ps = BTreeMap::new();
        for p in 0..=4 {
            for s in 1..=2 {
                gamma_ps.insert((p, s), side_integral(true, p, s, &|_| 1.0));
            }
        }
        let mut ms = MomentSet {
            kernel,
            c,
            gamma_ps,
            lambda_plus: BTreeMap::new(),
            lambda_minus: BTreeMap::new(),
            lambda_tilde_plus: BTreeMap::new(),
            lambda_tilde_minus: BTreeMap::new(),
            gamma_plus: BTreeMap::new(),
            gamma_minus: BTreeMap::new(),
            phi: BTreeMap::new(),
        };
        let terms = |x: f64| profile_terms(x, c, table);
        for p in 0..=2 {
            for q in 1..=2 {
                for s in 1..=2 {
                    let key = (p, q, s);
                    let qi = q as i32;
                    let fl = |x: f64| terms(x).d_lambda.powi(qi);
                    let ft = |x: f64| terms(x).d_lambda_tilde.powi(qi);
                    let fn_ = |x: f64| terms(x).d_nu.powi(qi);
                    ms.lambda_plus.insert(key, side_integral(true, p, s, &fl));
                    ms.lambda_minus.insert(key, side_integral(false, p, s, &fl));
                    ms.lambda_tilde_plus.insert(key, side_integral(true, p, s, &ft));
                    ms.lambda_tilde_minus.insert(key, side_integral(false, p, s, &ft));
                    ms.gamma_plus.insert(key, side_integral(true, p, s, &fn_));
                    ms.gamma_minus.insert(key, side_integral(false, p, s, &fn_));
                }
            }
        }
        for p in 0..=2 {
            for q in 0..=2 {
                for r in 0..=2 {
                    for s in 1..=2 {
                        let f = |x: f64| {
                            let t = terms(x);
                            t.d_lambda.powi(q as i32) * t.d_nu.powi(r as i32)
                        };
                        ms.phi.insert((p, q, r, s), side_integral(true, p, s, &f));
                    }
                }
            }
        }
        Ok(ms)
    }

    pub fn gamma(&self, p: u32, s: u32) -> f64 {
        self.gamma_ps[&(p, s)]
    }

    /// Long-format CSV: `name,p,q,r,s,value`; unused indices are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "name,p,q,r,s,value")?;
        for ((p, s), v) in &self.gamma_ps {
            writeln!(w, "gamma,{p},,,{s},{v}")?;
        }
        let maps = [
            ("lambda_plus", &self.lambda_plus),
            ("lambda_minus", &self.lambda_minus),
            ("lambda_tilde_plus", &self.lambda_tilde_plus),
            ("lambda_tilde_minus", &self.lambda_tilde_minus),
            ("gamma_plus", &self.gamma_plus),
            ("gamma_minus", &self.gamma_minus),
        ];
        for (name, map) in maps {
            for ((p, q, s), v) in map {
                writeln!(w, "{name},{p},{q},,{s},{v}")?;
            }
        }
        for ((p, q, r, s), v) in &self.phi {
            writeln!(w, "phi,{p},{q},{r},{s},{v}")?;
        }
        Ok(())
    }
}

/// Structural values at the cutoff that `tau_star` depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffValues {
    pub tau_d: f64,
    pub delta0: f64,
    pub gamma0: f64,
}

impl CutoffValues {
    pub fn of(model: &crate::funcspace::ModelSpec) -> CutoffValues {
        CutoffValues { tau_d: model.tau_d(), delta0: model.delta0(), gamma0: model.gamma0() }
    }
}

/// Limit of the local linear estimator when `2r/h -> c`.
pub fn tau_star(at0: CutoffValues, c: f64, kernel: Kernel, table: &LambdaTable) -> Result<f64> {
    check_c(c)?;
    if table.delta0 != at0.delta0 {
        return Err(Error::Config(format!(
            "lambda table built for delta0 = {} but the model has delta0 = {}",
            table.delta0, at0.delta0
        )));
    }
    let wider;
    let table = if table.covers(reach(c)) {
        table
    } else {
        let mut a = table.truncation_a;
        while !covers(at0.delta0, a, reach(c)) {
            a *= 2.0;
        }
        let spacing = table.grid().step();
        wider = build_lambda_table(at0.delta0, a, (2.0 * a / spacing).round() as usize + 1)?;
        &wider
    };
    let ms = MomentSet::compute(kernel, c, table, DEFAULT_PANELS)?;
    tau_star_from_moments(at0, &ms)
}

pub fn tau_star_from_moments(at0: CutoffValues, ms: &MomentSet) -> Result<f64> {
    let (g0, g1, g2) = (ms.gamma(0, 1), ms.gamma(1, 1), ms.gamma(2, 1));
    let det = g2 * g0 - g1 * g1;
    if !(det.abs() > 1e-14) {
        return Err(Error::Numeric(format!("degenerate kernel moments (determinant {det:e})")));
    }
    let f = |lam: &BTreeMap<Key3, f64>, tilde: &BTreeMap<Key3, f64>, nu: &BTreeMap<Key3, f64>, p: u32| {
        at0.delta0 * at0.tau_d * lam[&(p, 1, 1)]
            + at0.gamma0 * tilde[&(p, 1, 1)]
            + at0.gamma0 * nu[&(p, 1, 1)]
    };
    let fp0 = f(&ms.lambda_plus, &ms.lambda_tilde_plus, &ms.gamma_plus, 0);
    let fp1 = f(&ms.lambda_plus, &ms.lambda_tilde_plus, &ms.gamma_plus, 1);
    let fm0 = f(&ms.lambda_minus, &ms.lambda_tilde_minus, &ms.gamma_minus, 0);
    let fm1 = f(&ms.lambda_minus, &ms.lambda_tilde_minus, &ms.gamma_minus, 1);
    // local linear intercepts; on [-1, 0] the odd moment changes sign
    let int_plus = (g2 * fp0 - g1 * fp1) / det;
    let int_minus = (g2 * fm0 + g1 * fm1) / det;
    Ok(at0.tau_d + int_plus - int_minus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorollaryCase {
    OrderedCase1,
    OrderedCase2,
    Violated,
    PreconditionsUnmet,
}

/// Checks the sign/magnitude ordering of `(tau_d, tau_star, tau_tot)`.
///
/// With `sgn(gamma0) = sgn(tau_d) != 0`: for `delta0 > 0` the expected chain is
/// `0 < tau_d < tau_star < tau_tot` (or its mirror below zero); for
/// `delta0 < 0` it is `0 < tau_tot < tau_star < tau_d` (or its mirror).
pub fn corollary_bounds_check(
    tau_d: f64,
    tau_star: f64,
    tau_tot: f64,
    delta0: f64,
    gamma0: f64,
) -> CorollaryCase {
    let sgn = |v: f64| if v > 0.0 { 1 } else if v < 0.0 { -1 } else { 0 };
    if sgn(tau_d) == 0 || sgn(gamma0) != sgn(tau_d) || delta0 == 0.0 {
        return CorollaryCase::PreconditionsUnmet;
    }
    let chain = |a: f64, b: f64, c: f64| (0.0 < a && a < b && b < c) || (c < b && b < a && a < 0.0);
    if delta0 > 0.0 {
        if chain(tau_d, tau_star, tau_tot) {
            CorollaryCase::OrderedCase1
        } else {
            CorollaryCase::Violated
        }
    } else if chain(tau_tot, tau_star, tau_d) {
        CorollaryCase::OrderedCase2
    } else {
        CorollaryCase::Violated
    }
}
