//! Finite-bandwidth population limits of the RDD estimators.
//!
//! With `Z ~ U[-1, 1]` the sample normal equations converge to kernel
//! integrals of the solved outcome curve. These give exact targets for a
//! given `(r, h)` and are used to predict Monte Carlo means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::population::PopulationSolution;
use crate::quad::integrate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationRdd {
    pub intercept_plus: f64,
    pub slope_plus: f64,
    pub intercept_minus: f64,
    pub slope_minus: f64,
    pub tau: f64,
}

fn check_bandwidths(h: f64, h_donut: f64) -> Result<()> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Config(format!("bandwidth must lie in (0, 1], got {h}")));
    }
    if !(h_donut >= 0.0 && h_donut < h) {
        return Err(Error::Config(format!("donut radius must lie in [0, h), got {h_donut}")));
    }
    Ok(())
}

fn breaks(sol: &PopulationSolution, a: f64, b: f64) -> Vec<f64> {
    sol.z().into_iter().filter(|&x| x > a && x < b).collect()
}

/// Weighted moments `(s0, s1, s2, t0, t1)` of the outcome over `[a, b]`,
/// with `z` measured in units of `h`.
fn moments(sol: &PopulationSolution, kernel: Kernel, h: f64, a: f64, b: f64) -> [f64; 5] {
    let br = breaks(sol, a, b);
    let m = |f: &dyn Fn(f64) -> f64| integrate(|z| kernel.weight(z / h) * f(z), a, b, &br, 1);
    [
        m(&|_| 1.0),
        m(&|z| z / h),
        m(&|z| (z / h) * (z / h)),
        m(&|z| sol.y_at(z)),
        m(&|z| z / h * sol.y_at(z)),
    ]
}

fn line_fit(mo: [f64; 5], h: f64) -> (f64, f64) {
    let [s0, s1, s2, t0, t1] = mo;
    let det = s0 * s2 - s1 * s1;
    ((s2 * t0 - s1 * t1) / det, (s0 * t1 - s1 * t0) / det / h)
}

/// Probability limit of the local linear (or donut) estimator at bandwidth
/// `h`, using only `|z| >= h_donut`.
pub fn population_local_linear(
    sol: &PopulationSolution,
    kernel: Kernel,
    h: f64,
    h_donut: f64,
) -> Result<PopulationRdd> {
    check_bandwidths(h, h_donut)?;
    let (ip, sp) = line_fit(moments(sol, kernel, h, h_donut, h), h);
    let (im, sm) = line_fit(moments(sol, kernel, h, -h, -h_donut), h);
    Ok(PopulationRdd { intercept_plus: ip, slope_plus: sp, intercept_minus: im, slope_minus: sm, tau: ip - im })
}

/// Probability limit of the Nadaraya-Watson difference of kernel means.
pub fn population_nadaraya_watson(sol: &PopulationSolution, kernel: Kernel, h: f64) -> Result<f64> {
    check_bandwidths(h, 0.0)?;
    let p = moments(sol, kernel, h, 0.0, h);
    let m = moments(sol, kernel, h, -h, 0.0);
    Ok(p[3] / p[0] - m[3] / m[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::{lambda_table_for, tau_star, CutoffValues};
    use crate::funcspace::{FuncSpec, ModelSpec};
    use crate::population::{solve_population, SolveMethod, TreatmentRegime};

    fn solve(m: &ModelSpec, r: f64, grid_n: usize) -> PopulationSolution {
        solve_population(m, r, TreatmentRegime::Cutoff, grid_n, SolveMethod::Neumann).unwrap()
    }

    #[test]
    fn linear_outcome_recovered_exactly() {
        let m = ModelSpec::new(
            FuncSpec::polynomial(vec![1.0, 0.3]).unwrap(),
            FuncSpec::polynomial(vec![0.0, 0.2]).unwrap(),
            FuncSpec::constant(0.0),
            FuncSpec::constant(0.0),
            FuncSpec::constant(0.0),
        )
        .unwrap();
        let sol = solve(&m, 0.1, 2001);
        for k in [Kernel::Triangular, Kernel::Epanechnikov, Kernel::Uniform] {
            let ll = population_local_linear(&sol, k, 0.2, 0.0).unwrap();
            assert!((ll.tau - 1.0).abs() < 1e-12);
            assert!((ll.slope_plus - 0.3).abs() < 1e-10);
            let donut = population_local_linear(&sol, k, 0.2, 0.05).unwrap();
            assert!((donut.tau - 1.0).abs() < 1e-12);
            // NW picks up the slopes: (0.3 + 0.2) * E[|z| | K]
            let nw = population_nadaraya_watson(&sol, k, 0.2).unwrap();
            let mean_abs = 0.2 * k.moment(1, 1) / k.moment(0, 1);
            assert!((nw - (1.0 + 0.5 * mean_abs)).abs() < 1e-10, "{nw}");
        }
    }

    #[test]
    fn intermediate_regime_approaches_tau_star() {
        let m = ModelSpec::benchmark();
        let table = lambda_table_for(m.delta0(), 1.0).unwrap();
        let ts = tau_star(CutoffValues::of(&m), 1.0, Kernel::Triangular, &table).unwrap();
        let gap = |h: f64| {
            let sol = solve(&m, h / 2.0, 8001);
            (population_local_linear(&sol, Kernel::Triangular, h, 0.0).unwrap().tau - ts).abs()
        };
        // m is linear and delta, gamma constant, so only grid error remains
        for h in [0.2, 0.05] {
            assert!(gap(h) < 2e-3, "h = {h}: {}", gap(h));
        }
    }

    #[test]
    fn rejects_bad_bandwidths() {
        let sol = solve(&ModelSpec::benchmark(), 0.1, 801);
        assert!(population_local_linear(&sol, Kernel::Triangular, 0.0, 0.0).is_err());
        assert!(population_local_linear(&sol, Kernel::Triangular, 0.2, 0.2).is_err());
    }
}
