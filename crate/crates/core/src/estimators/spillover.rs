use serde::{Deserialize, Serialize};

use super::wls::wls;
use super::{EstimatorConfig, SideRows};
use crate::error::{Error, Result, Side};
use crate::population::{nu_exact, TreatmentRegime};
use crate::sampling::Sample;

/// Condition number above which the spillover design is rejected.
pub const ILL_POSED_CONDITION: f64 = 1e10;

/// Sorted sample with prefix sums, for `O(log n)` neighbour means.
#[derive(Debug, Clone)]
pub struct NeighborMeans {
    z: Vec<f64>,
    cum: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuHat {
    pub value: f64,
    pub n_plus_neighbors: usize,
    pub n_minus_neighbors: usize,
}

impl NeighborMeans {
    pub fn new(sample: &Sample) -> NeighborMeans {
        let mut pairs: Vec<(f64, f64)> = sample.z.iter().copied().zip(sample.y.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut cum = Vec::with_capacity(pairs.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for p in &pairs {
            acc += p.1;
            cum.push(acc);
        }
        NeighborMeans { z: pairs.into_iter().map(|p| p.0).collect(), cum }
    }

    fn first_at_least(&self, v: f64) -> usize {
        self.z.partition_point(|&z| z < v)
    }

    fn first_above(&self, v: f64) -> usize {
        self.z.partition_point(|&z| z <= v)
    }

    /// Neighbour mean at `z`. `own` is the `(z_i, y_i)` of an observation
    /// to leave out when evaluating at a sample point.
    pub fn at(&self, r: f64, z: f64, own: Option<(f64, f64)>) -> MuHat {
        let w_plus = ((z + r) / (2.0 * r)).clamp(0.0, 1.0);
        // treated neighbours: max(0, z - r) <= z_j <= z + r
        let (p0, p1) = if z + r >= 0.0 {
            (self.first_at_least((z - r).max(0.0)), self.first_above(z + r))
        } else {
            (0, 0)
        };
        // control neighbours: z - r <= z_j <= min(z + r, 0), with z_j = 0 treated
        let m0 = self.first_at_least(z - r);
        let m1 = if z + r < 0.0 { self.first_above(z + r) } else { self.first_at_least(0.0) };
        let mut sp = self.cum[p1.max(p0)] - self.cum[p0];
        let mut np = p1.saturating_sub(p0);
        let mut sm = self.cum[m1.max(m0)] - self.cum[m0];
        let mut nm = m1.saturating_sub(m0);
        if let Some((zi, yi)) = own {
            if zi >= 0.0 {
                sp -= yi;
                np -= 1;
            } else {
                sm -= yi;
                nm -= 1;
            }
        }
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        MuHat {
            value: w_plus * mean(sp, np) + (1.0 - w_plus) * mean(sm, nm),
            n_plus_neighbors: np,
            n_minus_neighbors: nm,
        }
    }
}

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("neighbour radius must be positive, got {r}")))
    }
}

/// Neighbour-mean estimate of `mu_d` at an arbitrary point `z`; no
/// observation is excluded.
pub fn mu_hat(sample: &Sample, r: f64, z: f64) -> Result<MuHat> {
    check_r(r)?;
    Ok(NeighborMeans::new(sample).at(r, z, None))
}

/// Neighbour-mean estimate at observation `i`, leaving `Y_i` out.
pub fn mu_hat_at_observation(sample: &Sample, r: f64, i: usize) -> Result<MuHat> {
    check_r(r)?;
    let (zi, yi) = (sample.z[i], sample.y[i]);
    Ok(NeighborMeans::new(sample).at(r, zi, Some((zi, yi))))
}

/// The two estimated spillover regressors `mu_hat(Z_i) - mu_hat(0)` and
/// `nu(Z_i) - nu(0)`, aligned with the sample rows. Rows outside the
/// bandwidth carry 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpilloverColumns {
    pub mu_delta: Vec<f64>,
    pub nu_delta: Vec<f64>,
    pub mu_hat_at_0: f64,
}

pub fn spillover_columns(sample: &Sample, r: f64, h: f64) -> Result<SpilloverColumns> {
    check_r(r)?;
    let nm = NeighborMeans::new(sample);
    Ok(columns_from(&nm, sample, r, h))
}

pub(crate) fn columns_from(nm: &NeighborMeans, sample: &Sample, r: f64, h: f64) -> SpilloverColumns {
    let mu0 = nm.at(r, 0.0, None).value;
    let nu0 = nu_at(r, 0.0);
    let mut mu_delta = vec![0.0; sample.len()];
    let mut nu_delta = vec![0.0; sample.len()];
    for (i, (&z, &y)) in sample.z.iter().zip(&sample.y).enumerate() {
        if z.abs() < h {
            mu_delta[i] = nm.at(r, z, Some((z, y))).value - mu0;
            nu_delta[i] = nu_at(r, z) - nu0;
        }
    }
    SpilloverColumns { mu_delta, nu_delta, mu_hat_at_0: mu0 }
}

pub(crate) fn nu_at(r: f64, z: f64) -> f64 {
    nu_exact(TreatmentRegime::Cutoff, r.min(1.999_999), z).expect("radius and z validated")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpilloverEstimate {
    /// Coefficients on `(1, Z, dmu, Z dmu, dnu, Z dnu)`.
    pub beta_plus: [f64; 6],
    pub beta_minus: [f64; 6],
    pub tau_d_hat: f64,
    pub delta_hat: f64,
    pub gamma_hat: f64,
    /// `None` when `delta_hat` is within 1e-6 of 1.
    pub tau_tot_hat: Option<f64>,
    pub condition_plus: f64,
    pub condition_minus: f64,
    pub mu_hat_at_0: f64,
    pub n_plus: usize,
    pub n_minus: usize,
}

pub(crate) fn design(rows: &SideRows, cols: &SpilloverColumns) -> Vec<Vec<f64>> {
    let dmu: Vec<f64> = rows.index.iter().map(|&i| cols.mu_delta[i]).collect();
    let dnu: Vec<f64> = rows.index.iter().map(|&i| cols.nu_delta[i]).collect();
    let times = |v: &[f64]| rows.z.iter().zip(v).map(|(z, v)| z * v).collect::<Vec<f64>>();
    vec![vec![1.0; rows.len()], rows.z.clone(), dmu.clone(), times(&dmu), dnu.clone(), times(&dnu)]
}

pub(crate) fn fit_side(rows: &SideRows, cols: &SpilloverColumns) -> Result<([f64; 6], f64)> {
    rows.require(6)?;
    let x = design(rows, cols);
    let fit = wls(&x, &rows.y, &rows.w).map_err(|c| Error::IllPosed { side: rows.side, condition: c })?;
    if fit.condition > ILL_POSED_CONDITION {
        return Err(Error::IllPosed { side: rows.side, condition: fit.condition });
    }
    let mut b = [0.0; 6];
    b.copy_from_slice(&fit.coef);
    Ok((b, fit.condition))
}

pub(crate) fn check_ratio(cfg: &EstimatorConfig) -> Result<f64> {
    cfg.validate()?;
    let r = cfg.radius()?;
    let c = 2.0 * r / cfg.h;
    if c >= 2.0 {
        return Err(Error::Collinear { c });
    }
    Ok(r)
}

/// Local linear regression augmented with the estimated endogenous and the
/// exact exogenous spillover regressors, fitted separately on each side.
pub fn local_spillover_regression(sample: &Sample, cfg: &EstimatorConfig) -> Result<SpilloverEstimate> {
    let r = check_ratio(cfg)?;
    let cols = spillover_columns(sample, r, cfg.h)?;
    local_spillover_regression_with(sample, cfg, &cols)
}

/// As `local_spillover_regression`, with caller-supplied spillover columns.
pub fn local_spillover_regression_with(
    sample: &Sample,
    cfg: &EstimatorConfig,
    cols: &SpilloverColumns,
) -> Result<SpilloverEstimate> {
    check_ratio(cfg)?;
    if cols.mu_delta.len() != sample.len() || cols.nu_delta.len() != sample.len() {
        return Err(Error::Config("spillover columns must have one entry per observation".into()));
    }
    let plus = SideRows::collect(sample, cfg.kernel, cfg.h, 0.0, Side::Plus);
    let minus = SideRows::collect(sample, cfg.kernel, cfg.h, 0.0, Side::Minus);
    let (bp, cp) = fit_side(&plus, cols)?;
    let (bm, cm) = fit_side(&minus, cols)?;
    let tau_d_hat = bp[0] - bm[0];
    let delta_hat = cfg.pooling.pool(bp[2], bm[2]);
    let gamma_hat = cfg.pooling.pool(bp[4], bm[4]);
    let tau_tot_hat = ((1.0 - delta_hat).abs() > 1e-6).then(|| (tau_d_hat + gamma_hat) / (1.0 - delta_hat));
    Ok(SpilloverEstimate {
        beta_plus: bp,
        beta_minus: bm,
        tau_d_hat,
        delta_hat,
        gamma_hat,
        tau_tot_hat,
        condition_plus: cp,
        condition_minus: cm,
        mu_hat_at_0: cols.mu_hat_at_0,
        n_plus: plus.len(),
        n_minus: minus.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{local_linear_rdd, Pooling};
    use crate::funcspace::{FuncSpec, ModelSpec};
    use crate::kernel::Kernel;
    use crate::population::{solve_population, SolveMethod};
    use crate::sampling::draw_sample;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_sample(n: usize, seed: u64) -> Sample {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let y = z.iter().map(|&z: &f64| 2.0 * z + (3.0 * z).cos() + rng.random_range(-1.0..1.0)).collect();
        Sample::from_columns(z, y)
    }

    /// Direct O(n) evaluation of the neighbour mean.
    fn brute_force(s: &Sample, r: f64, z: f64, skip: Option<usize>) -> MuHat {
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for j in 0..s.len() {
            if Some(j) == skip {
                continue;
            }
            let zj = s.z[j];
            if zj >= 0.0 && zj >= (z - r).max(0.0) && zj <= z + r {
                sums[0] += s.y[j];
                counts[0] += 1;
            } else if zj < 0.0 && zj >= z - r && zj <= (z + r).min(0.0) {
                sums[1] += s.y[j];
                counts[1] += 1;
            }
        }
        let len_plus = ((z + r) - (z - r).max(0.0)).max(0.0);
        let wp = len_plus / (2.0 * r);
        let mean = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
        MuHat { value: wp * mean(0) + (1.0 - wp) * mean(1), n_plus_neighbors: counts[0], n_minus_neighbors: counts[1] }
    }

    #[test]
    fn fully_treated_window_is_plain_mean() {
        let s = Sample::from_columns(vec![0.5, 0.55, 0.6, 0.9, -0.2], vec![1.0, 2.0, 6.0, 100.0, 50.0]);
        let m = mu_hat(&s, 0.1, 0.55).unwrap();
        assert_eq!(m.value, 3.0);
        assert_eq!((m.n_plus_neighbors, m.n_minus_neighbors), (3, 0));
    }

    #[test]
    fn cutoff_window_weights_are_half() {
        let s = Sample::from_columns(vec![0.05, -0.05], vec![4.0, 2.0]);
        assert_eq!(mu_hat(&s, 0.1, 0.0).unwrap().value, 3.0);
    }

    #[test]
    fn empty_neighbourhoods_give_zero() {
        let s = Sample::from_columns(vec![0.9, -0.9], vec![4.0, 2.0]);
        assert_eq!(mu_hat(&s, 0.1, 0.0).unwrap().value, 0.0);
        let only = Sample::from_columns(vec![0.3], vec![4.0]);
        assert_eq!(mu_hat_at_observation(&only, 0.1, 0).unwrap().value, 0.0);
    }

    #[test]
    fn radius_must_be_positive() {
        assert!(mu_hat(&random_sample(10, 0), 0.0, 0.0).is_err());
    }

    #[test]
    fn collinear_and_missing_radius_rejected() {
        let s = random_sample(2000, 4);
        let cfg = EstimatorConfig::new(Kernel::Triangular, 0.2);
        assert!(matches!(local_spillover_regression(&s, &cfg), Err(Error::Config(_))));
        assert!(matches!(local_spillover_regression(&s, &cfg.with_r(0.2)), Err(Error::Collinear { .. })));
        assert!(matches!(local_spillover_regression(&s, &cfg.with_r(0.3)), Err(Error::Collinear { .. })));
    }

    #[test]
    fn zero_spillover_columns_nest_local_linear() {
        for seed in 0..20 {
            let s = random_sample(3000, 100 + seed);
            let cfg = EstimatorConfig::new(Kernel::Triangular, 0.25).with_r(0.1);
            let zeros = SpilloverColumns { mu_delta: vec![0.0; s.len()], nu_delta: vec![0.0; s.len()], mu_hat_at_0: 0.0 };
            let sp = local_spillover_regression_with(&s, &cfg, &zeros).unwrap();
            let ll = local_linear_rdd(&s, &cfg).unwrap();
            assert_eq!(&sp.beta_plus[..2], &ll.beta_plus[..]);
            assert_eq!(&sp.beta_minus[..2], &ll.beta_minus[..]);
            assert_eq!(sp.tau_d_hat, ll.tau_hat);
        }
    }

    #[test]
    fn tau_tot_identity_and_pooling() {
        let m = ModelSpec::benchmark();
        let sol = solve_population(&m, 0.05, TreatmentRegime::Cutoff, 2001, SolveMethod::Neumann).unwrap();
        let s = draw_sample(&sol, &m, 40_000, 9);
        let cfg = EstimatorConfig::new(Kernel::Triangular, 0.2).with_r(0.05);
        let e = local_spillover_regression(&s, &cfg).unwrap();
        assert_eq!(e.tau_d_hat, e.beta_plus[0] - e.beta_minus[0]);
        assert_eq!(e.tau_tot_hat.unwrap(), (e.tau_d_hat + e.gamma_hat) / (1.0 - e.delta_hat));
        assert_eq!(e.delta_hat, 0.5 * (e.beta_plus[2] + e.beta_minus[2]));
        let p = local_spillover_regression(&s, &cfg.with_pooling(Pooling::PlusOnly)).unwrap();
        assert_eq!(p.delta_hat, e.beta_plus[2]);
        assert_eq!(p.gamma_hat, e.beta_plus[4]);
    }

    #[test]
    fn noiseless_population_data_recovers_direct_effect() {
        let b = ModelSpec::benchmark();
        let m = ModelSpec::new(b.m_plus, b.m_minus, b.delta, b.gamma, FuncSpec::constant(0.0)).unwrap();
        let n = 100_000;
        let h = (n as f64).powf(-0.2);
        let r = h / 2.0;
        let sol = solve_population(&m, r, TreatmentRegime::Cutoff, 4001, SolveMethod::Neumann).unwrap();
        let s = draw_sample(&sol, &m, n, 5);
        let e = local_spillover_regression(&s, &EstimatorConfig::new(Kernel::Triangular, h).with_r(r)).unwrap();
        assert!((e.tau_d_hat - m.tau_d()).abs() < 5e-2, "{e:?}");
        assert!((e.delta_hat - m.delta0()).abs() < 1e-1, "{e:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_brute_force(seed in 0u64..10_000, r in 0.01f64..0.6, z in -1.0f64..1.0) {
            let s = random_sample(300, seed);
            prop_assert!((mu_hat(&s, r, z).unwrap().value - brute_force(&s, r, z, None).value).abs() < 1e-12);
            for i in [0usize, 17, 299] {
                let a = mu_hat_at_observation(&s, r, i).unwrap();
                let b = brute_force(&s, r, s.z[i], Some(i));
                prop_assert!((a.value - b.value).abs() < 1e-12);
                prop_assert_eq!((a.n_plus_neighbors, a.n_minus_neighbors), (b.n_plus_neighbors, b.n_minus_neighbors));
            }
        }

        #[test]
        fn own_outcome_never_enters(seed in 0u64..10_000, i in 0usize..200, bump in -1e3f64..1e3) {
            let s = random_sample(200, seed);
            let mut t = s.clone();
            t.y[i] += bump;
            let (a, b) = (mu_hat_at_observation(&s, 0.2, i).unwrap(), mu_hat_at_observation(&t, 0.2, i).unwrap());
            // prefix sums leave only rounding of the order eps * |bump|
            prop_assert!((a.value - b.value).abs() <= 1e-12 * (1.0 + bump.abs()));
            prop_assert_eq!((a.n_plus_neighbors, a.n_minus_neighbors), (b.n_plus_neighbors, b.n_minus_neighbors));
        }

        #[test]
        fn weights_sum_to_one(z in -1.0f64..1.0, r in 0.001f64..1.5) {
            // constant outcomes everywhere: value equals the constant iff w+ + w- = 1
            let zs: Vec<f64> = (0..=400).map(|k| -1.0 + k as f64 / 200.0).collect();
            let s = Sample::from_columns(zs, vec![1.0; 401]);
            let m = mu_hat(&s, r, z).unwrap();
            prop_assume!(m.n_plus_neighbors > 0 && m.n_minus_neighbors > 0);
            prop_assert!((m.value - 1.0).abs() < 1e-14);
        }

        #[test]
        fn spillover_regression_permutation_invariant(seed in 0u64..1000, shuffle in 0u64..1000) {
            let s = random_sample(3000, seed);
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.shuffle(&mut ChaCha20Rng::seed_from_u64(shuffle));
            let p = Sample::from_columns(idx.iter().map(|&i| s.z[i]).collect(), idx.iter().map(|&i| s.y[i]).collect());
            let cfg = EstimatorConfig::new(Kernel::Triangular, 0.3).with_r(0.12);
            let (a, b) = (local_spillover_regression(&s, &cfg), local_spillover_regression(&p, &cfg));
            prop_assert_eq!(a, b);
        }
    }
}
