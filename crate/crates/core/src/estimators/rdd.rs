use serde::{Deserialize, Serialize};

use super::wls::wls;
use super::{EstimatorConfig, SideRows, SINGULAR_CONDITION};
use crate::error::{Error, Result, Side};
use crate::sampling::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RddEstimate {
    /// `(intercept, slope)` on the treated side.
    pub beta_plus: [f64; 2],
    pub beta_minus: [f64; 2],
    pub tau_hat: f64,
    pub n_plus: usize,
    pub n_minus: usize,
    pub min_side_support: usize,
    pub condition_plus: f64,
    pub condition_minus: f64,
}

pub(crate) fn fit_line(rows: &SideRows) -> Result<([f64; 2], f64)> {
    rows.require(3)?;
    let cols = [vec![1.0; rows.len()], rows.z.clone()];
    let fit = wls(&cols, &rows.y, &rows.w).map_err(|c| Error::Singular { side: rows.side, condition: c })?;
    if fit.condition > SINGULAR_CONDITION {
        return Err(Error::Singular { side: rows.side, condition: fit.condition });
    }
    Ok(([fit.coef[0], fit.coef[1]], fit.condition))
}

fn local_linear_on(sample: &Sample, cfg: &EstimatorConfig, inner: f64) -> Result<RddEstimate> {
    cfg.validate()?;
    let plus = SideRows::collect(sample, cfg.kernel, cfg.h, inner, Side::Plus);
    let minus = SideRows::collect(sample, cfg.kernel, cfg.h, inner, Side::Minus);
    let (bp, cp) = fit_line(&plus)?;
    let (bm, cm) = fit_line(&minus)?;
    Ok(RddEstimate {
        beta_plus: bp,
        beta_minus: bm,
        tau_hat: bp[0] - bm[0],
        n_plus: plus.len(),
        n_minus: minus.len(),
        min_side_support: plus.len().min(minus.len()),
        condition_plus: cp,
        condition_minus: cm,
    })
}

/// Difference of the per-side weighted linear fits at 0.
pub fn local_linear_rdd(sample: &Sample, cfg: &EstimatorConfig) -> Result<RddEstimate> {
    local_linear_on(sample, cfg, 0.0)
}

/// Local linear fits on `h_donut <= |z| <= h`, extrapolated to 0.
pub fn donut_rdd(sample: &Sample, cfg: &EstimatorConfig) -> Result<RddEstimate> {
    local_linear_on(sample, cfg, cfg.h_donut)
}

/// Difference of kernel-weighted means across the cutoff.
pub fn nadaraya_watson_rdd(sample: &Sample, cfg: &EstimatorConfig) -> Result<f64> {
    cfg.validate()?;
    let mean = |side| -> Result<f64> {
        let rows = SideRows::collect(sample, cfg.kernel, cfg.h, 0.0, side);
        rows.require(1)?;
        let sw: f64 = rows.w.iter().sum();
        Ok(rows.w.iter().zip(&rows.y).map(|(w, y)| w * y).sum::<f64>() / sw)
    };
    Ok(mean(Side::Plus)? - mean(Side::Minus)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_sample(n: usize, seed: u64) -> Sample {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let y = z
            .iter()
            .map(|&z: &f64| (if z >= 0.0 { 1.0 } else { 0.0 }) + z + 0.3 * (5.0 * z).sin() + rng.random_range(-0.5..0.5))
            .collect();
        Sample::from_columns(z, y)
    }

    fn cfg(h: f64) -> EstimatorConfig {
        EstimatorConfig::new(Kernel::Triangular, h)
    }

    #[test]
    fn exact_lines_are_reproduced() {
        let z: Vec<f64> = (0..401).map(|i| -1.0 + i as f64 / 200.0).collect();
        let y = z.iter().map(|&z| if z >= 0.0 { 1.7 + 0.4 * z } else { -0.2 - 1.1 * z }).collect();
        let s = Sample::from_columns(z, y);
        for k in [Kernel::Triangular, Kernel::Epanechnikov, Kernel::Uniform] {
            let e = local_linear_rdd(&s, &EstimatorConfig::new(k, 0.3)).unwrap();
            assert!((e.tau_hat - 1.9).abs() < 1e-13, "{}", e.tau_hat);
            assert!((e.beta_plus[1] - 0.4).abs() < 1e-12);
            assert!((e.beta_minus[1] + 1.1).abs() < 1e-12);
        }
    }

    #[test]
    fn tie_at_zero_is_treated() {
        let z = vec![0.0, 0.1, 0.2, -0.1, -0.2, -0.3];
        let y = vec![5.0, 5.0, 5.0, 1.0, 1.0, 1.0];
        let e = local_linear_rdd(&Sample::from_columns(z, y), &cfg(0.5)).unwrap();
        assert_eq!(e.n_plus, 3);
        assert!((e.tau_hat - 4.0).abs() < 1e-13);
    }

    #[test]
    fn insufficient_support_names_side() {
        let z = vec![0.1, 0.2, 0.3, -0.1, -0.2];
        let s = Sample::from_columns(z, vec![0.0; 5]);
        match local_linear_rdd(&s, &cfg(0.5)) {
            Err(Error::InsufficientSupport { side: Side::Minus, .. }) => {}
            other => panic!("{other:?}"),
        }
        let z = vec![0.1, 0.1, 0.1, -0.1, -0.2, -0.3];
        let s = Sample::from_columns(z, vec![0.0; 6]);
        assert!(matches!(
            local_linear_rdd(&s, &cfg(0.5)),
            Err(Error::InsufficientSupport { side: Side::Plus, .. })
        ));
    }

    #[test]
    fn nadaraya_watson_degenerate_cases() {
        let s = Sample::from_columns(vec![0.2, -0.2], vec![3.0, 1.0]);
        assert_eq!(nadaraya_watson_rdd(&s, &cfg(0.5)).unwrap(), 2.0);
        let s = Sample::from_columns(vec![0.2, 0.1, -0.3, -0.2], vec![4.0; 4]);
        assert_eq!(nadaraya_watson_rdd(&s, &cfg(0.5)).unwrap(), 0.0);
        let s = Sample::from_columns(vec![0.2, 0.1], vec![4.0; 2]);
        assert!(matches!(
            nadaraya_watson_rdd(&s, &cfg(0.5)),
            Err(Error::InsufficientSupport { side: Side::Minus, .. })
        ));
    }

    #[test]
    fn empty_donut_is_local_linear() {
        let s = random_sample(2000, 1);
        let c = cfg(0.3);
        assert_eq!(donut_rdd(&s, &c.with_donut(0.0)).unwrap(), local_linear_rdd(&s, &c).unwrap());
    }

    #[test]
    fn donut_ignores_inner_points() {
        let mut s = random_sample(2000, 2);
        let c = cfg(0.3).with_donut(0.05);
        let before = donut_rdd(&s, &c).unwrap();
        for (z, y) in s.z.iter().zip(s.y.iter_mut()) {
            if z.abs() < 0.05 {
                *y += 100.0;
            }
        }
        assert_eq!(donut_rdd(&s, &c).unwrap(), before);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn permutation_invariant(seed in 0u64..1000, shuffle in 0u64..1000) {
            let s = random_sample(500, seed);
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.shuffle(&mut ChaCha20Rng::seed_from_u64(shuffle));
            let p = Sample::from_columns(idx.iter().map(|&i| s.z[i]).collect(), idx.iter().map(|&i| s.y[i]).collect());
            prop_assert_eq!(local_linear_rdd(&s, &cfg(0.4)).unwrap(), local_linear_rdd(&p, &cfg(0.4)).unwrap());
            prop_assert_eq!(nadaraya_watson_rdd(&s, &cfg(0.4)).unwrap(), nadaraya_watson_rdd(&p, &cfg(0.4)).unwrap());
        }

        #[test]
        fn points_outside_bandwidth_have_no_influence(seed in 0u64..1000, far in 0.41f64..1.0, yv in -50.0f64..50.0) {
            let s = random_sample(400, seed);
            let mut t = s.clone();
            t.z.push(far);
            t.y.push(yv);
            t.z.push(-far);
            t.y.push(-yv);
            prop_assert_eq!(local_linear_rdd(&s, &cfg(0.4)).unwrap().tau_hat, local_linear_rdd(&t, &cfg(0.4)).unwrap().tau_hat);
        }

        #[test]
        fn constant_shift_leaves_tau_invariant(seed in 0u64..1000, kappa in -10.0f64..10.0) {
            let s = random_sample(400, seed);
            let mut t = s.clone();
            t.y.iter_mut().for_each(|y| *y += kappa);
            let (a, b) = (local_linear_rdd(&s, &cfg(0.4)).unwrap(), local_linear_rdd(&t, &cfg(0.4)).unwrap());
            prop_assert!((a.tau_hat - b.tau_hat).abs() < 1e-10);
            prop_assert!((b.beta_plus[0] - a.beta_plus[0] - kappa).abs() < 1e-10);
            prop_assert!((b.beta_minus[0] - a.beta_minus[0] - kappa).abs() < 1e-10);
        }
    }
}
