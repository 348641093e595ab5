use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spillover::{columns_from, design, fit_side, nu_at, NeighborMeans};
use super::{EstimatorConfig, SideRows};
use crate::error::{Error, Result, Side};
use crate::sampling::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub r: f64,
    /// Kernel-weighted out-of-fold squared error summed over folds; `None`
    /// when some fold could not be fitted.
    pub mse_plus: Option<f64>,
    pub mse_minus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub r_plus: f64,
    pub r_minus: f64,
    pub folds: usize,
    pub seed: u64,
    pub cv_table: Vec<CvRow>,
}

fn subsample(sample: &Sample, keep: &[usize]) -> Sample {
    Sample::from_columns(keep.iter().map(|&i| sample.z[i]).collect(), keep.iter().map(|&i| sample.y[i]).collect())
}

/// Out-of-fold error on `side` for one candidate radius and one fold.
fn fold_error(train: &Sample, test: &Sample, cfg: &EstimatorConfig, r: f64, side: Side) -> Result<f64> {
    let nm = NeighborMeans::new(train);
    let cols = columns_from(&nm, train, r, cfg.h);
    let rows = SideRows::collect(train, cfg.kernel, cfg.h, 0.0, side);
    let (beta, _) = fit_side(&rows, &cols)?;
    let held = SideRows::collect(test, cfg.kernel, cfg.h, 0.0, side);
    // held-out points are not in the training sample, so nothing is excluded
    let nu0 = nu_at(r, 0.0);
    let test_cols = super::SpilloverColumns {
        mu_delta: test.z.iter().map(|&z| nm.at(r, z, None).value - cols.mu_hat_at_0).collect(),
        nu_delta: test.z.iter().map(|&z| nu_at(r, z) - nu0).collect(),
        mu_hat_at_0: cols.mu_hat_at_0,
    };
    let x = design(&held, &test_cols);
    Ok((0..held.len())
        .map(|i| {
            let fit: f64 = x.iter().zip(&beta).map(|(c, b)| c[i] * b).sum();
            held.w[i] * (held.y[i] - fit).powi(2)
        })
        .sum())
}

/// K-fold cross-validation of the spillover radius, separately per side.
pub fn cross_validate_r(
    sample: &Sample,
    cfg: &EstimatorConfig,
    candidates: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    cfg.validate()?;
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if candidates.is_empty() {
        return Err(Error::Config("no candidate radii given".into()));
    }
    if let Some(bad) = candidates.iter().find(|&&r| !(r > 0.0 && r < cfg.h)) {
        return Err(Error::Config(format!("candidate radius {bad} must lie in (0, h = {})", cfg.h)));
    }
    for side in [Side::Plus, Side::Minus] {
        let usable = SideRows::collect(sample, cfg.kernel, cfg.h, 0.0, side).len();
        if usable < folds {
            return Err(Error::CrossValidation(format!(
                "{folds} folds but only {usable} usable observations on the {side} side"
            )));
        }
    }
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; sample.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let splits: Vec<(Sample, Sample)> = (0..folds)
        .map(|k| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..sample.len()).partition(|&i| fold_of[i] == k);
            (subsample(sample, &train), subsample(sample, &test))
        })
        .collect();
    let table: Vec<CvRow> = candidates
        .par_iter()
        .map(|&r| {
            let total = |side| -> Option<f64> {
                splits.iter().map(|(train, test)| fold_error(train, test, cfg, r, side).ok()).sum()
            };
            CvRow { r, mse_plus: total(Side::Plus), mse_minus: total(Side::Minus) }
        })
        .collect();
    let best = |get: fn(&CvRow) -> Option<f64>, side: Side| -> Result<f64> {
        table
            .iter()
            .filter_map(|row| get(row).map(|m| (row.r, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(r, _)| r)
            .ok_or_else(|| Error::CrossValidation(format!("every candidate radius failed on the {side} side")))
    };
    Ok(CvResult {
        r_plus: best(|row| row.mse_plus, Side::Plus)?,
        r_minus: best(|row| row.mse_minus, Side::Minus)?,
        folds,
        seed,
        cv_table: table,
    })
}
