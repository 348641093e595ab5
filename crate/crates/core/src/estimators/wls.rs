//! Weighted least squares by Householder QR.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct WlsFit {
    /// One entry per design column; dropped columns get 0.
    pub coef: Vec<f64>,
    /// 2-norm condition number of the column-equilibrated weighted design.
    pub condition: f64,
}

/// Minimizes `sum w_i (y_i - x_i' b)^2` over the columns of `x`.
///
/// Columns that are identically zero are dropped before factoring, so a
/// design padded with zero columns gives bit-identical coefficients on the
/// remaining ones. Returns `Err(condition)` when the reduced design is
/// rank deficient.
pub(crate) fn wls(columns: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<WlsFit, f64> {
    let m = y.len();
    let kept: Vec<usize> = (0..columns.len()).filter(|&j| columns[j].iter().any(|&v| v != 0.0)).collect();
    let p = kept.len();
    if p == 0 || m < p {
        return Err(f64::INFINITY);
    }
    let sw: Vec<f64> = w.iter().map(|w| w.sqrt()).collect();
    let mut a = DMatrix::from_fn(m, p, |i, j| sw[i] * columns[kept[j]][i]);
    let scale: Vec<f64> = (0..p).map(|j| a.column(j).norm()).collect();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).unscale_mut(*s);
    }
    let mut b = DVector::from_iterator(m, y.iter().zip(&sw).map(|(y, s)| y * s));
    let qr = a.qr();
    let r = qr.r();
    let sv = r.clone().singular_values();
    let condition = sv.max() / sv.min();
    if !condition.is_finite() || r.diagonal().iter().any(|d| *d == 0.0) {
        return Err(f64::INFINITY);
    }
    qr.q_tr_mul(&mut b);
    let rhs = b.rows(0, p).into_owned();
    let sol = r.solve_upper_triangular(&rhs).ok_or(f64::INFINITY)?;
    let mut coef = vec![0.0; columns.len()];
    for (j, &col) in kept.iter().enumerate() {
        coef[col] = sol[j] / scale[j];
    }
    Ok(WlsFit { coef, condition })
}
