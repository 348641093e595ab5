//! Window averages of grid functions and the banded linear solve used by the
//! direct solvers.
//!
//! A grid function is reconstructed as the piecewise-linear interpolant of
//! its nodal values, except that the cell just left of the origin may end at
//! `v[zero] - jump` instead of `v[zero]`. This is how a function with a
//! discontinuity at 0 is represented (the node at 0 carries the right limit).
//! Window integrals of this reconstruction are exact.
//!
//! Two independent routes compute the same averages: cumulative integrals
//! (`Profile`, O(1) per window after an O(N) pass) and explicit weight rows
//! (`window_row`, used to assemble the matrix for the direct solve).

use crate::error::{Error, Result};

/// Uniform grid on `[-half_width, half_width]` with an odd number of points,
/// so that 0 is a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    half_width: f64,
    n: usize,
    zero: usize,
}

impl Grid {
    pub fn symmetric(half_width: f64, n: usize) -> Result<Grid> {
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::Config(format!("grid size must be odd and at least 3, got {n}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::Config(format!("grid half-width must be positive, got {half_width}")));
        }
        Ok(Grid { half_width, n, zero: (n - 1) / 2 })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the node at 0.
    pub fn zero_index(&self) -> usize {
        self.zero
    }

    pub fn lo(&self) -> f64 {
        -self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.half_width
    }

    pub fn step(&self) -> f64 {
        self.half_width / self.zero as f64
    }

    /// Node `k`. Nodes are exactly antisymmetric and the middle one is exactly 0.
    pub fn node(&self, k: usize) -> f64 {
        self.half_width * (k as f64 - self.zero as f64) / self.zero as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.node(k)).collect()
    }

    /// Cell containing `x`, clamped to the valid range `0..n-1`.
    fn cell_of(&self, x: f64) -> usize {
        let k = ((x - self.lo()) / self.step()).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n - 2)
        }
    }

    /// Right-end value of cell `k` under a jump at 0.
    fn right_value(&self, values: &[f64], jump: f64, k: usize) -> f64 {
        if k + 1 == self.zero {
            values[k + 1] - jump
        } else {
            values[k + 1]
        }
    }

    /// Jump-aware linear interpolation at `x` (clamped to the grid).
    pub fn interpolate(&self, values: &[f64], jump: f64, x: f64) -> f64 {
        let x = x.clamp(self.lo(), self.hi());
        if x == 0.0 {
            return values[self.zero];
        }
        let mut k = self.cell_of(x);
        // keep points on the correct side of the discontinuity
        if x < 0.0 && k >= self.zero {
            k = self.zero - 1;
        } else if x > 0.0 && k < self.zero {
            k = self.zero;
        }
        let x0 = self.node(k);
        let x1 = self.node(k + 1);
        let t = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        let a = values[k];
        let b = self.right_value(values, jump, k);
        a + t * (b - a)
    }
}

/// How a window that sticks out of the grid is treated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outside {
    /// Clip the window to the grid and renormalize by the clipped length.
    Truncate,
    /// Extend the function by constants and keep the full window length.
    Pad { left: f64, right: f64 },
}

/// A reconstructed grid function with precomputed cumulative integrals.
#[derive(Debug, Clone)]
pub struct Profile {
    grid: Grid,
    values: Vec<f64>,
    jump: f64,
    cum: Vec<f64>,
}

impl Profile {
    pub fn new(grid: &Grid, values: &[f64], jump: f64) -> Profile {
        assert_eq!(values.len(), grid.len(), "values must match the grid");
        let mut cum = Vec::with_capacity(grid.len());
        // Neumaier-compensated running sum; the windows take differences of
        // these totals, so accumulated round-off would show up directly.
        let mut acc = 0.0f64;
        let mut comp = 0.0f64;
        cum.push(0.0);
        for k in 0..grid.len() - 1 {
            let h = grid.node(k + 1) - grid.node(k);
            let term = 0.5 * h * (values[k] + grid.right_value(values, jump, k));
            let t = acc + term;
            if acc.abs() >= term.abs() {
                comp += (acc - t) + term;
            } else {
                comp += (term - t) + acc;
            }
            acc = t;
            cum.push(acc + comp);
        }
        Profile { grid: grid.clone(), values: values.to_vec(), jump, cum }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Reconstructed value at `x` (clamped to the grid).
    pub fn value_at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.values, self.jump, x)
    }

    /// `int_{lo}^{x} f` for `x` inside the grid.
    pub fn integral_to(&self, x: f64) -> f64 {
        let g = &self.grid;
        let x = x.clamp(g.lo(), g.hi());
        let k = g.cell_of(x);
        let x0 = g.node(k);
        let h = g.node(k + 1) - x0;
        let t = x - x0;
        let a = self.values[k];
        let b = g.right_value(&self.values, self.jump, k);
        self.cum[k] + a * t + (b - a) * t * t / (2.0 * h)
    }

    /// Average over `[z - radius, z + radius]`.
    pub fn window_mean(&self, z: f64, radius: f64, outside: Outside) -> f64 {
        self.interval_mean(z - radius, z + radius, outside)
    }

    /// Average over `[lo, hi]`, `lo < hi`.
    pub fn interval_mean(&self, lo: f64, hi: f64, outside: Outside) -> f64 {
        let g = &self.grid;
        let (a, b) = (lo.max(g.lo()), hi.min(g.hi()));
        let inside = if b > a { self.integral_to(b) - self.integral_to(a) } else { 0.0 };
        match outside {
            Outside::Truncate => inside / (b - a),
            Outside::Pad { left, right } => {
                let spill_l = (g.lo().min(hi) - lo).max(0.0);
                let spill_r = (hi - g.hi().max(lo)).max(0.0);
                (inside + left * spill_l + right * spill_r) / (hi - lo)
            }
        }
    }

    /// Window means centred at every node.
    pub fn window_means(&self, radius: f64, outside: Outside) -> Vec<f64> {
        (0..self.grid.len()).map(|k| self.window_mean(self.grid.node(k), radius, outside)).collect()
    }
}

/// The window mean at one point written as a linear functional of the
/// nodal values: `mean = sum_j weights[j] * v[start + j] - zero_left * jump + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub start: usize,
    pub weights: Vec<f64>,
    /// Weight carried by the left limit at 0 (already included in `weights`).
    pub zero_left: f64,
    /// Contribution of padding constants.
    pub constant: f64,
}

pub fn window_row(grid: &Grid, z: f64, radius: f64, outside: Outside) -> WindowRow {
    let (a, b) = ((z - radius).max(grid.lo()), (z + radius).min(grid.hi()));
    let (norm, constant) = match outside {
        Outside::Truncate => (b - a, 0.0),
        Outside::Pad { left, right } => {
            let spill_l = (grid.lo() - (z - radius)).max(0.0);
            let spill_r = ((z + radius) - grid.hi()).max(0.0);
            (2.0 * radius, (left * spill_l + right * spill_r) / (2.0 * radius))
        }
    };
    let k_first = grid.cell_of(a).saturating_sub(1);
    let k_last = (grid.cell_of(b) + 1).min(grid.len() - 2);
    let mut weights = vec![0.0; k_last - k_first + 2];
    let mut zero_left = 0.0;
    for k in k_first..=k_last {
        let x0 = grid.node(k);
        let x1 = grid.node(k + 1);
        let s = a.max(x0);
        let e = b.min(x1);
        if e <= s {
            continue;
        }
        let h = x1 - x0;
        let ts = (s - x0) / h;
        let te = (e - x0) / h;
        let sq = 0.5 * (te * te - ts * ts);
        let w_left = h * ((te - ts) - sq) / norm;
        let w_right = h * sq / norm;
        weights[k - k_first] += w_left;
        weights[k + 1 - k_first] += w_right;
        if k + 1 == grid.zero_index() {
            zero_left += w_right;
        }
    }
    WindowRow { start: k_first, weights, zero_left, constant }
}

/// Square matrix stored by diagonals `-lower..=upper`.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> BandMatrix {
        BandMatrix { n, lower, upper, data: vec![0.0; n * (lower + upper + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.lower >= i && j <= i + self.upper);
        i * self.width() + (j + self.lower - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.lower < i || j > i + self.upper {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let j0 = i.saturating_sub(self.lower);
                let j1 = (i + self.upper).min(self.n - 1);
                (j0..=j1).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Gaussian elimination without pivoting, in place.
    ///
    /// Only valid for matrices whose pivots stay away from zero; the
    /// operators here are strictly diagonally dominant by rows, which
    /// guarantees that.
    pub fn solve(mut self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut x = rhs.to_vec();
        for k in 0..n {
            let pivot = self.data[self.offset(k, k)];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::Numeric(format!("zero pivot at row {k} in banded solve")));
            }
            let j_end = (k + self.upper).min(n - 1);
            let i_end = (k + self.lower).min(n - 1);
            for i in k + 1..=i_end {
                let oik = self.offset(i, k);
                let l = self.data[oik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[oik] = l;
                let ok = self.offset(k, k);
                let oi = self.offset(i, k);
                for t in 1..=(j_end - k) {
                    self.data[oi + t] -= l * self.data[ok + t];
                }
                x[i] -= l * x[k];
            }
        }
        for k in (0..n).rev() {
            let j_end = (k + self.upper).min(n - 1);
            let ok = self.offset(k, k);
            let mut s = x[k];
            for t in 1..=(j_end - k) {
                s -= self.data[ok + t] * x[k + t];
            }
            x[k] = s / self.data[ok];
        }
        Ok(x)
    }
}

/// Assembles `I - diag(scale) * W` where row `i` of `W` is the window row at
/// node `i`, and returns it together with the right-hand-side correction
/// `scale_i * (constant_i - zero_left_i * jump)` that must be added to the
/// source term.
pub fn assemble_operator(
    grid: &Grid,
    radius: f64,
    outside: Outside,
    scale: &[f64],
    jump: f64,
) -> (BandMatrix, Vec<f64>) {
    let rows: Vec<WindowRow> =
        (0..grid.len()).map(|i| window_row(grid, grid.node(i), radius, outside)).collect();
    let mut lower = 0;
    let mut upper = 0;
    for (i, row) in rows.iter().enumerate() {
        lower = lower.max(i.saturating_sub(row.start));
        upper = upper.max((row.start + row.weights.len() - 1).saturating_sub(i));
    }
    let mut m = BandMatrix::zeros(grid.len(), lower, upper);
    let mut correction = vec![0.0; grid.len()];
    for (i, row) in rows.iter().enumerate() {
        m.add(i, i, 1.0);
        for (t, &w) in row.weights.iter().enumerate() {
            if w != 0.0 {
                m.add(i, row.start + t, -scale[i] * w);
            }
        }
        correction[i] = scale[i] * (row.constant - row.zero_left * jump);
    }
    (m, correction)
}
