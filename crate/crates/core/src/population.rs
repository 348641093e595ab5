//! Grid solver for the continuum outcome model
//! `y(z) = m(z) + delta(z) * mu(z) + gamma(z) * nu(z)`,
//! where `mu` and `nu` are averages of `y` and of treatment status over the
//! neighbourhood `[z - r, z + r]` clipped to `[-1, 1]`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcspace::ModelSpec;
use crate::window::{assemble_operator, Grid, Outside, Profile};

pub const DEFAULT_GRID_N: usize = 4001;
pub const DENSE_TOLERANCE: f64 = 1e-10;
pub const NEUMANN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatmentRegime {
    /// `d(z) = 1{z >= 0}`.
    Cutoff,
    AllTreated,
    NoneTreated,
}

impl TreatmentRegime {
    pub fn treated(&self, z: f64) -> bool {
        match self {
            TreatmentRegime::Cutoff => z >= 0.0,
            TreatmentRegime::AllTreated => true,
            TreatmentRegime::NoneTreated => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Dense,
    Neumann,
}

/// Share of the clipped neighbourhood of `z` that is treated.
pub fn nu_exact(regime: TreatmentRegime, r: f64, z: f64) -> Result<f64> {
    check_radius(r)?;
    if !(-1.0..=1.0).contains(&z) {
        return Err(Error::Domain(format!("z = {z} lies outside [-1, 1]")));
    }
    Ok(nu_unchecked(regime, r, z))
}

fn nu_unchecked(regime: TreatmentRegime, r: f64, z: f64) -> f64 {
    match regime {
        TreatmentRegime::AllTreated => 1.0,
        TreatmentRegime::NoneTreated => 0.0,
        TreatmentRegime::Cutoff => {
            let a = (z - r).max(-1.0);
            let b = (z + r).min(1.0);
            (b - a.max(0.0)).max(0.0) / (b - a)
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::Config(format!("spillover radius must be positive, got {r}")));
    }
    if r >= 2.0 {
        return Err(Error::Config(format!(
            "spillover radius {r} covers the whole domain; it must be below 2"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub method: SolveMethod,
    pub iterations: usize,
    pub residual_sup_norm: f64,
}

/// A solved population on a uniform grid.
#[derive(Debug, Clone)]
pub struct PopulationSolution {
    grid: Grid,
    pub r: f64,
    pub regime: TreatmentRegime,
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// `y(0) - y(0-)`; nonzero only under the cutoff regime.
    pub jump: f64,
    pub solver_report: SolverReport,
    pub model_hash: String,
}

impl PopulationSolution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn z(&self) -> Vec<f64> {
        self.grid.nodes()
    }

    pub fn grid_n(&self) -> usize {
        self.grid.len()
    }

    /// Outcome at `z`, interpolated linearly on each side of the cutoff.
    pub fn y_at(&self, z: f64) -> f64 {
        self.grid.interpolate(&self.y, self.jump, z)
    }

    /// Outcome at 0 (the treated-side limit under the cutoff regime).
    pub fn y_at_zero(&self) -> f64 {
        self.y[self.grid.zero_index()]
    }

    /// Left limit of the outcome at 0.
    pub fn y_at_zero_left(&self) -> f64 {
        self.y_at_zero() - self.jump
    }

    pub fn profile(&self) -> Profile {
        Profile::new(&self.grid, &self.y, self.jump)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "z,y,mu,nu")?;
        for k in 0..self.grid.len() {
            writeln!(w, "{},{},{},{}", self.grid.node(k), self.y[k], self.mu[k], self.nu[k])?;
        }
        Ok(())
    }
}

/// Neighbourhood average of the solved outcome at `z`.
pub fn mu_at(sol: &PopulationSolution, z: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&z) {
        return Err(Error::Domain(format!("z = {z} lies outside [-1, 1]")));
    }
    Ok(sol.profile().window_mean(z, sol.r, Outside::Truncate))
}

fn check_grid(grid_n: usize, r: f64) -> Result<Grid> {
    check_radius(r)?;
    if grid_n < 201 || grid_n.is_multiple_of(2) {
        return Err(Error::Config(format!("grid_n must be odd and at least 201, got {grid_n}")));
    }
    let grid = Grid::symmetric(1.0, grid_n)?;
    if r <= 4.0 * grid.step() {
        return Err(Error::Config(format!(
            "radius {r} spans fewer than 4 grid steps of {}; increase grid_n",
            grid.step()
        )));
    }
    Ok(grid)
}

/// `delta(z) * mean_{[z-r, z+r]} f` on a grid, for grid functions without a jump.
#[derive(Debug, Clone)]
pub struct SpilloverOperator {
    grid: Grid,
    r: f64,
    delta: Vec<f64>,
}

impl SpilloverOperator {
    pub fn new(model: &ModelSpec, r: f64, grid_n: usize) -> Result<Self> {
        let grid = check_grid(grid_n, r)?;
        let delta = grid.nodes().iter().map(|&z| model.delta.value(z)).collect();
        Ok(SpilloverOperator { grid, r, delta })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let means = Profile::new(&self.grid, f, 0.0).window_means(self.r, Outside::Truncate);
        means.iter().zip(&self.delta).map(|(m, d)| d * m).collect()
    }
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iteration cap for the Neumann solver given the contraction factor and the
/// size of the first increment.
fn neumann_cap(delta_bar: f64, tol: f64, first_increment: f64) -> usize {
    if delta_bar <= 0.0 {
        return 10;
    }
    let scale = first_increment.max(1.0);
    let k = ((tol * (1.0 - delta_bar) / scale).ln() / delta_bar.ln()).ceil();
    k.max(0.0) as usize + 10
}

pub fn solve_population(
    model: &ModelSpec,
    r: f64,
    regime: TreatmentRegime,
    grid_n: usize,
    method: SolveMethod,
) -> Result<PopulationSolution> {
    let grid = check_grid(grid_n, r)?;
    let z = grid.nodes();
    let m: Vec<f64> = z
        .iter()
        .map(|&x| if regime.treated(x) { model.m_plus.value(x) } else { model.m_minus.value(x) })
        .collect();
    let jump = if regime == TreatmentRegime::Cutoff { model.tau_d() } else { 0.0 };
    let delta: Vec<f64> = z.iter().map(|&x| model.delta.value(x)).collect();
    let gamma: Vec<f64> = z.iter().map(|&x| model.gamma.value(x)).collect();
    let nu: Vec<f64> = z.iter().map(|&x| nu_unchecked(regime, r, x)).collect();
    let source: Vec<f64> = (0..z.len()).map(|i| m[i] + gamma[i] * nu[i]).collect();

    let (y, iterations) = match method {
        SolveMethod::Dense => {
            let (a, correction) = assemble_operator(&grid, r, Outside::Truncate, &delta, jump);
            let rhs: Vec<f64> = source.iter().zip(&correction).map(|(s, c)| s + c).collect();
            (a.solve(&rhs)?, 1)
        }
        SolveMethod::Neumann => {
            let tol = NEUMANN_TOLERANCE;
            let delta_bar = model.delta_bar();
            let stop = (1.0 - delta_bar) * tol;
            let step = |y: &[f64]| -> Vec<f64> {
                let means = Profile::new(&grid, y, jump).window_means(r, Outside::Truncate);
                (0..y.len()).map(|i| source[i] + delta[i] * means[i]).collect()
            };
            let mut y = source.clone();
            let mut iterations = 0;
            let mut cap = usize::MAX;
            loop {
                let next = step(&y);
                let inc = sup_norm_diff(&next, &y);
                iterations += 1;
                y = next;
                if iterations == 1 {
                    cap = neumann_cap(delta_bar, tol, inc);
                }
                if inc < stop {
                    break;
                }
                if iterations >= cap {
                    return Err(Error::NoConvergence { iterations, residual: inc });
                }
            }
            (y, iterations)
        }
    };

    let mu = Profile::new(&grid, &y, jump).window_means(r, Outside::Truncate);
    let residual = (0..y.len())
        .map(|i| (y[i] - m[i] - delta[i] * mu[i] - gamma[i] * nu[i]).abs())
        .fold(0.0, f64::max);
    let tol = match method {
        SolveMethod::Dense => DENSE_TOLERANCE,
        SolveMethod::Neumann => NEUMANN_TOLERANCE,
    };
    if !(residual <= tol) {
        return Err(Error::NoConvergence { iterations, residual });
    }
    Ok(PopulationSolution {
        grid,
        r,
        regime,
        y,
        mu,
        nu,
        jump,
        solver_report: SolverReport { method, iterations, residual_sup_norm: residual },
        model_hash: model.content_hash(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEstimands {
    pub tau_d: f64,
    pub tau_tot: f64,
}

/// Direct effect from the model and total effect from the all-treated and
/// none-treated solves.
pub fn true_estimands(model: &ModelSpec, r: f64, grid_n: usize) -> Result<TrueEstimands> {
    let (all, none) = rayon::join(
        || solve_population(model, r, TreatmentRegime::AllTreated, grid_n, SolveMethod::Neumann),
        || solve_population(model, r, TreatmentRegime::NoneTreated, grid_n, SolveMethod::Neumann),
    );
    let (all, none) = (all?, none?);
    Ok(TrueEstimands { tau_d: model.tau_d(), tau_tot: all.y_at_zero() - none.y_at_zero() })
}
