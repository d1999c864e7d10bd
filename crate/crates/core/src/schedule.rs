//! Reverse-time discretization grids 0 = t_0 < … < t_N = T − δ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default forward-time position of the last grid point before the data
/// end when an exponential-then-constant grid runs without early stopping.
pub const DEFAULT_PRE_FINAL_GAP: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Recipe {
    Constant,
    /// Constant steps while T − t ≥ 1, geometric steps below. `kappa` is the
    /// target step-size ratio; `pre_final_gap` is only used when δ = 0.
    ExpThenConst {
        kappa: f64,
        #[serde(default = "default_gap")]
        pre_final_gap: f64,
    },
    /// T − t_k log-uniform between T and δ.
    LogLinear,
    /// A user-supplied grid.
    Explicit { grid: Vec<f64> },
}

fn default_gap() -> f64 {
    DEFAULT_PRE_FINAL_GAP
}

impl Recipe {
    pub fn exp_then_const(kappa: f64) -> Self {
        Recipe::ExpThenConst {
            kappa,
            pre_final_gap: DEFAULT_PRE_FINAL_GAP,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Constant => "constant",
            Recipe::ExpThenConst { .. } => "exp_then_const",
            Recipe::LogLinear => "log_linear",
            Recipe::Explicit { .. } => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    horizon: f64,
    grid: Vec<f64>,
    early_stop: f64,
    recipe: Recipe,
    /// max over non-final steps of h_k / min(1, T − t_{k+1}).
    kappa_eff: f64,
    warnings: Vec<String>,
}

impl Schedule {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn early_stop(&self) -> f64 {
        self.early_stop
    }

    pub fn recipe(&self) -> &Recipe {
        &self.recipe
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    /// h_k = t_{k+1} − t_k.
    pub fn step(&self, k: usize) -> f64 {
        self.grid[k + 1] - self.grid[k]
    }

    pub fn kappa_eff(&self) -> f64 {
        self.kappa_eff
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

fn kappa_scan(horizon: f64, grid: &[f64]) -> f64 {
    let n = grid.len() - 1;
    (0..n.saturating_sub(1))
        .map(|k| (grid[k + 1] - grid[k]) / (horizon - grid[k + 1]).min(1.0))
        .fold(0.0, f64::max)
}

/// Builds a grid from its recipe. Warnings (not errors) are attached for
/// exponential-then-constant grids whose κ reaches 0.9 or exceeds the target.
pub fn build_schedule(recipe: Recipe, horizon: f64, n: usize, early_stop: f64) -> Result<Schedule> {
    if n == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(horizon > early_stop) || !(early_stop >= 0.0) || !horizon.is_finite() {
        return Err(Error::Config(format!(
            "need T > δ ≥ 0, got T={horizon}, δ={early_stop}"
        )));
    }
    let end = horizon - early_stop;
    let mut warnings = Vec::new();
    let mut grid = match &recipe {
        Recipe::Constant => (0..=n).map(|k| end * k as f64 / n as f64).collect(),
        Recipe::LogLinear => {
            if early_stop == 0.0 {
                return Err(Error::Config("log-linear schedule requires δ > 0".into()));
            }
            let r = (early_stop / horizon).ln();
            (0..=n)
                .map(|k| horizon - horizon * (r * k as f64 / n as f64).exp())
                .collect()
        }
        Recipe::ExpThenConst {
            kappa,
            pre_final_gap,
        } => {
            if !(*kappa > 0.0) {
                return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
            }
            if *kappa >= 0.9 {
                warnings.push(format!("kappa = {kappa} is at least 0.9"));
            }
            exp_then_const_grid(horizon, n, early_stop, *pre_final_gap)?
        }
        Recipe::Explicit { grid } => {
            if grid.len() != n + 1 {
                return Err(Error::Config(format!(
                    "explicit grid has {} points, expected {}",
                    grid.len(),
                    n + 1
                )));
            }
            if grid[0] != 0.0 || (grid[n] - end).abs() > 1e-12 {
                return Err(Error::Config("explicit grid must run from 0 to T − δ".into()));
            }
            grid.clone()
        }
    };
    grid[0] = 0.0;
    grid[n] = end;
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("grid is not strictly increasing".into()));
    }
    let kappa_eff = kappa_scan(horizon, &grid);
    if let Recipe::ExpThenConst { kappa, .. } = recipe {
        if kappa_eff > kappa * (1.0 + 1e-12) {
            warnings.push(format!(
                "achieved step ratio {kappa_eff:.4} exceeds target kappa {kappa}; increase N"
            ));
        }
    }
    Ok(Schedule {
        horizon,
        grid,
        early_stop,
        recipe,
        kappa_eff,
        warnings,
    })
}

/// Forward time u = T − t runs from T down to `e`: constant steps while
/// u ≥ 1, then geometric steps of ratio ρ down to `e`. The split between the
/// two phases minimizes max((T − 1)/n_c, 1/ρ − 1). With δ = 0 the last
/// grid step jumps from u = `gap` to 0.
fn exp_then_const_grid(horizon: f64, n: usize, early_stop: f64, gap: f64) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![0.0, horizon - early_stop]);
    }
    let (end, m) = if early_stop > 0.0 {
        (early_stop, n)
    } else {
        if !(gap > 0.0) {
            return Err(Error::Config("pre-final gap must be positive".into()));
        }
        (gap.min(horizon / 2.0), n - 1)
    };
    let mut us = vec![horizon];
    if horizon <= 1.0 || end >= 1.0 {
        if end >= 1.0 {
            for k in 1..=m {
                us.push(horizon - (horizon - end) * k as f64 / m as f64);
            }
        } else {
            let rho = (end / horizon).powf(1.0 / m as f64);
            for k in 1..=m {
                us.push(horizon * rho.powi(k as i32));
            }
        }
    } else if m == 1 {
        us.push(end);
    } else {
        let cost = |nc: usize| {
            let ng = m - nc;
            let c = (horizon - 1.0) / nc as f64;
            let g = (1.0 / end).powf(1.0 / ng as f64) - 1.0;
            c.max(g)
        };
        let nc = (1..m)
            .min_by(|&a, &b| cost(a).total_cmp(&cost(b)))
            .expect("m ≥ 2");
        let ng = m - nc;
        for k in 1..=nc {
            us.push(horizon - (horizon - 1.0) * k as f64 / nc as f64);
        }
        let rho = end.powf(1.0 / ng as f64);
        for k in 1..=ng {
            us.push(rho.powi(k as i32));
        }
    }
    if early_stop == 0.0 {
        us.push(0.0);
    }
    let mut grid: Vec<f64> = us.iter().map(|u| horizon - u).collect();
    *grid.last_mut().expect("nonempty") = horizon - early_stop;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_example() {
        let s = build_schedule(Recipe::Constant, 2.0, 4, 0.0).unwrap();
        assert_eq!(s.grid(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn single_step_any_recipe() {
        for r in [Recipe::Constant, Recipe::LogLinear, Recipe::exp_then_const(0.5)] {
            let s = build_schedule(r, 3.0, 1, 0.1).unwrap();
            assert_eq!(s.grid().len(), 2);
            assert_eq!(s.grid()[0], 0.0);
            assert!((s.grid()[1] - 2.9).abs() < 1e-15);
        }
    }

    #[test]
    fn log_linear_needs_early_stop() {
        assert!(matches!(
            build_schedule(Recipe::LogLinear, 3.0, 4, 0.0),
            Err(Error::Config(_))
        ));
        let s = build_schedule(Recipe::LogLinear, 4.0, 2, 1.0).unwrap();
        assert!((s.grid()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        assert!(build_schedule(Recipe::Constant, 1.0, 0, 0.0).is_err());
        assert!(build_schedule(Recipe::Constant, 1.0, 3, 1.0).is_err());
        assert!(build_schedule(Recipe::Constant, 1.0, 3, -0.5).is_err());
        let g = Recipe::Explicit { grid: vec![0.0, 0.7, 0.6, 1.0] };
        assert!(build_schedule(g, 1.0, 3, 0.0).is_err());
    }

    #[test]
    fn exp_then_const_warnings() {
        let s = build_schedule(Recipe::exp_then_const(0.95), 5.0, 200, 1e-3).unwrap();
        assert!(s.warnings().iter().any(|w| w.contains("0.9")));
        let s = build_schedule(Recipe::exp_then_const(0.1), 5.0, 8, 1e-3).unwrap();
        assert!(s.warnings().iter().any(|w| w.contains("exceeds")));
        let s = build_schedule(Recipe::exp_then_const(0.5), 5.0, 64, 1e-3).unwrap();
        assert!(s.warnings().is_empty(), "{:?}", s.warnings());
    }

    #[test]
    fn exp_then_const_without_early_stop_ends_at_horizon() {
        let s = build_schedule(Recipe::exp_then_const(0.5), 6.0, 32, 0.0).unwrap();
        assert_eq!(*s.grid().last().unwrap(), 6.0);
        assert!((s.grid()[31] - (6.0 - DEFAULT_PRE_FINAL_GAP)).abs() < 1e-12);
    }
}
