//! Reference stoppability: a closed form for the braking plant and a dense
//! Monte-Carlo grid for any environment.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvParams, EnvSpec, State};
use crate::error::{PrismError, Result};
use crate::monitor::{decide, Decision, Monitor};
use crate::rollout::{label_trigger, randomize_env, DrConfig};
use crate::seed::{SeedTree, Stream};

/// Closed-form stoppability of a braking state under the full-brake fallback.
///
/// Ignores drag and treats the stop as continuous-time constant deceleration
/// at the fallback's effective rate.
pub fn analytic_stoppable_braking(x: &State, spec: &EnvSpec, params: &EnvParams, t_max: usize) -> Result<bool> {
    let EnvSpec::Braking(b) = spec else {
        return Err(PrismError::WrongEnvironment(format!("analytic oracle needs braking, got {}", spec.name())));
    };
    spec.validate_state(x)?;
    if !spec.is_safe(x) {
        return Ok(false);
    }
    if spec.is_terminal(x) {
        return Ok(true);
    }
    let (p, v) = (x[0], x[1]);
    let a = b.effective_decel(params);
    if a <= 0.0 {
        return Ok(false);
    }
    let in_time = v.abs() / a <= t_max as f64 * params.dt;
    if v < 0.0 {
        return Ok(in_time);
    }
    Ok(in_time && p + v * v / (2.0 * a) < b.obstacle)
}

/// Cell-centered sampling of one coordinate: `n` cells spanning `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        assert!(hi > lo && n >= 1, "grid axis needs lo < hi and n >= 1");
        Self { lo, hi, n }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }
}

/// Axes covering `spec`'s declared state box at `resolution` cells per axis.
pub fn default_axes(spec: &EnvSpec, resolution: usize) -> Vec<GridAxis> {
    spec.state_bounds().into_iter().map(|(lo, hi)| GridAxis::new(lo, hi, resolution)).collect()
}

/// Row-major cell indexing with the last axis varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
}

impl Grid {
    pub fn new(axes: Vec<GridAxis>) -> Self {
        assert!(!axes.is_empty());
        Self { axes }
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, mut cell: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        for (d, axis) in self.axes.iter().enumerate().rev() {
            idx[d] = cell % axis.n;
            cell /= axis.n;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.n + i)
    }

    pub fn center(&self, cell: usize) -> State {
        let idx = self.multi_index(cell);
        State::from(idx.iter().zip(&self.axes).map(|(&i, a)| a.center(i)).collect::<Vec<_>>())
    }

    pub fn centers(&self) -> Vec<State> {
        (0..self.len()).map(|c| self.center(c)).collect()
    }
}

/// Monte-Carlo stoppability per grid cell, thresholded at `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledGrid {
    pub grid: Grid,
    pub alpha: f64,
    pub values: Vec<f64>,
}

impl LabeledGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn stoppable(&self, cell: usize) -> bool {
        self.values[cell] >= self.alpha
    }

    pub fn n_stoppable(&self) -> usize {
        (0..self.len()).filter(|&c| self.stoppable(c)).count()
    }

    /// One row per cell: coordinates, value, label.
    pub fn write_csv<W: Write>(&self, mut out: W, names: &[&str]) -> Result<()> {
        assert_eq!(names.len(), self.grid.axes.len());
        writeln!(out, "{},value,label", names.join(","))?;
        for c in 0..self.len() {
            let x = self.grid.center(c);
            let coords: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(out, "{},{:.6},{}", coords.join(","), self.values[c], u8::from(self.stoppable(c)))?;
        }
        Ok(())
    }
}

/// Settings for [`grid_oracle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Fallback rollouts per cell.
    pub m: usize,
    pub t_max: usize,
    pub alpha: f64,
    /// Plant perturbation drawn independently for every rollout.
    pub dr: DrConfig,
}

/// Estimate the stoppability value at every cell center of `grid`.
///
/// Cell `c` draws from its own stream, so the result does not depend on
/// thread scheduling.
pub fn grid_oracle(spec: &EnvSpec, base: &EnvParams, grid: &Grid, cfg: &OracleConfig, seeds: &SeedTree) -> LabeledGrid {
    assert!(cfg.m >= 1, "need at least one rollout per cell");
    assert_eq!(grid.axes.len(), spec.dimension(), "grid dimension must match the environment");
    let values = (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let x = grid.center(c);
            let mut rng = seeds.rng(Stream::Grid, &[c as u64]);
            let hits = (0..cfg.m)
                .filter(|_| {
                    let params = randomize_env(base, &cfg.dr, &mut rng);
                    label_trigger(&x, spec, &params, cfg.t_max, &mut rng).is_safe()
                })
                .count();
            hits as f64 / cfg.m as f64
        })
        .collect();
    LabeledGrid { grid: grid.clone(), alpha: cfg.alpha, values }
}

/// Confusion-derived rates (fractions in [0, 1]) of predictions against a grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub overall_acc: f64,
    pub safe_acc: f64,
    pub unsafe_acc: f64,
    /// Fraction of oracle-unstoppable cells predicted stoppable.
    pub false_safe_rate: f64,
    pub n_safe: usize,
    pub n_unsafe: usize,
}

/// Score per-cell predicted values at `alpha` against the grid's labels.
pub fn agreement_from_values(predicted: &[f64], grid: &LabeledGrid, alpha: f64) -> Agreement {
    assert_eq!(predicted.len(), grid.len());
    let (mut n_safe, mut n_unsafe, mut safe_hit, mut unsafe_hit) = (0usize, 0usize, 0usize, 0usize);
    for (c, &v) in predicted.iter().enumerate() {
        let said_safe = decide(v, alpha) == Decision::Stoppable;
        if grid.stoppable(c) {
            n_safe += 1;
            safe_hit += usize::from(said_safe);
        } else {
            n_unsafe += 1;
            unsafe_hit += usize::from(!said_safe);
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Agreement {
        overall_acc: frac(safe_hit + unsafe_hit, n_safe + n_unsafe),
        safe_acc: frac(safe_hit, n_safe),
        unsafe_acc: frac(unsafe_hit, n_unsafe),
        false_safe_rate: frac(n_unsafe - unsafe_hit, n_unsafe),
        n_safe,
        n_unsafe,
    }
}

/// Monitor outputs at every cell center.
pub fn monitor_values(monitor: &Monitor, grid: &Grid) -> Vec<f64> {
    (0..grid.len()).into_par_iter().map(|c| monitor.value(&grid.center(c))).collect()
}

pub fn agreement(monitor: &Monitor, grid: &LabeledGrid, alpha: f64) -> Agreement {
    agreement_from_values(&monitor_values(monitor, &grid.grid), grid, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn braking() -> (EnvSpec, EnvParams) {
        (EnvSpec::braking(), EnvParams::deterministic())
    }

    #[test]
    fn analytic_examples() {
        let (env, p) = braking();
        assert!(analytic_stoppable_braking(&State::from([5.0, 2.0]), &env, &p, 500).unwrap());
        assert!(!analytic_stoppable_braking(&State::from([8.5, 2.0]), &env, &p, 500).unwrap());
        assert!(analytic_stoppable_braking(&State::from([8.99, 0.0]), &env, &p, 500).unwrap());
        assert!(!analytic_stoppable_braking(&State::from([9.0, 0.0]), &env, &p, 500).unwrap());
        // Too slow to stop within the budget.
        assert!(!analytic_stoppable_braking(&State::from([0.0, 2.0]), &env, &p, 10).unwrap());
        assert!(analytic_stoppable_braking(&State::from([8.9, -0.4]), &env, &p, 500).unwrap());
    }

    #[test]
    fn analytic_rejects_cartpole() {
        let env = EnvSpec::cartpole();
        let r = analytic_stoppable_braking(&State::from([0.0; 4]), &env, &EnvParams::deterministic(), 500);
        assert!(matches!(r, Err(PrismError::WrongEnvironment(_))));
    }

    #[test]
    fn grid_indexing_round_trips() {
        let g = Grid::new(vec![GridAxis::new(0.0, 1.0, 3), GridAxis::new(-1.0, 1.0, 4), GridAxis::new(0.0, 2.0, 2)]);
        assert_eq!(g.len(), 24);
        for c in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(c)), c);
        }
        assert_eq!(g.multi_index(1), vec![0, 0, 1]);
        let x = g.center(0);
        assert!((x[0] - 1.0 / 6.0).abs() < 1e-12 && (x[1] + 0.75).abs() < 1e-12 && (x[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn terminal_box_is_all_ones() {
        let (env, p) = braking();
        let g = Grid::new(vec![GridAxis::new(1.0, 2.0, 2), GridAxis::new(-0.04, 0.04, 2)]);
        let cfg = OracleConfig { m: 3, t_max: 500, alpha: 0.5, dr: DrConfig::none() };
        let lg = grid_oracle(&env, &p.with_sigma(0.05), &g, &cfg, &SeedTree::new(0));
        assert!(lg.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_and_lookup_predictors() {
        let (env, p) = braking();
        let g = Grid::new(default_axes(&env, 20));
        let cfg = OracleConfig { m: 1, t_max: 500, alpha: 0.5, dr: DrConfig::none() };
        let lg = grid_oracle(&env, &p, &g, &cfg, &SeedTree::new(0));
        assert!(lg.n_stoppable() > 0 && lg.n_stoppable() < lg.len());

        let a = agreement_from_values(&vec![1.0; lg.len()], &lg, 0.5);
        assert_eq!((a.safe_acc, a.unsafe_acc, a.false_safe_rate), (1.0, 0.0, 1.0));

        let a = agreement_from_values(&lg.values, &lg, 0.5);
        assert_eq!((a.overall_acc, a.safe_acc, a.unsafe_acc, a.false_safe_rate), (1.0, 1.0, 1.0, 0.0));

        let mut m = Monitor::zeros(&env.state_bounds(), &[4]);
        m.zero_output_layer();
        let a = agreement(&m, &lg, 0.5);
        let total = a.safe_acc * a.n_safe as f64 + a.unsafe_acc * a.n_unsafe as f64;
        assert!((total - a.overall_acc * lg.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn grid_oracle_is_deterministic() {
        let env = EnvSpec::braking();
        let p = env.default_params();
        let g = Grid::new(default_axes(&env, 12));
        let cfg = OracleConfig { m: 4, t_max: 500, alpha: 0.5, dr: DrConfig::none() };
        let a = grid_oracle(&env, &p, &g, &cfg, &SeedTree::new(9));
        let b = grid_oracle(&env, &p, &g, &cfg, &SeedTree::new(9));
        assert_eq!(a, b);
        assert!(a.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
