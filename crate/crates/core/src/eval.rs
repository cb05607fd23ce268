//! Experiment harness: uniform baselines, threshold sweeps, randomization and
//! stride ablations, per-step score traces and value-field exports.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{uniform_indices, Dataset, TriggerSample};
use crate::env::{EnvParams, EnvSpec, State};
use crate::error::{PrismError, Result};
use crate::monitor::Monitor;
use crate::oracle::{agreement, agreement_from_values, grid_oracle, monitor_values, Agreement, Grid, GridAxis, LabeledGrid, OracleConfig};
use crate::prism::{PrismConfig, RunContext};
use crate::rollout::{label_trigger, DrConfig, Label, Trajectory};
use crate::seed::{SeedTree, Stream};

/// Hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of any serializable configuration.
pub fn fingerprint<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

/// One result row. Rates are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub experiment: String,
    /// Variant within the experiment, e.g. `alpha=0.47`.
    pub variant: String,
    pub fingerprint: String,
    pub total_data: usize,
    pub unsafe_ratio: f64,
    pub num_traj: usize,
    pub safe_acc: f64,
    pub unsafe_acc: f64,
    pub false_safe_rate: f64,
    /// Kept out of the CSV so tables stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

impl MetricsRow {
    pub fn new(experiment: &str, variant: String, fingerprint: &str, data: Option<(&Dataset, usize)>, a: &Agreement) -> Self {
        let (total_data, unsafe_ratio, num_traj) = match data {
            Some((d, n)) => (d.len(), 100.0 * d.unsafe_ratio(), n),
            None => (0, 0.0, 0),
        };
        Self {
            experiment: experiment.to_string(),
            variant,
            fingerprint: fingerprint.to_string(),
            total_data,
            unsafe_ratio,
            num_traj,
            safe_acc: 100.0 * a.safe_acc,
            unsafe_acc: 100.0 * a.unsafe_acc,
            false_safe_rate: 100.0 * a.false_safe_rate,
            wall_time: 0.0,
        }
    }
}

pub const ROW_HEADER: &str = "experiment,variant,fingerprint,total_data,unsafe_ratio,num_traj,safe_acc,unsafe_acc,false_safe_rate";

pub fn write_rows_csv<W: Write>(mut out: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{ROW_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.4},{},{:.4},{:.4},{:.4}",
            r.experiment, r.variant, r.fingerprint, r.total_data, r.unsafe_ratio, r.num_traj, r.safe_acc, r.unsafe_acc, r.false_safe_rate
        )?;
    }
    Ok(())
}

/// How much data the uniform baseline collects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Exactly `num_traj` trajectories at `stride`.
    Trajectories { num_traj: usize, stride: usize },
    /// Trajectories are added until at least `target` samples are collected.
    Samples { target: usize, stride: usize },
}

#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub monitor: Monitor,
    pub dataset: Dataset,
    pub num_traj: usize,
}

/// Collect uniform-stride data under `budget` and train once.
///
/// Trajectories, labels and the initialization are drawn exactly as in the
/// first round of the iterative pipeline with the same config.
pub fn baseline_uniform(spec: &EnvSpec, base: &EnvParams, cfg: &PrismConfig, budget: Budget) -> Result<BaselineRun> {
    cfg.validate()?;
    let ctx = RunContext::new(spec, *base, cfg);
    let (trajs, stride) = match budget {
        Budget::Trajectories { num_traj, stride } => (ctx.trajectories(0..num_traj as u64), stride),
        Budget::Samples { target, stride } => {
            let mut trajs = Vec::new();
            let mut count = 0;
            let batch = cfg.n_i.max(1) as u64;
            while count < target {
                let start = trajs.len() as u64;
                for t in ctx.trajectories(start..start + batch) {
                    if count >= target {
                        break;
                    }
                    count += uniform_indices(t.len(), stride).len();
                    trajs.push(t);
                }
            }
            if (count as f64) > 1.05 * target as f64 {
                return Err(PrismError::InsufficientSupport(format!(
                    "cannot match {target} samples within 5% at stride {stride} (got {count})"
                )));
            }
            (trajs, stride)
        }
    };
    if stride == 0 {
        return Err(PrismError::InvalidConfig("stride must be >= 1".into()));
    }
    let picks: Vec<_> = trajs.iter().map(|t| (t, uniform_indices(t.len(), stride))).collect();
    let dataset = Dataset::from_samples(ctx.label(&picks, 0))?;
    let (monitor, _) = ctx.fit(&dataset, 0, None)?;
    Ok(BaselineRun { monitor, dataset, num_traj: trajs.len() })
}

/// One row of a threshold sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub agreement: Agreement,
}

/// Score `monitor` against `grid` at each threshold; grid labels stay fixed.
pub fn alpha_sweep(monitor: &Monitor, grid: &LabeledGrid, alphas: &[f64]) -> Vec<SweepRow> {
    let values = monitor_values(monitor, &grid.grid);
    alphas.iter().map(|&alpha| SweepRow { alpha, agreement: agreement_from_values(&values, grid, alpha) }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrRow {
    pub dr: DrConfig,
    pub agreement: Agreement,
    /// Cells whose oracle label differs from the unperturbed grid.
    pub flipped_cells: usize,
}

/// Zero-shot scoring of `monitor` against grids relabeled under each
/// perturbation. All grids share the cell streams of `seeds`.
pub fn dr_ablation(
    monitor: &Monitor,
    spec: &EnvSpec,
    base: &EnvParams,
    grid: &Grid,
    oracle: &OracleConfig,
    dr_list: &[DrConfig],
    seeds: &SeedTree,
) -> Vec<DrRow> {
    let values = monitor_values(monitor, grid);
    let reference = grid_oracle(spec, base, grid, &OracleConfig { dr: DrConfig::none(), ..oracle.clone() }, seeds);
    dr_list
        .iter()
        .map(|dr| {
            let lg = grid_oracle(spec, base, grid, &OracleConfig { dr: dr.clone(), ..oracle.clone() }, seeds);
            let flipped_cells = (0..lg.len()).filter(|&c| lg.stoppable(c) != reference.stoppable(c)).count();
            DrRow { dr: dr.clone(), agreement: agreement_from_values(&values, &lg, oracle.alpha), flipped_cells }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrideRow {
    pub stride: usize,
    /// Labeled samples before class balancing.
    pub volume: usize,
    /// Samples actually trained on.
    pub balanced: usize,
    pub agreement: Agreement,
}

/// Keep every minority sample and an equal-size seeded subset of the majority.
pub fn balance_classes(d: &Dataset, seeds: &SeedTree, key: u64) -> Result<Dataset> {
    let (safe, unsafe_): (Vec<&TriggerSample>, Vec<&TriggerSample>) = d.iter().partition(|s| s.label.is_safe());
    let (minority, majority) = if safe.len() <= unsafe_.len() { (safe, unsafe_) } else { (unsafe_, safe) };
    if minority.is_empty() {
        return Err(PrismError::DegenerateDataset("cannot balance a single-class dataset".into()));
    }
    let mut rng = seeds.rng(Stream::Subsample, &[key]);
    let mut keep: Vec<usize> = sample(&mut rng, majority.len(), minority.len()).into_vec();
    keep.sort_unstable();
    let mut out: Vec<TriggerSample> = minority.into_iter().cloned().collect();
    out.extend(keep.into_iter().map(|i| majority[i].clone()));
    Dataset::from_samples(out)
}

/// Uniform-stride training at each stride over one fixed set of `num_traj`
/// trajectories, on class-balanced subsets.
pub fn stride_ablation(
    spec: &EnvSpec,
    base: &EnvParams,
    cfg: &PrismConfig,
    strides: &[usize],
    num_traj: usize,
    test: &LabeledGrid,
) -> Result<Vec<StrideRow>> {
    cfg.validate()?;
    if strides.contains(&0) {
        return Err(PrismError::InvalidConfig("strides must be >= 1".into()));
    }
    let ctx = RunContext::new(spec, *base, cfg);
    let trajs = ctx.trajectories(0..num_traj as u64);
    strides
        .iter()
        .map(|&stride| {
            let picks: Vec<_> = trajs.iter().map(|t| (t, uniform_indices(t.len(), stride))).collect();
            let full = Dataset::from_samples(ctx.label(&picks, 0))?;
            let balanced = balance_classes(&full, &ctx.seeds, stride as u64)?;
            let (monitor, _) = ctx.fit(&balanced, 0, None)?;
            Ok(StrideRow { stride, volume: full.len(), balanced: balanced.len(), agreement: agreement(&monitor, test, cfg.alpha) })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub value: f64,
    pub oracle_value: f64,
    pub oracle_label: Label,
}

/// Monitor output and Monte-Carlo stoppability at every step of `traj`,
/// simulated under the trajectory's own plant parameters.
pub fn score_trace(monitor: &Monitor, traj: &Trajectory, spec: &EnvSpec, oracle: &OracleConfig, seeds: &SeedTree) -> Vec<TracePoint> {
    traj.states
        .par_iter()
        .enumerate()
        .map(|(t, x)| {
            let mut rng = seeds.rng(Stream::Evaluation, &[traj.id, t as u64]);
            let hits = (0..oracle.m).filter(|_| label_trigger(x, spec, &traj.env_params, oracle.t_max, &mut rng).is_safe()).count();
            let oracle_value = hits as f64 / oracle.m as f64;
            let oracle_label = if oracle_value >= oracle.alpha { Label::Safe } else { Label::Unsafe };
            TracePoint { t, value: monitor.value(x), oracle_value, oracle_label }
        })
        .collect()
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TracePoint]) -> Result<()> {
    writeln!(out, "t,value,oracle_value,oracle_label")?;
    for p in trace {
        writeln!(out, "{},{:.6},{:.6},{}", p.t, p.value, p.oracle_value, p.oracle_label.value())?;
    }
    Ok(())
}

/// A 2-D slice through state space; the remaining coordinates come from `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSlice {
    pub x_dim: usize,
    pub x_axis: GridAxis,
    pub y_dim: usize,
    pub y_axis: GridAxis,
    pub base: State,
}

impl GridSlice {
    /// Slice over the first two coordinates of `spec`'s declared box.
    pub fn default_for(spec: &EnvSpec, resolution: usize) -> Self {
        let b = spec.state_bounds();
        Self {
            x_dim: 0,
            x_axis: GridAxis::new(b[0].0, b[0].1, resolution),
            y_dim: 1,
            y_axis: GridAxis::new(b[1].0, b[1].1, resolution),
            base: State::from(vec![0.0; spec.dimension()]),
        }
    }

    pub fn point(&self, i: usize, j: usize) -> State {
        let mut x = self.base.clone();
        x.as_mut_slice()[self.x_dim] = self.x_axis.center(i);
        x.as_mut_slice()[self.y_dim] = self.y_axis.center(j);
        x
    }
}

/// Monitor values over a slice as CSV (`x,y,value`, `y` varying fastest).
pub fn export_value_grid(monitor: &Monitor, slice: &GridSlice, names: (&str, &str)) -> Result<String> {
    if slice.base.dim() != monitor.input_dim() || slice.x_dim >= slice.base.dim() || slice.y_dim >= slice.base.dim() {
        return Err(PrismError::DimensionMismatch { expected: monitor.input_dim(), got: slice.base.dim() });
    }
    let mut out = format!("{},{},value\n", names.0, names.1);
    for i in 0..slice.x_axis.n {
        for j in 0..slice.y_axis.n {
            let x = slice.point(i, j);
            writeln!(out, "{:.6},{:.6},{:.6}", x[slice.x_dim], x[slice.y_dim], monitor.value(&x)).expect("string write");
        }
    }
    Ok(out)
}
