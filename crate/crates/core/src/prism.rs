//! Iterative importance-sampled refinement of a stoppability monitor.
//!
//! Each round calibrates a residual threshold on a frozen validation set,
//! turns it into a band of uncertain monitor outputs, and spends fine-stride
//! labels on the parts of fresh nominal trajectories whose predictions fall
//! inside that band.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_weights, stride_sample, uniform_indices, ClassWeights, Dataset, StrideConfig, TriggerSample};
use crate::env::{EnvParams, EnvSpec, State};
use crate::error::{PrismError, Result};
use crate::monitor::{bce, decide, train, Decision, Monitor, TrainHyper, TrainReport};
use crate::rollout::{generate_trajectory, label_trigger, DrConfig, Trajectory};
use crate::seed::{SeedTree, Stream};

/// Validation trajectory ids start here so they never collide with training ids.
pub const VALIDATION_ID_BASE: u64 = 1 << 32;

/// Additional collection rounds allowed when the initial buffer has one class.
pub const MAX_WIDEN_ATTEMPTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrismConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub n0: usize,
    pub n_i: usize,
    pub k_iters: usize,
    pub n_val: usize,
    pub strides: StrideConfig,
    /// Fallback rollout budget for labeling, in steps.
    pub t_max: usize,
    /// Nominal rollout length; `None` uses the environment default.
    pub horizon: Option<usize>,
    pub dr: DrConfig,
    /// Band used when the calibrated threshold exceeds ln 2.
    pub fallback_band: (f64, f64),
    pub train: TrainHyper,
    pub seed: u64,
}

impl Default for PrismConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            delta: 0.1,
            n0: 3,
            n_i: 3,
            k_iters: 10,
            n_val: 5,
            strides: StrideConfig::default(),
            t_max: 500,
            horizon: None,
            dr: DrConfig::none(),
            fallback_band: (0.35, 0.65),
            train: TrainHyper::default(),
            seed: 0,
        }
    }
}

impl PrismConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PrismError::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must be in [0, 1), got {}", self.beta));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must be in (0, 1), got {}", self.delta));
        }
        for (name, v) in [("n0", self.n0), ("n_i", self.n_i), ("k_iters", self.k_iters), ("n_val", self.n_val)] {
            // k_iters = 0 is allowed: it degenerates to a single training round.
            if v == 0 && name != "k_iters" {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.t_max == 0 || self.horizon == Some(0) {
            return bad("t_max and horizon must be >= 1".into());
        }
        let (lo, hi) = self.fallback_band;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("fallback band must satisfy 0 < lo <= hi < 1, got ({lo}, {hi})"));
        }
        self.strides.validate()?;
        self.dr.validate()?;
        self.train.validate()
    }

    pub fn horizon_for(&self, spec: &EnvSpec) -> usize {
        self.horizon.unwrap_or_else(|| spec.default_horizon())
    }

    /// Number of region-adaptive trajectories out of each batch of `n_i`.
    pub fn adaptive_count(&self) -> usize {
        (self.beta * self.n_i as f64).round() as usize
    }
}

/// Probabilities whose self-consistent loss reaches the calibrated threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBand {
    pub p_lo: f64,
    pub p_hi: f64,
    /// True when the calibrated band was empty and the fallback was used.
    pub fallback: bool,
}

impl UncertaintyBand {
    pub fn contains(&self, p: f64) -> bool {
        p >= self.p_lo && p <= self.p_hi
    }
}

/// Per-sample weighted validation residuals, in dataset order.
pub fn residuals(monitor: &Monitor, d_val: &Dataset, weights: &ClassWeights) -> Vec<f64> {
    d_val
        .iter()
        .map(|s| weights.for_label(s.label) * bce(monitor.value(&s.state), s.label.as_f64()))
        .collect()
}

/// Conformal empirical quantile: the `ceil(level * n)`-th smallest value.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty list");
    assert!(level > 0.0 && level < 1.0, "quantile level must be in (0, 1)");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // The small slack keeps exact products such as 0.9 * 10 from rounding up.
    let rank = ((level * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// `{p : -ln max(p, 1 - p) >= q}`, or `fallback` when that set is empty.
pub fn uncertainty_band(q: f64, fallback: (f64, f64)) -> UncertaintyBand {
    assert!(q >= 0.0, "residual threshold must be non-negative");
    if q > std::f64::consts::LN_2 {
        return UncertaintyBand { p_lo: fallback.0, p_hi: fallback.1, fallback: true };
    }
    let hi = (-q).exp();
    let eps = crate::monitor::PROB_EPS;
    UncertaintyBand { p_lo: (1.0 - hi).clamp(eps, 0.5), p_hi: hi.clamp(0.5, 1.0 - eps), fallback: false }
}

/// One row of the per-iteration history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub total_data: usize,
    /// Percent of buffer samples labeled unsafe.
    pub unsafe_ratio: f64,
    pub num_traj: usize,
    /// Validation accuracy on safe samples, percent.
    pub safe_acc: f64,
    /// Validation accuracy on unsafe samples, percent.
    pub unsafe_acc: f64,
    /// Residual threshold used to pick this round's samples (absent in round 0).
    pub q: Option<f64>,
    pub band: Option<UncertaintyBand>,
    pub new_samples: usize,
    /// In-band fraction of the states sampled on region-adaptive trajectories.
    pub adaptive_in_band: Option<f64>,
    /// In-band fraction the same trajectories would give under pure coarse striding.
    pub coarse_in_band: Option<f64>,
    pub final_train_loss: f64,
}

/// Everything carried from one round to the next.
#[derive(Clone, Debug)]
pub struct PrismState {
    pub iteration: usize,
    pub monitor: Monitor,
    pub buffer: Dataset,
    pub validation: Dataset,
    pub q: Option<f64>,
    pub history: Vec<IterationMetrics>,
    pub next_traj_id: u64,
    pub num_traj: usize,
    pub last_report: TrainReport,
}

/// Plant and seeding shared by all rounds of one run.
#[derive(Clone, Debug)]
pub struct RunContext<'a> {
    pub spec: &'a EnvSpec,
    pub base: EnvParams,
    pub cfg: &'a PrismConfig,
    pub seeds: SeedTree,
}

impl<'a> RunContext<'a> {
    pub fn new(spec: &'a EnvSpec, base: EnvParams, cfg: &'a PrismConfig) -> Self {
        Self { spec, base, cfg, seeds: SeedTree::new(cfg.seed) }
    }

    pub fn trajectories(&self, ids: std::ops::Range<u64>) -> Vec<Trajectory> {
        let horizon = self.cfg.horizon_for(self.spec);
        ids.into_par_iter()
            .map(|id| generate_trajectory(id, self.spec, &self.base, &self.cfg.dr, horizon, &self.seeds))
            .collect()
    }

    /// Label the chosen indices of each trajectory, in input order.
    pub fn label(&self, picks: &[(&Trajectory, Vec<usize>)], iteration: usize) -> Vec<TriggerSample> {
        let jobs: Vec<(&Trajectory, usize)> =
            picks.iter().flat_map(|(traj, idx)| idx.iter().map(move |&t| (*traj, t))).collect();
        jobs.into_par_iter()
            .map(|(traj, t)| {
                let mut rng = self.seeds.rng(Stream::Label, &[traj.id, t as u64]);
                let state = traj.states[t].clone();
                let label = label_trigger(&state, self.spec, &traj.env_params, self.cfg.t_max, &mut rng);
                TriggerSample { traj_id: traj.id, time_index: t, state, label, iteration, env_params: traj.env_params }
            })
            .collect()
    }

    /// Coarse-stride samples from trajectories `ids`.
    pub fn coarse_samples(&self, ids: std::ops::Range<u64>, iteration: usize) -> Vec<TriggerSample> {
        let trajs = self.trajectories(ids);
        let picks: Vec<_> = trajs.iter().map(|t| (t, uniform_indices(t.len(), self.cfg.strides.coarse))).collect();
        self.label(&picks, iteration)
    }

    pub fn validation_set(&self) -> Result<Dataset> {
        let ids = VALIDATION_ID_BASE..VALIDATION_ID_BASE + self.cfg.n_val as u64;
        let trajs = self.trajectories(ids);
        let picks: Vec<_> = trajs.iter().map(|t| (t, uniform_indices(t.len(), self.cfg.strides.fine))).collect();
        Dataset::from_samples(self.label(&picks, 0))
    }

    /// Train round `k`'s monitor on `d`, from fresh init unless warm-starting.
    pub fn fit(&self, d: &Dataset, k: usize, previous: Option<&Monitor>) -> Result<(Monitor, TrainReport)> {
        let hyper = TrainHyper { seed: self.seeds.seed(Stream::Shuffle, &[k as u64]), ..self.cfg.train.clone() };
        let init = match previous {
            Some(m) if self.cfg.train.warm_start => m.clone(),
            _ => Monitor::for_env(self.spec, &hyper.hidden, &mut self.seeds.rng(Stream::Init, &[k as u64])),
        };
        train(&init, d, &hyper)
    }
}

/// Percent accuracy on each class at threshold `alpha`: (safe, unsafe).
pub fn class_accuracies(monitor: &Monitor, d: &Dataset, alpha: f64) -> (f64, f64) {
    let (mut safe_hit, mut unsafe_hit) = (0usize, 0usize);
    for s in d.iter() {
        let stoppable = decide(monitor.value(&s.state), alpha) == Decision::Stoppable;
        if s.label.is_safe() && stoppable {
            safe_hit += 1;
        } else if !s.label.is_safe() && !stoppable {
            unsafe_hit += 1;
        }
    }
    let pct = |hit: usize, n: usize| if n == 0 { f64::NAN } else { 100.0 * hit as f64 / n as f64 };
    (pct(safe_hit, d.n_safe()), pct(unsafe_hit, d.n_unsafe()))
}

/// Initial collection and training: the round-0 state.
pub fn initialize(ctx: &RunContext) -> Result<PrismState> {
    ctx.cfg.validate()?;
    ctx.base.validate()?;
    let cfg = ctx.cfg;
    let validation = ctx.validation_set()?;
    let mut next_id = cfg.n0 as u64;
    let mut buffer = Dataset::from_samples(ctx.coarse_samples(0..next_id, 0))?;
    let mut attempts = 0;
    while class_weights(&buffer).is_err() {
        if attempts == MAX_WIDEN_ATTEMPTS {
            return Err(PrismError::DegenerateDataset(format!(
                "initial buffer still single-class after {attempts} widening rounds ({} safe / {} unsafe)",
                buffer.n_safe(),
                buffer.n_unsafe()
            )));
        }
        let extra = Dataset::from_samples(ctx.coarse_samples(next_id..next_id + cfg.n_i as u64, 0))?;
        buffer = buffer.merge(&extra)?;
        next_id += cfg.n_i as u64;
        attempts += 1;
    }
    let (monitor, report) = ctx.fit(&buffer, 0, None)?;
    let (safe_acc, unsafe_acc) = class_accuracies(&monitor, &validation, cfg.alpha);
    let metrics = IterationMetrics {
        iter: 0,
        total_data: buffer.len(),
        unsafe_ratio: 100.0 * buffer.unsafe_ratio(),
        num_traj: next_id as usize,
        safe_acc,
        unsafe_acc,
        q: None,
        band: None,
        new_samples: buffer.len(),
        adaptive_in_band: None,
        coarse_in_band: None,
        final_train_loss: *report.epoch_losses.last().expect("at least one epoch"),
    };
    Ok(PrismState {
        iteration: 0,
        monitor,
        buffer,
        validation,
        q: None,
        history: vec![metrics],
        next_traj_id: next_id,
        num_traj: next_id as usize,
        last_report: report,
    })
}

/// Index sets chosen for one batch of trajectories under the current monitor.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingPlan {
    pub indices: Vec<Vec<usize>>,
    pub adaptive_in_band: Option<f64>,
    pub coarse_in_band: Option<f64>,
}

/// The mixture: the first `round(beta * n)` trajectories get region-adaptive
/// strides, the rest pure coarse stride.
pub fn plan_sampling(
    monitor: &Monitor,
    band: &UncertaintyBand,
    trajs: &[Trajectory],
    n_adaptive: usize,
    strides: &StrideConfig,
) -> SamplingPlan {
    let in_band = |x: &State| band.contains(monitor.value(x));
    let mut indices = Vec::with_capacity(trajs.len());
    let (mut ad_hit, mut ad_n, mut co_hit, mut co_n) = (0usize, 0usize, 0usize, 0usize);
    for (j, traj) in trajs.iter().enumerate() {
        if j < n_adaptive {
            let idx = stride_sample(traj, strides, in_band);
            ad_hit += idx.iter().filter(|&&t| in_band(&traj.states[t])).count();
            ad_n += idx.len();
            let coarse = uniform_indices(traj.len(), strides.coarse);
            co_hit += coarse.iter().filter(|&&t| in_band(&traj.states[t])).count();
            co_n += coarse.len();
            indices.push(idx);
        } else {
            indices.push(uniform_indices(traj.len(), strides.coarse));
        }
    }
    let frac = |hit: usize, n: usize| (n > 0).then(|| hit as f64 / n as f64);
    SamplingPlan { indices, adaptive_in_band: frac(ad_hit, ad_n), coarse_in_band: frac(co_hit, co_n) }
}

/// One refinement round: calibrate, sample, label, merge, retrain.
pub fn refine_iteration(ctx: &RunContext, s: PrismState) -> Result<PrismState> {
    let cfg = ctx.cfg;
    let k = s.iteration + 1;
    let ids = s.next_traj_id..s.next_traj_id + cfg.n_i as u64;
    let trajs = ctx.trajectories(ids.clone());

    let weights = class_weights(&s.buffer)?;
    let q = quantile(&residuals(&s.monitor, &s.validation, &weights), 1.0 - cfg.delta);
    let band = uncertainty_band(q, cfg.fallback_band);
    let plan = plan_sampling(&s.monitor, &band, &trajs, cfg.adaptive_count(), &cfg.strides);

    let picks: Vec<_> = trajs.iter().zip(plan.indices).collect();
    let fresh = Dataset::from_samples(ctx.label(&picks, k))?;
    let buffer = s.buffer.merge(&fresh)?;
    let val_ids = s.validation.trajectory_ids();
    if buffer.trajectory_ids().iter().any(|id| val_ids.contains(id)) {
        return Err(PrismError::InvalidConfig("validation trajectory leaked into the training buffer".into()));
    }

    let (monitor, report) = ctx.fit(&buffer, k, Some(&s.monitor))?;
    let (safe_acc, unsafe_acc) = class_accuracies(&monitor, &s.validation, cfg.alpha);
    let num_traj = s.num_traj + trajs.len();
    let mut history = s.history;
    history.push(IterationMetrics {
        iter: k,
        total_data: buffer.len(),
        unsafe_ratio: 100.0 * buffer.unsafe_ratio(),
        num_traj,
        safe_acc,
        unsafe_acc,
        q: Some(q),
        band: Some(band),
        new_samples: fresh.len(),
        adaptive_in_band: plan.adaptive_in_band,
        coarse_in_band: plan.coarse_in_band,
        final_train_loss: *report.epoch_losses.last().expect("at least one epoch"),
    });
    Ok(PrismState {
        iteration: k,
        monitor,
        buffer,
        validation: s.validation,
        q: Some(q),
        history,
        next_traj_id: ids.end,
        num_traj,
        last_report: report,
    })
}

/// Run the full loop, calling `observe` after round 0 and after every refinement.
pub fn run_prism_with<F>(spec: &EnvSpec, base: &EnvParams, cfg: &PrismConfig, mut observe: F) -> Result<PrismState>
where
    F: FnMut(&PrismState) -> Result<()>,
{
    let ctx = RunContext::new(spec, *base, cfg);
    let mut state = initialize(&ctx)?;
    observe(&state)?;
    for _ in 0..cfg.k_iters {
        state = refine_iteration(&ctx, state)?;
        observe(&state)?;
    }
    Ok(state)
}

pub fn run_prism(spec: &EnvSpec, base: &EnvParams, cfg: &PrismConfig) -> Result<PrismState> {
    run_prism_with(spec, base, cfg, |_| Ok(()))
}

/// Per-iteration table with the columns `iter,total_data,unsafe_ratio,num_traj,safe_acc,unsafe_acc`.
pub fn write_history_csv(path: &Path, history: &[IterationMetrics]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "iter,total_data,unsafe_ratio,num_traj,safe_acc,unsafe_acc")?;
    for m in history {
        writeln!(
            out,
            "{},{},{:.4},{},{:.4},{:.4}",
            m.iter, m.total_data, m.unsafe_ratio, m.num_traj, m.safe_acc, m.unsafe_acc
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Calibration diagnostics: threshold, band and densification per round.
pub fn write_calibration_csv(path: &Path, history: &[IterationMetrics]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "iter,q,band_lo,band_hi,fallback_band,new_samples,adaptive_in_band,coarse_in_band,final_train_loss")?;
    for m in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6}",
            m.iter,
            opt(m.q),
            opt(m.band.map(|b| b.p_lo)),
            opt(m.band.map(|b| b.p_hi)),
            m.band.map(|b| b.fallback.to_string()).unwrap_or_default(),
            m.new_samples,
            opt(m.adaptive_in_band),
            opt(m.coarse_in_band),
            m.final_train_loss
        )?;
    }
    out.flush()?;
    Ok(())
}
