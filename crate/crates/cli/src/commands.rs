//! Experiment dispatch and output bookkeeping.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use prism_core::dataset::{write_summaries, BufferSummary};
use prism_core::eval::{
    alpha_sweep, baseline_uniform, dr_ablation, export_value_grid, fingerprint, score_trace, sha256_hex, stride_ablation,
    write_rows_csv, write_trace_csv, Budget, GridSlice, MetricsRow,
};
use prism_core::oracle::{agreement, default_axes, grid_oracle, Grid, GridAxis, LabeledGrid, OracleConfig};
use prism_core::prism::{run_prism_with, write_calibration_csv, write_history_csv};
use prism_core::rollout::generate_trajectory;
use prism_core::{Agreement, DrConfig, EnvParams, EnvSpec, Monitor, PrismError, PrismState, Result, SeedTree};
use serde_json::json;

use crate::config::{dr_to_string, ExperimentConfig};
use crate::Command;

/// Child seed trees of the root, one per purpose outside the training pipeline.
const ORACLE_BRANCH: u64 = 1;
const EVAL_BRANCH: u64 = 2;

/// Files written by the harness itself and excluded from the content hashes.
const MANIFEST: &str = "manifest.json";
const TIMING: &str = "timing.json";

/// The resolved plan, printed by `--dry-run`.
pub fn plan(cmd: Command, cfg: &ExperimentConfig) -> String {
    let p = &cfg.prism;
    let spec = cfg.spec();
    let horizon = p.horizon_for(&spec);
    let len = horizon + 1;
    let per_coarse = len.div_ceil(p.strides.coarse);
    let per_fine = len.div_ceil(p.strides.fine);
    let adaptive = p.adaptive_count();
    let train_traj = p.n0 + p.k_iters * p.n_i;
    let max_labels = (p.n0 + p.k_iters * (p.n_i - adaptive)) * per_coarse + p.k_iters * adaptive * per_fine;

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "command: {}", cmd.name());
    let _ = writeln!(w, "env: {}  seed: {}", spec.name(), cfg.seed);
    let _ = writeln!(w, "fingerprint: {}", config_fingerprint(cfg));
    let _ = writeln!(w, "output directory: {} (not written in a dry run)", cfg.out.display());
    let trains = matches!(cmd, Command::Run | Command::Baseline) || cfg.eval.monitor.is_none() && cmd != Command::Oracle;
    if cmd == Command::StrideAblation {
        let n = cfg.eval.stride_traj;
        let _ = writeln!(w, "stride ablation: {n} trajectories of up to {len} states");
        for &st in &cfg.eval.strides {
            let _ = writeln!(w, "  stride {st}: {} to {} labels", n, n * len.div_ceil(st));
        }
    } else if trains {
        let _ = writeln!(w, "rounds: 1 initial + {} refinements", p.k_iters);
        let _ = writeln!(
            w,
            "training trajectories: {train_traj} ({} initial, {} per round, {adaptive} region-adaptive); up to {} more if the first buffer has one class",
            p.n0,
            p.n_i,
            prism_core::prism::MAX_WIDEN_ATTEMPTS * p.n_i
        );
        let _ = writeln!(w, "validation trajectories: {} (fine stride {})", p.n_val, p.strides.fine);
        let _ = writeln!(w, "training labels: {train_traj} to {max_labels}, at most {} fallback steps each", p.t_max);
        let _ = writeln!(w, "validation labels: {} to {}", p.n_val, p.n_val * per_fine);
    } else if let Some(m) = &cfg.eval.monitor {
        let _ = writeln!(w, "monitor: {}", m.display());
    }
    if cmd == Command::Baseline {
        match cfg.eval.baseline_traj {
            Some(n) => {
                let _ = writeln!(w, "baseline: {n} trajectories at stride {}, up to {} labels", cfg.eval.baseline_stride, n * len.div_ceil(cfg.eval.baseline_stride));
            }
            None => {
                let _ = writeln!(w, "baseline: stride {}, matched to the iterative run's label count (within 5%)", cfg.eval.baseline_stride);
            }
        }
    }
    let cells = cfg.oracle_resolution().pow(spec.dimension() as u32);
    let grid_rollouts = match cmd {
        Command::Baseline | Command::AlphaSweep | Command::StrideAblation | Command::Oracle => Some(cells * cfg.oracle.m),
        Command::DrAblation => Some(cells * cfg.oracle.m * (cfg.eval.dr_list.len() + 1)),
        _ => None,
    };
    if let Some(r) = grid_rollouts {
        let _ = writeln!(w, "oracle grid: {cells} cells, {r} fallback rollouts");
    }
    match cmd {
        Command::Trace => {
            let _ = writeln!(w, "trace: trajectory {} with {} rollouts per step, up to {} steps", cfg.trace.traj_id, cfg.trace.m, len);
        }
        Command::Grid => {
            let _ = writeln!(w, "value grid: {0}x{0} over coordinates {1} and {2}", cfg.slice.resolution, cfg.slice.x_dim, cfg.slice.y_dim);
        }
        Command::AlphaSweep => {
            let _ = writeln!(w, "thresholds: {:?}", cfg.eval.alphas);
        }
        Command::DrAblation => {
            let list: Vec<String> = cfg.eval.dr_list.iter().map(dr_to_string).collect();
            let _ = writeln!(w, "perturbations: {}", list.join(", "));
        }
        _ => {}
    }
    s
}

pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<()> {
    let started = Instant::now();
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml())?;
    let job = Job::new(cfg);
    match cmd {
        Command::Run => job.run().map(|_| ()),
        Command::Baseline => job.baseline(),
        Command::AlphaSweep => job.alpha_sweep(),
        Command::DrAblation => job.dr_ablation(),
        Command::StrideAblation => job.stride_ablation(),
        Command::Oracle => job.oracle().map(|_| ()),
        Command::Trace => job.trace(),
        Command::Grid => job.grid(),
    }?;
    let elapsed = started.elapsed().as_secs_f64();
    write_manifest(cmd, cfg, &job.fingerprint)?;
    fs::write(cfg.out.join(TIMING), serde_json::to_string_pretty(&json!({ "wall_time_s": elapsed }))? + "\n")?;
    eprintln!("wrote {} in {elapsed:.1}s", cfg.out.display());
    Ok(())
}

fn config_fingerprint(cfg: &ExperimentConfig) -> String {
    fingerprint(&cfg.to_json()).expect("config serializes")
}

fn write_manifest(cmd: Command, cfg: &ExperimentConfig, fp: &str) -> Result<()> {
    let mut files = Vec::new();
    collect_files(&cfg.out, &mut files)?;
    files.sort();
    let mut outputs = serde_json::Map::new();
    for f in files {
        let rel = f.strip_prefix(&cfg.out).expect("walked from the root").to_string_lossy().replace('\\', "/");
        if rel == MANIFEST || rel == TIMING {
            continue;
        }
        outputs.insert(rel, json!(sha256_hex(&fs::read(&f)?)));
    }
    let manifest = json!({
        "command": cmd.name(),
        "env": cfg.env.name(),
        "seed": cfg.seed,
        "fingerprint": fp,
        "config": cfg.to_json(),
        "outputs": outputs,
    });
    fs::write(cfg.out.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn pct(x: f64) -> String {
    format!("{:.4}", 100.0 * x)
}

fn agreement_cols(a: &Agreement) -> String {
    format!("{},{},{},{},{},{}", a.n_safe, a.n_unsafe, pct(a.overall_acc), pct(a.safe_acc), pct(a.unsafe_acc), pct(a.false_safe_rate))
}

const AGREEMENT_HEADER: &str = "n_safe,n_unsafe,overall_acc,safe_acc,unsafe_acc,false_safe_rate";

struct Job<'a> {
    cfg: &'a ExperimentConfig,
    spec: EnvSpec,
    params: EnvParams,
    root: SeedTree,
    fingerprint: String,
}

impl<'a> Job<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { cfg, spec: cfg.spec(), params: cfg.params(), root: SeedTree::new(cfg.seed), fingerprint: config_fingerprint(cfg) }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn metadata(&self, iteration: usize) -> serde_json::Value {
        json!({ "env": self.spec.name(), "seed": self.cfg.seed, "iteration": iteration, "fingerprint": self.fingerprint })
    }

    /// The full iterative pipeline with per-round checkpoints.
    fn run(&self) -> Result<PrismState> {
        let ckpt = self.path("checkpoints");
        fs::create_dir_all(&ckpt)?;
        let mut summaries = Vec::new();
        let state = run_prism_with(&self.spec, &self.params, &self.cfg.prism, |s| {
            s.monitor.save(&ckpt.join(format!("iter_{:03}.bin", s.iteration)), self.metadata(s.iteration))?;
            summaries.push(BufferSummary::of(s.iteration, &s.buffer, s.num_traj));
            let m = s.history.last().expect("every round records metrics");
            eprintln!(
                "iter {:>3}: {} samples, {:.1}% unsafe, validation safe {:.1}% unsafe {:.1}%",
                m.iter, m.total_data, m.unsafe_ratio, m.safe_acc, m.unsafe_acc
            );
            Ok(())
        })?;
        write_history_csv(&self.path("metrics.csv"), &state.history)?;
        write_calibration_csv(&self.path("calibration.csv"), &state.history)?;
        write_summaries(&self.path("buffer_summary.json"), &summaries)?;
        state.buffer.write_jsonl(&self.path("buffer.jsonl"))?;
        state.monitor.save(&self.path("monitor.bin"), self.metadata(state.iteration))?;
        Ok(state)
    }

    /// A checkpoint from `eval.monitor`, or a freshly trained one.
    fn monitor(&self) -> Result<(Monitor, Option<PrismState>)> {
        match &self.cfg.eval.monitor {
            Some(path) => {
                let m = Monitor::load(path)?;
                if m.input_dim() != self.spec.dimension() {
                    return Err(PrismError::DimensionMismatch { expected: self.spec.dimension(), got: m.input_dim() });
                }
                Ok((m, None))
            }
            None => {
                let s = self.run()?;
                Ok((s.monitor.clone(), Some(s)))
            }
        }
    }

    fn oracle_config(&self, m: usize) -> OracleConfig {
        OracleConfig { m, t_max: self.cfg.prism.t_max, alpha: self.cfg.prism.alpha, dr: DrConfig::none() }
    }

    fn grid(&self) -> Result<()> {
        let (monitor, _) = self.monitor()?;
        let bounds = self.spec.state_bounds();
        let sl = &self.cfg.slice;
        let axis = |d: usize| GridAxis::new(bounds[d].0, bounds[d].1, sl.resolution);
        let slice = GridSlice { x_dim: sl.x_dim, x_axis: axis(sl.x_dim), y_dim: sl.y_dim, y_axis: axis(sl.y_dim), ..GridSlice::default_for(&self.spec, sl.resolution) };
        let names = self.spec.coordinate_names();
        let csv = export_value_grid(&monitor, &slice, (names[sl.x_dim], names[sl.y_dim]))?;
        fs::write(self.path("value_grid.csv"), csv)?;
        Ok(())
    }

    fn reference_grid(&self) -> Grid {
        Grid::new(default_axes(&self.spec, self.cfg.oracle_resolution()))
    }

    fn oracle(&self) -> Result<LabeledGrid> {
        let lg = grid_oracle(&self.spec, &self.params, &self.reference_grid(), &self.oracle_config(self.cfg.oracle.m), &self.root.child(ORACLE_BRANCH));
        let mut out = create(&self.path("oracle_grid.csv"))?;
        lg.write_csv(&mut out, self.spec.coordinate_names())?;
        out.flush()?;
        Ok(lg)
    }

    fn baseline(&self) -> Result<()> {
        let state = self.run()?;
        let lg = self.oracle()?;
        let stride = self.cfg.eval.baseline_stride;
        let budget = match self.cfg.eval.baseline_traj {
            Some(num_traj) => Budget::Trajectories { num_traj, stride },
            None => Budget::Samples { target: state.buffer.len(), stride },
        };
        let b = baseline_uniform(&self.spec, &self.params, &self.cfg.prism, budget)?;
        b.monitor.save(&self.path("baseline_monitor.bin"), self.metadata(0))?;
        let alpha = self.cfg.prism.alpha;
        let rows = vec![
            MetricsRow::new("baseline", "prism".into(), &self.fingerprint, Some((&state.buffer, state.num_traj)), &agreement(&state.monitor, &lg, alpha)),
            MetricsRow::new("baseline", format!("uniform_stride={stride}"), &self.fingerprint, Some((&b.dataset, b.num_traj)), &agreement(&b.monitor, &lg, alpha)),
        ];
        let mut out = create(&self.path("baseline.csv"))?;
        write_rows_csv(&mut out, &rows)?;
        out.flush()?;
        Ok(())
    }

    fn alpha_sweep(&self) -> Result<()> {
        let (monitor, state) = self.monitor()?;
        let lg = self.oracle()?;
        let data = state.as_ref().map(|s| (&s.buffer, s.num_traj));
        let rows: Vec<MetricsRow> = alpha_sweep(&monitor, &lg, &self.cfg.eval.alphas)
            .iter()
            .map(|r| MetricsRow::new("alpha_sweep", format!("alpha={}", r.alpha), &self.fingerprint, data, &r.agreement))
            .collect();
        let mut out = create(&self.path("alpha_sweep.csv"))?;
        write_rows_csv(&mut out, &rows)?;
        out.flush()?;
        Ok(())
    }

    fn dr_ablation(&self) -> Result<()> {
        let (monitor, _) = self.monitor()?;
        let rows = dr_ablation(
            &monitor,
            &self.spec,
            &self.params,
            &self.reference_grid(),
            &self.oracle_config(self.cfg.oracle.m),
            &self.cfg.eval.dr_list,
            &self.root.child(ORACLE_BRANCH),
        );
        let mut out = create(&self.path("dr_ablation.csv"))?;
        writeln!(out, "fingerprint,dr,flipped_cells,{AGREEMENT_HEADER}")?;
        for r in &rows {
            writeln!(out, "{},{},{},{}", self.fingerprint, dr_to_string(&r.dr), r.flipped_cells, agreement_cols(&r.agreement))?;
        }
        out.flush()?;
        Ok(())
    }

    fn stride_ablation(&self) -> Result<()> {
        let lg = self.oracle()?;
        let rows = stride_ablation(&self.spec, &self.params, &self.cfg.prism, &self.cfg.eval.strides, self.cfg.eval.stride_traj, &lg)?;
        let mut out = create(&self.path("stride_ablation.csv"))?;
        writeln!(out, "fingerprint,stride,volume,balanced,{AGREEMENT_HEADER}")?;
        for r in &rows {
            writeln!(out, "{},{},{},{},{}", self.fingerprint, r.stride, r.volume, r.balanced, agreement_cols(&r.agreement))?;
        }
        out.flush()?;
        Ok(())
    }

    fn trace(&self) -> Result<()> {
        let (monitor, _) = self.monitor()?;
        let seeds = self.root.child(EVAL_BRANCH);
        let p = &self.cfg.prism;
        let traj = generate_trajectory(self.cfg.trace.traj_id, &self.spec, &self.params, &p.dr, p.horizon_for(&self.spec), &seeds);
        let trace = score_trace(&monitor, &traj, &self.spec, &self.oracle_config(self.cfg.trace.m), &seeds);
        let mut out = create(&self.path("trace.csv"))?;
        write_trace_csv(&mut out, &trace)?;
        out.flush()?;
        Ok(())
    }
}
