use prism_core::dataset::{stride_sample, uniform_indices};
use prism_core::eval::{baseline_uniform, Budget};
use prism_core::prism::{plan_sampling, run_prism, RunContext, UncertaintyBand, VALIDATION_ID_BASE};
use prism_core::*;

fn quick(seed: u64, k_iters: usize) -> PrismConfig {
    PrismConfig { seed, k_iters, train: TrainHyper { epochs: 20, ..Default::default() }, ..Default::default() }
}

fn line_trajectory(id: u64) -> Trajectory {
    Trajectory {
        id,
        seed: 0,
        dt: 0.01,
        env_params: EnvParams::default(),
        states: (0..=100).map(|t| State::from([t as f64 / 10.0, 1.0])).collect(),
        violation_step: None,
    }
}

/// `sigmoid(tanh(p_normalized))`: in the band [0.35, 0.65] exactly for p in [1.382, 8.618].
fn ramp_monitor() -> Monitor {
    let mut m = Monitor::zeros(&[(0.0, 10.0), (-0.5, 3.5)], &[1]);
    // Layout: W1 (1x2), b1 (1), W2 (1x1), b2 (1).
    m.params_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0]);
    m
}

#[test]
fn scripted_iteration_index_sets() {
    let m = ramp_monitor();
    let band = UncertaintyBand { p_lo: 0.35, p_hi: 0.65, fallback: true };
    let trajs: Vec<Trajectory> = (0..3).map(line_trajectory).collect();
    let plan = plan_sampling(&m, &band, &trajs, 2, &StrideConfig::default());
    // t = 0 lies outside the band; t = 20 is the first coarse hit and the scan
    // stays fine until t = 88 leaves it.
    let mut adaptive = vec![0];
    adaptive.extend((20..=88).step_by(2));
    assert_eq!(plan.indices[0], adaptive);
    assert_eq!(plan.indices[1], adaptive);
    assert_eq!(plan.indices[2], vec![0, 20, 40, 60, 80, 100]);
    // 34 of the 36 adaptive samples are in the band, against 4 of 6 coarse ones.
    assert!((plan.adaptive_in_band.unwrap() - 34.0 / 36.0).abs() < 1e-12);
    assert!((plan.coarse_in_band.unwrap() - 4.0 / 6.0).abs() < 1e-12);
}

#[test]
fn mixture_extremes() {
    let m = ramp_monitor();
    let trajs: Vec<Trajectory> = (0..4).map(line_trajectory).collect();
    let strides = StrideConfig::default();
    let wide = UncertaintyBand { p_lo: 1e-7, p_hi: 1.0 - 1e-7, fallback: false };
    let all_fine = plan_sampling(&m, &wide, &trajs, 4, &strides);
    assert_eq!(all_fine.indices.iter().map(Vec::len).sum::<usize>(), 4 * 51);
    let all_coarse = plan_sampling(&m, &wide, &trajs, 0, &strides);
    assert_eq!(all_coarse.indices.iter().map(Vec::len).sum::<usize>(), 4 * 6);
    assert_eq!(all_coarse.adaptive_in_band, None);
}

#[test]
fn beta_zero_collects_coarse_only() {
    let env = EnvSpec::braking();
    let cfg = PrismConfig { beta: 0.0, ..quick(4, 1) };
    let s = run_prism(&env, &env.default_params(), &cfg).unwrap();
    let ctx = RunContext::new(&env, env.default_params(), &cfg);
    let new: usize = ctx
        .trajectories(s.num_traj as u64 - 3..s.num_traj as u64)
        .iter()
        .map(|t| uniform_indices(t.len(), cfg.strides.coarse).len())
        .sum();
    assert_eq!(s.history[1].new_samples, new);
}

#[test]
fn zero_iterations_equals_uniform_baseline() {
    let env = EnvSpec::braking();
    let cfg = quick(2, 0);
    let s = run_prism(&env, &env.default_params(), &cfg).unwrap();
    let b = baseline_uniform(&env, &env.default_params(), &cfg, Budget::Trajectories { num_traj: cfg.n0, stride: cfg.strides.coarse })
        .unwrap();
    assert_eq!(s.history.len(), 1);
    assert_eq!(s.buffer, b.dataset);
    assert_eq!(s.monitor.to_bytes(), b.monitor.to_bytes());
}

#[test]
fn run_is_deterministic_and_buffers_grow() {
    let env = EnvSpec::braking();
    let cfg = quick(6, 3);
    let a = run_prism(&env, &env.default_params(), &cfg).unwrap();
    let b = run_prism(&env, &env.default_params(), &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.monitor, b.monitor);
    assert_eq!(a.buffer, b.buffer);

    assert_eq!(a.history.len(), 4);
    for w in a.history.windows(2) {
        assert!(w[1].total_data > w[0].total_data);
        assert!(w[1].new_samples >= 3);
    }
    let val_ids = a.validation.trajectory_ids();
    assert!(val_ids.iter().all(|&id| id >= VALIDATION_ID_BASE));
    assert!(a.buffer.trajectory_ids().is_disjoint(&val_ids));
    assert_eq!(a.validation.num_trajectories(), cfg.n_val);
}

#[test]
fn adaptive_striding_densifies_the_band_over_a_run() {
    let env = EnvSpec::braking();
    let s = run_prism(&env, &env.default_params(), &quick(1, 6)).unwrap();
    let pairs: Vec<(f64, f64)> =
        s.history.iter().filter_map(|m| Some((m.adaptive_in_band?, m.coarse_in_band?))).filter(|(a, c)| a + c > 0.0).collect();
    assert!(!pairs.is_empty());
    let adaptive: f64 = pairs.iter().map(|p| p.0).sum();
    let coarse: f64 = pairs.iter().map(|p| p.1).sum();
    assert!(adaptive > coarse, "{pairs:?}");
}

#[test]
fn cartpole_pipeline_runs() {
    let env = EnvSpec::cartpole();
    let s = run_prism(&env, &env.default_params(), &quick(0, 1)).unwrap();
    assert_eq!(s.history.len(), 2);
    assert!(s.buffer.n_safe() > 0 && s.buffer.n_unsafe() > 0);
}

#[test]
fn invalid_config_is_rejected_before_work() {
    let env = EnvSpec::braking();
    let cfg = PrismConfig { beta: 1.0, ..Default::default() };
    assert!(matches!(run_prism(&env, &env.default_params(), &cfg), Err(PrismError::InvalidConfig(_))));
}

#[test]
fn stride_sampling_of_real_trajectory_is_consistent() {
    let env = EnvSpec::braking();
    let ctx_cfg = quick(0, 0);
    let ctx = RunContext::new(&env, env.default_params(), &ctx_cfg);
    let t = &ctx.trajectories(0..1)[0];
    let idx = stride_sample(t, &StrideConfig::default(), |_| false);
    assert_eq!(idx, uniform_indices(t.len(), 20));
}
