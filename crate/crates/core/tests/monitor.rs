use proptest::prelude::*;
use rand::Rng;

use prism_core::monitor::{train, ClassWeighting};
use prism_core::*;

fn sample(id: u64, coords: &[f64], label: Label) -> TriggerSample {
    TriggerSample { traj_id: id, time_index: 0, state: State::new(coords), label, iteration: 0, env_params: EnvParams::default() }
}

fn init(bounds: &[(f64, f64)], hidden: &[usize], seed: u64) -> Monitor {
    Monitor::new(bounds, hidden, &mut SeedTree::new(seed).rng(Stream::Init, &[0]))
}

#[test]
fn gradient_matches_finite_differences_on_4_2_1() {
    let mut rng = SeedTree::new(42).rng(Stream::Evaluation, &[0]);
    let mut m = init(&[(-1.0, 1.0); 4], &[2], 7);
    for p in m.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    for _ in 0..10 {
        let batch: Vec<TriggerSample> = (0..8)
            .map(|i| {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                sample(i, &x, if rng.random_bool(0.4) { Label::Unsafe } else { Label::Safe })
            })
            .collect();
        let w = ClassWeights { unsafe_weight: 1.7, safe_weight: 0.6 };
        let g = m.grad(&batch, &w);
        for k in 0..m.num_params() {
            let orig = m.params()[k];
            m.params_mut()[k] = orig + 1e-5;
            let up = m.loss(&batch, &w);
            m.params_mut()[k] = orig - 1e-5;
            let down = m.loss(&batch, &w);
            m.params_mut()[k] = orig;
            let fd = (up - down) / 2e-5;
            if g[k].abs() < 1e-8 && fd.abs() < 1e-8 {
                continue;
            }
            assert!((g[k] - fd).abs() / g[k].abs().max(fd.abs()) <= 1e-5, "param {k}: {} vs {fd}", g[k]);
        }
    }
}

#[test]
fn gradient_vanishes_at_a_converged_separable_point() {
    let mut m = Monitor::zeros(&[(-1.0, 1.0)], &[2]);
    let n = m.num_params();
    // Confident and correct: the clamp makes the loss locally flat.
    m.params_mut()[n - 1] = 40.0;
    let g = m.grad(&[sample(0, &[0.3], Label::Safe)], &ClassWeights::uniform());
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn separable_toy_is_fit() {
    let mut rng = SeedTree::new(1).rng(Stream::Evaluation, &[0]);
    let mut samples = Vec::new();
    while samples.len() < 200 {
        let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let margin = a + 0.5 * b;
        if margin.abs() < 0.1 {
            continue;
        }
        samples.push(sample(samples.len() as u64, &[a, b], if margin > 0.0 { Label::Safe } else { Label::Unsafe }));
    }
    let d = Dataset::from_samples(samples).unwrap();
    let h = TrainHyper { learning_rate: 1e-2, ..Default::default() };
    let (m, report) = train(&init(&[(-1.0, 1.0); 2], &h.hidden, 2), &d, &h).unwrap();
    let correct = d.iter().filter(|s| (decide(m.value(&s.state), 0.5) == Decision::Stoppable) == s.label.is_safe()).count();
    assert!(correct as f64 / d.len() as f64 >= 0.99, "{correct}/200");

    let losses = &report.epoch_losses;
    assert!(losses.last().unwrap() < losses.first().unwrap());
    let steady = losses.windows(2).filter(|w| w[1] <= 1.05 * w[0]).count();
    assert!(steady as f64 >= 0.9 * (losses.len() - 1) as f64);
}

#[test]
fn bernoulli_frequency_is_recovered_with_uniform_weights() {
    let x = [2.0, 0.5];
    let d = Dataset::from_samples((0..100).map(|i| sample(i, &x, if i < 30 { Label::Safe } else { Label::Unsafe })).collect()).unwrap();
    let h = TrainHyper { class_weighting: ClassWeighting::Uniform, learning_rate: 1e-2, epochs: 1000, ..Default::default() };
    let (m, _) = train(&init(&[(0.0, 10.0), (-0.5, 3.5)], &h.hidden, 5), &d, &h).unwrap();
    assert!((m.value(&x) - 0.3).abs() <= 0.02, "{}", m.value(&x));

    // Inverse-frequency weighting balances the classes, moving the optimum to 1/2.
    let h = TrainHyper { class_weighting: ClassWeighting::InverseFrequency, ..h };
    let (m, _) = train(&init(&[(0.0, 10.0), (-0.5, 3.5)], &h.hidden, 5), &d, &h).unwrap();
    assert!((m.value(&x) - 0.5).abs() <= 0.02, "{}", m.value(&x));
}

#[test]
fn raising_minority_weight_never_lowers_its_recall() {
    // 1-D: unsafe above 0.7, a mixed band in [0.5, 0.7], safe below.
    let samples: Vec<TriggerSample> = (0..200)
        .map(|i| {
            let x = i as f64 / 200.0;
            let label = if x > 0.7 || (x >= 0.5 && i % 3 == 0) { Label::Unsafe } else { Label::Safe };
            sample(i, &[x], label)
        })
        .collect();
    let d = Dataset::from_samples(samples).unwrap();
    assert!(d.n_unsafe() < d.n_safe());
    let mut last_recall = 0.0;
    for w in [1.0, 2.0, 4.0, 8.0] {
        let h = TrainHyper {
            class_weighting: ClassWeighting::Fixed { unsafe_weight: w, safe_weight: 1.0 },
            learning_rate: 1e-2,
            epochs: 400,
            hidden: vec![8],
            seed: 3,
            ..Default::default()
        };
        let (m, _) = train(&init(&[(0.0, 1.0)], &h.hidden, 3), &d, &h).unwrap();
        let hits = d.iter().filter(|s| !s.label.is_safe() && decide(m.value(&s.state), 0.5) == Decision::Unstoppable).count();
        let recall = hits as f64 / d.n_unsafe() as f64;
        assert!(recall >= last_recall, "weight {w}: recall {recall} < {last_recall}");
        last_recall = recall;
    }
}

proptest! {
    #[test]
    fn decisions_are_nested_in_alpha(v in 0.0f64..=1.0, a in 1e-6f64..=1.0, b in 1e-6f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if decide(v, hi) == Decision::Stoppable {
            prop_assert_eq!(decide(v, lo), Decision::Stoppable);
        }
    }
}
