//! Desk-scale stochastic plants with a nominal task policy, a fixed fallback
//! (stopping) policy, a safe set and a terminal set.
//!
//! Two plants are provided: a 1-D braking vehicle approaching an obstacle,
//! for which stoppability has a closed form, and a cart-pole whose nominal
//! controller drives a swinging limit cycle along the track.

mod braking;
mod cartpole;

pub use braking::BrakingSpec;
pub use cartpole::CartPoleSpec;

use std::fmt;
use std::ops::Deref;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{PrismError, Result};

/// A point in an environment's state space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(SmallVec<[f64; 4]>);

impl State {
    pub fn new(coords: &[f64]) -> Self {
        State(SmallVec::from_slice(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Deref for State {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(SmallVec::from_vec(v))
    }
}

impl<const N: usize> From<[f64; N]> for State {
    fn from(v: [f64; N]) -> Self {
        State::new(&v)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Scalar actuation: braking acceleration (m/s²) or cart force (N).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Control(pub f64);

impl Control {
    pub fn clamped(value: f64, u_max: f64) -> Self {
        Control(value.clamp(-u_max, u_max))
    }
}

/// Plant parameters that may be perturbed by domain randomization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    /// Multiplier on the plant's linear/joint damping.
    pub damping_scale: f64,
    /// Multiplier on the fallback controller's feedback gains.
    pub gain_scale: f64,
    /// Multiplier on braking deceleration (braking) or cart-ground friction (cart-pole).
    pub friction_scale: f64,
    /// Std of the additive per-step Gaussian disturbance on velocity coordinates.
    pub disturbance_sigma: f64,
    /// Euler step, seconds.
    pub dt: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            damping_scale: 1.0,
            gain_scale: 1.0,
            friction_scale: 1.0,
            disturbance_sigma: 0.0,
            dt: 0.01,
        }
    }
}

impl EnvParams {
    pub fn deterministic() -> Self {
        Self::default()
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.disturbance_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("damping_scale", self.damping_scale),
            ("gain_scale", self.gain_scale),
            ("friction_scale", self.friction_scale),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PrismError::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.disturbance_sigma.is_finite() && self.disturbance_sigma >= 0.0) {
            return Err(PrismError::InvalidConfig(format!(
                "disturbance_sigma must be >= 0, got {}",
                self.disturbance_sigma
            )));
        }
        Ok(())
    }
}

/// Names the supported plants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Braking,
    CartPole,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Braking => "braking",
            EnvKind::CartPole => "cartpole",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "braking" => Some(EnvKind::Braking),
            "cartpole" | "cart-pole" | "pendulum" => Some(EnvKind::CartPole),
            _ => None,
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::Braking => EnvSpec::Braking(BrakingSpec::default()),
            EnvKind::CartPole => EnvSpec::CartPole(CartPoleSpec::default()),
        }
    }
}

/// Full description of one environment: dynamics constants, set predicates
/// and both policies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Braking(BrakingSpec),
    CartPole(CartPoleSpec),
}

impl EnvSpec {
    pub fn braking() -> Self {
        EnvSpec::Braking(BrakingSpec::default())
    }

    pub fn cartpole() -> Self {
        EnvSpec::CartPole(CartPoleSpec::default())
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::Braking(_) => EnvKind::Braking,
            EnvSpec::CartPole(_) => EnvKind::CartPole,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }

    pub fn dimension(&self) -> usize {
        match self {
            EnvSpec::Braking(_) => 2,
            EnvSpec::CartPole(_) => 4,
        }
    }

    pub fn coordinate_names(&self) -> &'static [&'static str] {
        match self {
            EnvSpec::Braking(_) => &["p", "v"],
            EnvSpec::CartPole(_) => &["theta", "theta_dot", "c", "c_dot"],
        }
    }

    /// Indices of coordinates that receive the additive disturbance.
    pub fn velocity_indices(&self) -> &'static [usize] {
        match self {
            EnvSpec::Braking(_) => &[1],
            EnvSpec::CartPole(_) => &[1, 3],
        }
    }

    pub fn u_max(&self) -> f64 {
        match self {
            EnvSpec::Braking(s) => s.u_max,
            EnvSpec::CartPole(s) => s.u_max,
        }
    }

    /// Declared nominal state box, used for input normalization and as the
    /// default oracle grid.
    pub fn state_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            EnvSpec::Braking(s) => s.state_bounds.to_vec(),
            EnvSpec::CartPole(s) => s.state_bounds.to_vec(),
        }
    }

    /// Default plant parameters (nominal multipliers, per-env disturbance).
    pub fn default_params(&self) -> EnvParams {
        match self {
            EnvSpec::Braking(s) => EnvParams::default().with_sigma(s.default_sigma),
            EnvSpec::CartPole(s) => EnvParams::default().with_sigma(s.default_sigma),
        }
    }

    /// Default nominal rollout length in steps.
    pub fn default_horizon(&self) -> usize {
        match self {
            EnvSpec::Braking(_) => 600,
            EnvSpec::CartPole(_) => 1000,
        }
    }

    fn check_dim(&self, x: &State) {
        debug_assert_eq!(x.dim(), self.dimension(), "state dimension mismatch");
    }

    /// Noise-free Euler step.
    pub fn step_deterministic(&self, x: &State, u: Control, params: &EnvParams) -> State {
        self.check_dim(x);
        match self {
            EnvSpec::Braking(s) => s.euler_step(x, u, params),
            EnvSpec::CartPole(s) => s.euler_step(x, u, params),
        }
    }

    /// One step of `x' = f(x, u, w)`: Euler integration over `dt` plus
    /// zero-mean Gaussian noise on the velocity coordinates.
    pub fn step<R: Rng + ?Sized>(&self, x: &State, u: Control, params: &EnvParams, rng: &mut R) -> State {
        let mut next = self.step_deterministic(x, u, params);
        if params.disturbance_sigma > 0.0 {
            for &i in self.velocity_indices() {
                let w: f64 = StandardNormal.sample(rng);
                next.as_mut_slice()[i] += params.disturbance_sigma * w;
            }
        }
        next
    }

    pub fn nominal_policy(&self, x: &State) -> Control {
        self.check_dim(x);
        match self {
            EnvSpec::Braking(s) => s.nominal_policy(x),
            EnvSpec::CartPole(s) => s.nominal_policy(x),
        }
    }

    pub fn fallback_policy(&self, x: &State, params: &EnvParams) -> Control {
        self.check_dim(x);
        match self {
            EnvSpec::Braking(s) => s.fallback_policy(x, params),
            EnvSpec::CartPole(s) => s.fallback_policy(x, params),
        }
    }

    pub fn is_safe(&self, x: &State) -> bool {
        self.check_dim(x);
        match self {
            EnvSpec::Braking(s) => s.is_safe(x),
            EnvSpec::CartPole(s) => s.is_safe(x),
        }
    }

    /// Membership in the terminal (minimum-risk) set; implies `is_safe`.
    pub fn is_terminal(&self, x: &State) -> bool {
        self.check_dim(x);
        match self {
            EnvSpec::Braking(s) => s.is_terminal(x),
            EnvSpec::CartPole(s) => s.is_terminal(x),
        }
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        match self {
            EnvSpec::Braking(s) => s.sample_initial_state(rng),
            EnvSpec::CartPole(s) => s.sample_initial_state(rng),
        }
    }

    pub fn validate_state(&self, x: &State) -> Result<()> {
        if x.dim() != self.dimension() {
            return Err(PrismError::DimensionMismatch { expected: self.dimension(), got: x.dim() });
        }
        if !x.is_finite() {
            return Err(PrismError::InvalidConfig(format!("non-finite state {x}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::{SeedTree, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn braking() -> EnvSpec {
        EnvSpec::braking()
    }

    fn s(p: f64, v: f64) -> State {
        State::from([p, v])
    }

    fn close(a: &State, b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn braking_step_examples() {
        let env = braking();
        let params = EnvParams::deterministic();
        let mut rng = SeedTree::new(1).rng(Stream::Trajectory, &[0]);
        assert_eq!(env.step(&s(0.0, 0.0), Control(0.0), &params, &mut rng), s(0.0, 0.0));
        let next = env.step(&s(5.0, 2.0), Control(0.0), &params, &mut rng);
        assert!(close(&next, &[5.02, 1.9998]), "{next}");
        let next = env.step(&s(5.0, 2.0), Control(-2.0), &params, &mut rng);
        assert!(close(&next, &[5.02, 1.9798]), "{next}");
    }

    #[test]
    fn braking_nominal_examples() {
        let env = braking();
        assert_eq!(env.nominal_policy(&s(0.0, 2.5)), Control(0.0));
        assert_eq!(env.nominal_policy(&s(0.0, 0.0)), Control(2.0));
        assert_eq!(env.nominal_policy(&s(8.5, 2.5)), Control(0.0));
        assert_eq!(env.nominal_policy(&s(8.5, 1.0)), Control(0.0));
    }

    #[test]
    fn braking_fallback_examples() {
        let env = braking();
        let unit = EnvParams::deterministic();
        assert_eq!(env.fallback_policy(&s(5.0, 2.0), &unit), Control(-2.0));
        assert_eq!(env.fallback_policy(&s(5.0, 0.0), &unit), Control(0.0));
        let half = EnvParams { gain_scale: 0.5, ..unit };
        assert_eq!(env.fallback_policy(&s(5.0, -1.0), &half), Control(1.0));
    }

    #[test]
    fn braking_set_predicates() {
        let env = braking();
        assert!(env.is_safe(&s(8.99, 5.0)));
        assert!(!env.is_safe(&s(9.0, 0.0)));
        assert!(!env.is_safe(&s(10.0, -1.0)));
        assert!(env.is_terminal(&s(5.0, 0.0)));
        assert!(!env.is_terminal(&s(5.0, 0.06)));
        assert!(!env.is_terminal(&s(9.5, 0.0)));
    }

    #[test]
    fn braking_initial_states() {
        let env = braking();
        let tree = SeedTree::new(11);
        let a = env.sample_initial_state(&mut tree.rng(Stream::Trajectory, &[4]));
        let b = env.sample_initial_state(&mut tree.rng(Stream::Trajectory, &[4]));
        assert_eq!(a, b);

        let mut rng = tree.rng(Stream::Trajectory, &[5]);
        let n = 10_000;
        let mut mean_p = 0.0;
        for _ in 0..n {
            let x = env.sample_initial_state(&mut rng);
            assert!((0.0..=0.5).contains(&x[0]) && (0.0..=0.2).contains(&x[1]), "{x}");
            mean_p += x[0] / n as f64;
        }
        assert!((mean_p - 0.25).abs() <= 0.02, "mean p = {mean_p}");
    }

    #[test]
    fn cartpole_initial_states_are_safe_and_near_upright() {
        let env = EnvSpec::cartpole();
        let mut rng = SeedTree::new(3).rng(Stream::Trajectory, &[0]);
        for _ in 0..1000 {
            let x = env.sample_initial_state(&mut rng);
            assert!(env.is_safe(&x));
            assert!(x[0].abs() <= 0.05 && x[2].abs() <= 0.1);
        }
    }

    #[test]
    fn cartpole_upright_rest_is_a_fixed_point() {
        let env = EnvSpec::cartpole();
        let x = State::from([0.0, 0.0, 0.5, 0.0]);
        let params = EnvParams::deterministic();
        let u = env.fallback_policy(&x, &params);
        assert_eq!(u, Control(0.0));
        assert_eq!(env.step_deterministic(&x, u, &params), x);
        assert!(env.is_terminal(&x));
    }

    #[test]
    fn braking_fallback_velocity_is_non_increasing() {
        let env = braking();
        let params = EnvParams::deterministic();
        let mut rng = SeedTree::new(0).rng(Stream::Label, &[0]);
        for v0 in [3.5, 2.0, 0.7, -0.5, -2.0] {
            let mut x = s(0.0, v0);
            while x[1].abs() > 2.0 * params.dt {
                let next = env.step(&x, env.fallback_policy(&x, &params), &params, &mut rng);
                assert!(next[1].abs() <= x[1].abs(), "{x} -> {next}");
                x = next;
            }
        }
    }

    #[test]
    fn step_is_deterministic_under_a_fixed_stream() {
        let tree = SeedTree::new(42);
        for env in [EnvSpec::braking(), EnvSpec::cartpole()] {
            let params = env.default_params();
            let x0 = env.sample_initial_state(&mut tree.rng(Stream::Trajectory, &[0]));
            let u = env.nominal_policy(&x0);
            let a = env.step(&x0, u, &params, &mut tree.rng(Stream::Label, &[1]));
            let b = env.step(&x0, u, &params, &mut tree.rng(Stream::Label, &[1]));
            assert_eq!(a.iter().map(|c| c.to_bits()).collect::<Vec<_>>(), b.iter().map(|c| c.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn params_validation() {
        assert!(EnvParams::default().validate().is_ok());
        assert!(EnvParams { gain_scale: 0.0, ..Default::default() }.validate().is_err());
        assert!(EnvParams { disturbance_sigma: -1.0, ..Default::default() }.validate().is_err());
        assert!(EnvParams { dt: f64::NAN, ..Default::default() }.validate().is_err());
    }

    fn random_state<R: Rng>(env: &EnvSpec, rng: &mut R) -> State {
        // Sample well beyond the declared box so predicates are exercised on both sides.
        let coords: Vec<f64> = env
            .state_bounds()
            .iter()
            .map(|&(lo, hi)| {
                let w = hi - lo;
                rng.random_range(lo - 0.5 * w..hi + 0.5 * w)
            })
            .collect();
        State::from(coords)
    }

    proptest! {
        #[test]
        fn terminal_implies_safe_and_controls_are_bounded(seed in any::<u64>()) {
            let mut rng = SeedTree::new(seed).rng(Stream::Evaluation, &[0]);
            for env in [EnvSpec::braking(), EnvSpec::cartpole()] {
                let params = EnvParams { gain_scale: rng.random_range(0.2..3.0), ..env.default_params() };
                for _ in 0..50 {
                    let x = random_state(&env, &mut rng);
                    if env.is_terminal(&x) {
                        prop_assert!(env.is_safe(&x));
                    }
                    prop_assert!(env.nominal_policy(&x).0.abs() <= env.u_max());
                    prop_assert!(env.fallback_policy(&x, &params).0.abs() <= env.u_max());
                }
            }
        }
    }
}
