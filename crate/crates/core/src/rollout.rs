//! Nominal rollouts (trigger-state distributions) and fallback rollouts
//! (binary stoppability labels), plus single-factor domain randomization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvParams, EnvSpec, State};
use crate::error::{PrismError, Result};
use crate::seed::{SeedTree, Stream};

/// Outcome of one fallback rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    /// Some rollout state violated the safe set, or the horizon ran out.
    Unsafe,
    /// The terminal set was reached with every earlier state safe.
    Safe,
}

impl Label {
    pub fn value(self) -> u8 {
        match self {
            Label::Unsafe => 0,
            Label::Safe => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    pub fn is_safe(self) -> bool {
        self == Label::Safe
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.value()
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Unsafe),
            1 => Ok(Label::Safe),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

/// A closed-loop nominal rollout.
///
/// `states` holds the safe prefix only: when the nominal policy leaves the
/// safe set, the violating state is dropped and `violation_step` records the
/// step at which it happened. Post-violation states therefore never reach
/// trigger sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    /// Seed of the stream that produced this trajectory.
    pub seed: u64,
    pub dt: f64,
    pub env_params: EnvParams,
    pub states: Vec<State>,
    pub violation_step: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn nominal_failure(&self) -> bool {
        self.violation_step.is_some()
    }
}

/// Roll `x0` forward under the nominal policy for `horizon` steps, halting
/// early at the first unsafe state.
pub fn rollout_nominal<R: Rng + ?Sized>(
    x0: &State,
    spec: &EnvSpec,
    params: &EnvParams,
    horizon: usize,
    rng: &mut R,
) -> Trajectory {
    assert!(horizon >= 1, "horizon must be >= 1");
    let mut states = Vec::with_capacity(horizon + 1);
    let mut violation_step = None;
    let mut x = x0.clone();
    if spec.is_safe(&x) {
        states.push(x.clone());
        for t in 1..=horizon {
            x = spec.step(&x, spec.nominal_policy(&x), params, rng);
            if !spec.is_safe(&x) {
                violation_step = Some(t);
                break;
            }
            states.push(x.clone());
        }
    } else {
        violation_step = Some(0);
    }
    Trajectory { id: 0, seed: 0, dt: params.dt, env_params: *params, states, violation_step }
}

/// Simulate the fallback from `x_trig` and report whether it reaches the
/// terminal set within `t_max` steps without first leaving the safe set.
///
/// The rollout stops at the first terminal state; `t = 0` counts, so a
/// terminal trigger state is labeled safe without stepping.
pub fn label_trigger<R: Rng + ?Sized>(
    x_trig: &State,
    spec: &EnvSpec,
    params: &EnvParams,
    t_max: usize,
    rng: &mut R,
) -> Label {
    let mut x = x_trig.clone();
    for t in 0..=t_max {
        if !spec.is_safe(&x) {
            return Label::Unsafe;
        }
        if spec.is_terminal(&x) {
            return Label::Safe;
        }
        if t == t_max {
            break;
        }
        x = spec.step(&x, spec.fallback_policy(&x, params), params, rng);
    }
    Label::Unsafe
}

/// Monte-Carlo estimate of the stoppability value: the mean of `m`
/// independent fallback labels.
pub fn estimate_vstop<R: Rng + ?Sized>(
    x: &State,
    spec: &EnvSpec,
    params: &EnvParams,
    t_max: usize,
    m: usize,
    rng: &mut R,
) -> f64 {
    assert!(m >= 1, "need at least one rollout");
    let successes = (0..m).filter(|_| label_trigger(x, spec, params, t_max, rng).is_safe()).count();
    successes as f64 / m as f64
}

/// Which plant parameter a domain-randomization config perturbs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrAxis {
    None,
    Damping,
    Gain,
    Friction,
}

impl DrAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(DrAxis::None),
            "damping" => Some(DrAxis::Damping),
            "gain" | "gains" => Some(DrAxis::Gain),
            "friction" => Some(DrAxis::Friction),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DrAxis::None => "none",
            DrAxis::Damping => "damping",
            DrAxis::Gain => "gain",
            DrAxis::Friction => "friction",
        }
    }
}

/// Single-factor domain randomization: one multiplier drawn uniformly from
/// `[low, high]` per rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrConfig {
    pub axis: DrAxis,
    pub low: f64,
    pub high: f64,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl DrConfig {
    pub fn none() -> Self {
        Self { axis: DrAxis::None, low: 0.7, high: 1.3 }
    }

    pub fn new(axis: DrAxis, low: f64, high: f64) -> Result<Self> {
        let dr = Self { axis, low, high };
        dr.validate()?;
        Ok(dr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && 0.0 < self.low && self.low <= self.high) {
            return Err(PrismError::InvalidConfig(format!(
                "randomization range must satisfy 0 < low <= high, got [{}, {}]",
                self.low, self.high
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self.axis {
            DrAxis::None => "none".to_string(),
            axis => format!("{}[{},{}]", axis.name(), self.low, self.high),
        }
    }
}

/// Draw the selected multiplier from `dr`'s range; other fields are untouched.
pub fn randomize_env<R: Rng + ?Sized>(base: &EnvParams, dr: &DrConfig, rng: &mut R) -> EnvParams {
    let mut out = *base;
    let slot = match dr.axis {
        DrAxis::None => return out,
        DrAxis::Damping => &mut out.damping_scale,
        DrAxis::Gain => &mut out.gain_scale,
        DrAxis::Friction => &mut out.friction_scale,
    };
    *slot = if dr.low == dr.high { dr.low } else { rng.random_range(dr.low..=dr.high) };
    out
}

/// Generate trajectory `id` from its own stream: draw plant parameters, an
/// initial state, then roll out the nominal policy.
pub fn generate_trajectory(
    id: u64,
    spec: &EnvSpec,
    base: &EnvParams,
    dr: &DrConfig,
    horizon: usize,
    seeds: &SeedTree,
) -> Trajectory {
    let seed = seeds.seed(Stream::Trajectory, &[id]);
    let mut rng = seeds.rng(Stream::Trajectory, &[id]);
    let params = randomize_env(base, dr, &mut rng);
    let x0 = spec.sample_initial_state(&mut rng);
    let mut traj = rollout_nominal(&x0, spec, &params, horizon, &mut rng);
    traj.id = id;
    traj.seed = seed;
    traj
}
