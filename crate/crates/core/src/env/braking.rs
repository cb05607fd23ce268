use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Control, EnvParams, State};

/// A point mass on a line approaching an obstacle at `obstacle`.
///
/// State `[p, v]` (m, m/s). The nominal controller cruises toward the
/// obstacle and coasts once past `coast_from`, so late trigger states cannot
/// brake in time. The fallback brakes at full deceleration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrakingSpec {
    /// Obstacle position; the safe set is `p < obstacle`.
    pub obstacle: f64,
    /// Terminal speed tolerance.
    pub terminal_speed: f64,
    pub u_max: f64,
    /// Nominal cruise speed.
    pub cruise_speed: f64,
    /// Nominal proportional speed gain.
    pub speed_gain: f64,
    /// Nominal controller coasts for `p > coast_from`.
    pub coast_from: f64,
    /// Fallback braking deceleration.
    pub brake_decel: f64,
    /// Linear drag coefficient (1/s), scaled by `damping_scale`.
    pub drag: f64,
    pub initial_p: (f64, f64),
    pub initial_v: (f64, f64),
    pub state_bounds: [(f64, f64); 2],
    pub default_sigma: f64,
}

impl Default for BrakingSpec {
    fn default() -> Self {
        Self {
            obstacle: 9.0,
            terminal_speed: 0.05,
            u_max: 2.0,
            cruise_speed: 2.5,
            speed_gain: 1.0,
            coast_from: 8.0,
            brake_decel: 2.0,
            drag: 0.01,
            initial_p: (0.0, 0.5),
            initial_v: (0.0, 0.2),
            state_bounds: [(0.0, 10.0), (-0.5, 3.5)],
            default_sigma: 0.05,
        }
    }
}

impl BrakingSpec {
    pub(super) fn euler_step(&self, x: &State, u: Control, params: &EnvParams) -> State {
        let (p, v) = (x[0], x[1]);
        let dt = params.dt;
        let accel = u.0 * params.friction_scale - params.damping_scale * self.drag * v;
        State::from([p + v * dt, v + accel * dt])
    }

    pub(super) fn nominal_policy(&self, x: &State) -> Control {
        let (p, v) = (x[0], x[1]);
        if p > self.coast_from {
            return Control(0.0);
        }
        Control::clamped(self.speed_gain * (self.cruise_speed - v), self.u_max)
    }

    pub(super) fn fallback_policy(&self, x: &State, params: &EnvParams) -> Control {
        let v = x[1];
        let sign = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        Control::clamped(-sign * self.brake_decel * params.gain_scale, self.u_max)
    }

    /// Deceleration actually delivered by the fallback under `params`.
    pub fn effective_decel(&self, params: &EnvParams) -> f64 {
        (self.brake_decel * params.gain_scale).min(self.u_max) * params.friction_scale
    }

    pub(super) fn is_safe(&self, x: &State) -> bool {
        x[0] < self.obstacle
    }

    pub(super) fn is_terminal(&self, x: &State) -> bool {
        self.is_safe(x) && x[1].abs() <= self.terminal_speed
    }

    pub(super) fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let p = rng.random_range(self.initial_p.0..=self.initial_p.1);
        let v = rng.random_range(self.initial_v.0..=self.initial_v.1);
        State::from([p, v])
    }
}
