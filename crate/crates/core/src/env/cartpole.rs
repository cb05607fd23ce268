use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Control, EnvParams, State};

/// Cart-pole with the pole angle measured from upright.
///
/// State `[theta, theta_dot, c, c_dot]`. The nominal controller balances the
/// pole while pumping the cart into a left-right limit cycle of amplitude
/// `cycle_amplitude`; the swing drives the cart close to the track ends. The
/// fallback is a PD stabilizer on the pole alone, so it stops the swing but
/// lets the cart coast, and cart-ground friction tips the pole while it
/// decelerates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleSpec {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub u_max: f64,
    /// Pole joint damping (1/s), scaled by `damping_scale`.
    pub joint_damping: f64,
    /// Viscous cart-ground friction (N·s/m), scaled by `friction_scale`.
    pub cart_friction: f64,
    /// Safe set: `|theta| < angle_limit`.
    pub angle_limit: f64,
    /// Safe set: `|c| < track_limit`.
    pub track_limit: f64,
    pub terminal_angle: f64,
    pub terminal_rate: f64,
    pub fallback_kp: f64,
    pub fallback_kd: f64,
    pub cycle_amplitude: f64,
    pub cycle_frequency: f64,
    /// Energy-pumping gain of the cart oscillator.
    pub pump_gain: f64,
    /// Largest lean the nominal controller commands.
    pub max_lean: f64,
    /// Half-widths of the initial-state box around upright at the track center.
    pub initial_spread: [f64; 4],
    pub state_bounds: [(f64, f64); 4],
    pub default_sigma: f64,
}

impl Default for CartPoleSpec {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            u_max: 10.0,
            joint_damping: 0.05,
            cart_friction: 1.0,
            angle_limit: FRAC_PI_2,
            track_limit: 2.4,
            terminal_angle: 0.05,
            terminal_rate: 0.05,
            fallback_kp: 40.0,
            fallback_kd: 8.0,
            cycle_amplitude: 1.9,
            cycle_frequency: 1.2,
            pump_gain: 0.5,
            max_lean: 0.35,
            initial_spread: [0.05, 0.05, 0.1, 0.05],
            state_bounds: [(-0.4, 0.4), (-1.5, 1.5), (-2.0, 2.0), (-3.0, 3.0)],
            default_sigma: 0.05,
        }
    }
}

impl CartPoleSpec {
    pub(super) fn euler_step(&self, x: &State, u: Control, params: &EnvParams) -> State {
        let (theta, omega, c, c_dot) = (x[0], x[1], x[2], x[3]);
        let total_mass = self.cart_mass + self.pole_mass;
        let (sin, cos) = theta.sin_cos();
        let force = u.0 - params.friction_scale * self.cart_friction * c_dot;
        let temp = (force + self.pole_mass * self.half_length * omega * omega * sin) / total_mass;
        let denom = self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass);
        let theta_acc = (self.gravity * sin - cos * temp) / denom - params.damping_scale * self.joint_damping * omega;
        let c_acc = temp - self.pole_mass * self.half_length * theta_acc * cos / total_mass;
        let dt = params.dt;
        State::from([theta + omega * dt, omega + theta_acc * dt, c + c_dot * dt, c_dot + c_acc * dt])
    }

    pub(super) fn nominal_policy(&self, x: &State) -> Control {
        let (theta, omega, c, c_dot) = (x[0], x[1], x[2], x[3]);
        let w2 = self.cycle_frequency * self.cycle_frequency;
        let energy = 0.5 * c_dot * c_dot + 0.5 * w2 * c * c;
        let target = 0.5 * w2 * self.cycle_amplitude * self.cycle_amplitude;
        let cart_acc = -w2 * c + self.pump_gain * (target - energy) * c_dot;
        let lean = (cart_acc / self.gravity).clamp(-self.max_lean, self.max_lean);
        let u = self.fallback_kp * (theta - lean) + self.fallback_kd * omega + self.cart_friction * c_dot;
        Control::clamped(u, self.u_max)
    }

    pub(super) fn fallback_policy(&self, x: &State, params: &EnvParams) -> Control {
        let u = params.gain_scale * (self.fallback_kp * x[0] + self.fallback_kd * x[1]);
        Control::clamped(u, self.u_max)
    }

    pub(super) fn is_safe(&self, x: &State) -> bool {
        x[0].abs() < self.angle_limit && x[2].abs() < self.track_limit
    }

    pub(super) fn is_terminal(&self, x: &State) -> bool {
        self.is_safe(x) && x[0].abs() <= self.terminal_angle && x[1].abs() <= self.terminal_rate
    }

    pub(super) fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let coords: Vec<f64> = self.initial_spread.iter().map(|&w| rng.random_range(-w..=w)).collect();
        State::from(coords)
    }
}
