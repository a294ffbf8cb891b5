//! Single-track vehicle model with an incremental (steering, speed) action space.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Physical and actuation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleLimits {
    /// Wheelbase in metres.
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_speed: f64,
    /// Largest steering change per step.
    pub max_steer_delta: f64,
    /// Largest speed change per step.
    pub max_speed_delta: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        Self { wheelbase: 2.8, max_steer: 0.6, max_speed: 20.0, max_steer_delta: 0.05, max_speed_delta: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steer: f64,
    /// Longitudinal acceleration of the last step.
    pub accel: f64,
    pub yaw_rate: f64,
}

impl VehicleState {
    /// State at rest in steering, moving at `speed` along `heading`.
    pub fn new(position: Vec2, heading: f64, speed: f64) -> Self {
        Self { x: position.x, y: position.y, heading, speed, ..Self::default() }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    fn is_finite(&self) -> bool {
        [self.x, self.y, self.heading, self.speed, self.steer, self.accel, self.yaw_rate].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub steer_delta: f64,
    pub speed_delta: f64,
}

impl Action {
    pub fn new(steer_delta: f64, speed_delta: f64) -> Self {
        Self { steer_delta, speed_delta }
    }

    pub fn clamped(self, limits: &VehicleLimits) -> Action {
        Action {
            steer_delta: self.steer_delta.clamp(-limits.max_steer_delta, limits.max_steer_delta),
            speed_delta: self.speed_delta.clamp(-limits.max_speed_delta, limits.max_speed_delta),
        }
    }
}

/// Advance one forward-Euler step. The action is clamped first, then the new
/// steering and speed are clamped to their ranges, then the pose is integrated
/// with the new values.
///
/// ```
/// use keyplan::kinematics::{step, Action, VehicleLimits, VehicleState};
/// use keyplan::geometry::Vec2;
/// let s = VehicleState::new(Vec2::ZERO, 0.0, 10.0);
/// let next = step(&s, Action::default(), 0.1, &VehicleLimits::default()).unwrap();
/// assert_eq!((next.x, next.y, next.heading), (1.0, 0.0, 0.0));
/// ```
pub fn step(state: &VehicleState, action: Action, dt: f64, limits: &VehicleLimits) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::Input(format!("time step must be positive, got {dt}")));
    }
    if !state.is_finite() || !action.steer_delta.is_finite() || !action.speed_delta.is_finite() {
        return Err(Error::Numeric("non-finite vehicle state or action".into()));
    }
    let a = action.clamped(limits);
    let steer = (state.steer + a.steer_delta).clamp(-limits.max_steer, limits.max_steer);
    let speed = (state.speed + a.speed_delta).clamp(0.0, limits.max_speed);
    let yaw_rate = speed * steer.tan() / limits.wheelbase;
    Ok(VehicleState {
        x: state.x + speed * state.heading.cos() * dt,
        y: state.y + speed * state.heading.sin() * dt,
        heading: state.heading + yaw_rate * dt,
        speed,
        steer,
        accel: (speed - state.speed) / dt,
        yaw_rate,
    })
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_density(x: [f64; 2], mean: [f64; 2], std: [f64; 2]) -> f64 {
    let half_ln_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    (0..2)
        .map(|i| {
            let z = (x[i] - mean[i]) / std[i];
            -0.5 * z * z - std[i].ln() - half_ln_two_pi
        })
        .sum()
}

/// Draw a raw sample from `N(mean, diag(std²))`. Returns the clamped action
/// and the log-density of the raw sample.
pub fn sample_action<R: Rng + ?Sized>(
    mean: [f64; 2],
    std: [f64; 2],
    rng: &mut R,
    limits: &VehicleLimits,
) -> (Action, f64) {
    let raw = [0, 1].map(|i| {
        let z: f64 = StandardNormal.sample(rng);
        mean[i] + std[i] * z
    });
    let log_prob = gaussian_log_density(raw, mean, std);
    (Action::new(raw[0], raw[1]).clamped(limits), log_prob)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steering_and_speed_saturate() {
        let limits = VehicleLimits::default();
        let mut s = VehicleState::new(Vec2::ZERO, 0.0, 19.9);
        for _ in 0..50 {
            s = step(&s, Action::new(1.0, 5.0), 0.1, &limits).unwrap();
        }
        assert_eq!(s.steer, limits.max_steer);
        assert_eq!(s.speed, limits.max_speed);
    }

    #[test]
    fn rejects_bad_input() {
        let limits = VehicleLimits::default();
        let s = VehicleState::new(Vec2::ZERO, 0.0, 1.0);
        assert!(step(&s, Action::default(), 0.0, &limits).is_err());
        assert!(step(&s, Action::new(f64::NAN, 0.0), 0.1, &limits).unwrap_err().is_numeric());
    }
}
