//! Environmental disturbance generation and the nonlinear force observer.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, clamp, symmetric_uniform};
use crate::vessel::{
    allocate, coriolis, damping, linear_damping, rotation, ControlInput, GeneralizedForce,
    HydroParams, RigidBodyMatrices, Velocity,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DisturbanceError {
    #[error("observer gain matrix is degenerate: k22*k33 = {0:e}")]
    DegenerateGain(f64),
    #[error("invalid disturbance limits: {0}")]
    InvalidLimits(&'static str),
    #[error("observer produced a non-finite estimate")]
    NonFinite,
}

/// Bounds for the random-walk current and force disturbance processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceLimits {
    pub current_speed_max: f64,
    pub current_dir_max: f64,
    pub current_speed_rate_max: f64,
    pub current_dir_rate_max: f64,
    pub force_max: [f64; 3],
    /// Bound of the white-noise part added on top of the drift.
    pub force_noise_max: [f64; 3],
    /// Bound of the drift rate (per second).
    pub force_drift_rate_max: [f64; 3],
}

impl DisturbanceLimits {
    pub const ZERO: Self = Self {
        current_speed_max: 0.0,
        current_dir_max: 0.0,
        current_speed_rate_max: 0.0,
        current_dir_rate_max: 0.0,
        force_max: [0.0; 3],
        force_noise_max: [0.0; 3],
        force_drift_rate_max: [0.0; 3],
    };

    /// Defaults scaled to the vessel's actuation: current up to 20 % of the
    /// top speed, surge/sway forces up to 20 % of the surge thrust and yaw
    /// moment up to 10 % of the yaw authority.
    pub fn scaled(u_max: f64, surge_force_max: f64, yaw_moment_max: f64) -> Self {
        let force_max = [
            0.2 * surge_force_max,
            0.2 * surge_force_max,
            0.1 * yaw_moment_max,
        ];
        Self {
            current_speed_max: 0.2 * u_max,
            current_dir_max: core::f64::consts::PI,
            current_speed_rate_max: 0.005,
            current_dir_rate_max: 0.02,
            force_max,
            force_noise_max: force_max.map(|f| 0.1 * f),
            force_drift_rate_max: force_max.map(|f| 0.01 * f),
        }
    }

    pub fn validate(&self) -> Result<(), DisturbanceError> {
        let scalars = [
            self.current_speed_max,
            self.current_dir_max,
            self.current_speed_rate_max,
            self.current_dir_rate_max,
        ];
        let all = scalars
            .iter()
            .chain(self.force_max.iter())
            .chain(self.force_noise_max.iter())
            .chain(self.force_drift_rate_max.iter());
        for v in all {
            if !v.is_finite() || *v < 0.0 {
                return Err(DisturbanceError::InvalidLimits("bounds must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CurrentState {
    /// Current speed (m/s).
    pub speed: f64,
    /// Direction the current flows towards, NED (rad).
    pub direction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceDisturbanceState {
    pub drift: [f64; 3],
    pub force: [f64; 3],
}

impl ForceDisturbanceState {
    pub fn generalized(&self) -> GeneralizedForce {
        GeneralizedForce::new(self.force[0], self.force[1], self.force[2])
    }
}

pub fn step_current<R: Rng + ?Sized>(
    state: &CurrentState,
    limits: &DisturbanceLimits,
    rng: &mut R,
    dt: f64,
) -> CurrentState {
    let w_speed = symmetric_uniform(rng, limits.current_speed_rate_max);
    let w_dir = symmetric_uniform(rng, limits.current_dir_rate_max);
    CurrentState {
        speed: clamp(
            state.speed + w_speed * dt,
            -limits.current_speed_max,
            limits.current_speed_max,
        ),
        direction: clamp(
            state.direction + w_dir * dt,
            -limits.current_dir_max,
            limits.current_dir_max,
        ),
    }
}

pub fn step_forces<R: Rng + ?Sized>(
    state: &ForceDisturbanceState,
    limits: &DisturbanceLimits,
    rng: &mut R,
    dt: f64,
) -> ForceDisturbanceState {
    let mut next = *state;
    for i in 0..3 {
        let bound = limits.force_max[i];
        let w2 = symmetric_uniform(rng, limits.force_drift_rate_max[i]);
        next.drift[i] = clamp(state.drift[i] + w2 * dt, -bound, bound);
        let w1 = symmetric_uniform(rng, limits.force_noise_max[i]);
        next.force[i] = clamp(next.drift[i] + w1, -bound, bound);
    }
    next
}

/// Body-frame force exerted by a current, modeled as linear drag on the
/// current velocity expressed in the body frame.
pub fn current_force(params: &HydroParams, current: &CurrentState, psi: f64) -> GeneralizedForce {
    if current.speed == 0.0 {
        return GeneralizedForce::ZERO;
    }
    let ned = Vector3::new(
        current.speed * math::cos(current.direction),
        current.speed * math::sin(current.direction),
        0.0,
    );
    let body = rotation(psi).transpose() * ned;
    GeneralizedForce::from_vector(&(linear_damping(params) * body))
}

/// Adaptation gains of the force observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverGains {
    pub gamma: [f64; 3],
}

impl Default for ObserverGains {
    fn default() -> Self {
        Self {
            gamma: [0.1, 0.1, 0.08],
        }
    }
}

pub fn observer_gain_matrix(
    mat: &RigidBodyMatrices,
    gains: &ObserverGains,
) -> Result<Matrix3<f64>, DisturbanceError> {
    let (k11, k22, k23, k32, k33) = (mat.k(1, 1), mat.k(2, 2), mat.k(2, 3), mat.k(3, 2), mat.k(3, 3));
    let k2233 = k22 * k33;
    if k2233.abs() < 1e-14 || k11.abs() < 1e-14 || !k2233.is_finite() {
        return Err(DisturbanceError::DegenerateGain(k2233));
    }
    let sigma = 1.0 - k23 * k32 / k2233;
    let [g1, g2, g3] = gains.gamma;
    Ok(Matrix3::new(
        g1 * sigma / k11,
        0.0,
        0.0,
        0.0,
        g2 / k22,
        -g2 * k23 / k2233,
        0.0,
        -g3 * k32 / k2233,
        g3 / k33,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObserverState {
    pub zeta: [f64; 3],
    pub estimate: [f64; 3],
}

impl ObserverState {
    pub fn estimate_force(&self) -> GeneralizedForce {
        GeneralizedForce::new(self.estimate[0], self.estimate[1], self.estimate[2])
    }
}

/// Forward-Euler observer update. `estimate` of the returned state is the
/// estimate at the time of `vel` (before the update of `zeta`).
pub fn observer_step(
    obs: &ObserverState,
    vel: &Velocity,
    u: ControlInput,
    mat: &RigidBodyMatrices,
    params: &HydroParams,
    gain: &Matrix3<f64>,
    dt: f64,
) -> Result<ObserverState, DisturbanceError> {
    let nu = vel.to_vector();
    let zeta = Vector3::from(obs.zeta);
    let estimate = zeta + gain * nu;
    let rhs = -coriolis(mat, vel) * nu - damping(params, vel) * nu + allocate(u).to_vector() + estimate;
    let next = zeta - gain * mat.mass_inv * rhs * dt;
    if next.iter().chain(estimate.iter()).any(|v| !v.is_finite()) {
        return Err(DisturbanceError::NonFinite);
    }
    Ok(ObserverState {
        zeta: next.into(),
        estimate: estimate.into(),
    })
}

/// Estimate implied by the observer variable at velocity `vel`.
pub fn observer_estimate(zeta: &[f64; 3], vel: &Velocity, gain: &Matrix3<f64>) -> [f64; 3] {
    (Vector3::from(*zeta) + gain * vel.to_vector()).into()
}
