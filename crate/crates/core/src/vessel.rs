//! 3-DOF surface vessel model (Cybership II parameterization).
//!
//! State ordering used throughout the crate is `[x, y, psi, u, v, r]`: NED
//! position and heading followed by body-frame surge, sway and yaw rate.
//!
//! ```text
//! eta_dot = R(psi) nu
//! M nu_dot + C(nu) nu + D(nu) nu = tau + tau_d
//! ```

use nalgebra::{Matrix3, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, sign};

pub type StateVector = Vector6<f64>;
pub type StateMatrix = SMatrix<f64, 6, 6>;
pub type InputMatrix = SMatrix<f64, 6, 2>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("mass matrix is singular (det = {0:e})")]
    SingularMass(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("no positive steady-state surge speed for surge force {0}")]
    NoSteadyState(f64),
    #[error("integration produced a non-finite state")]
    NonFinite,
}

/// Hydrodynamic and rigid-body coefficients. Serialized names follow the
/// usual maneuvering-coefficient notation (`X_|u|u` etc).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HydroParams {
    pub m: f64,
    pub x_g: f64,
    #[serde(rename = "I_z")]
    pub i_z: f64,
    #[serde(rename = "X_udot")]
    pub x_udot: f64,
    #[serde(rename = "Y_vdot")]
    pub y_vdot: f64,
    #[serde(rename = "Y_rdot")]
    pub y_rdot: f64,
    #[serde(rename = "N_vdot")]
    pub n_vdot: f64,
    #[serde(rename = "N_rdot")]
    pub n_rdot: f64,
    #[serde(rename = "X_u")]
    pub x_u: f64,
    #[serde(rename = "X_|u|u")]
    pub x_absu_u: f64,
    #[serde(rename = "X_uuu")]
    pub x_uuu: f64,
    #[serde(rename = "Y_v")]
    pub y_v: f64,
    #[serde(rename = "Y_|v|v")]
    pub y_absv_v: f64,
    #[serde(rename = "Y_|r|v")]
    pub y_absr_v: f64,
    #[serde(rename = "Y_r")]
    pub y_r: f64,
    #[serde(rename = "Y_|v|r")]
    pub y_absv_r: f64,
    #[serde(rename = "Y_|r|r")]
    pub y_absr_r: f64,
    #[serde(rename = "N_v")]
    pub n_v: f64,
    #[serde(rename = "N_|v|v")]
    pub n_absv_v: f64,
    #[serde(rename = "N_r")]
    pub n_r: f64,
    #[serde(rename = "N_|v|r")]
    pub n_absv_r: f64,
    #[serde(rename = "N_|r|r")]
    pub n_absr_r: f64,
    #[serde(rename = "N_|r|v")]
    pub n_absr_v: f64,
}

impl Default for HydroParams {
    fn default() -> Self {
        Self {
            m: 23.8,
            x_g: 0.046,
            i_z: 1.760,
            x_udot: -2.0,
            y_vdot: -10.0,
            y_rdot: 0.0,
            n_vdot: 0.0,
            n_rdot: -1.0,
            x_u: -0.7225,
            x_absu_u: -1.3274,
            x_uuu: -5.8664,
            y_v: -0.8612,
            y_absv_v: -36.2823,
            y_absr_v: -0.01,
            y_r: 0.1079,
            y_absv_r: -0.01,
            y_absr_r: -0.02,
            n_v: 0.1052,
            n_absv_v: 5.0437,
            n_r: -0.5,
            n_absv_r: -0.001,
            n_absr_r: 0.005,
            // Listed with a doubled minus sign in the source table.
            n_absr_v: -0.001,
        }
    }
}

impl HydroParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.m > 0.0) {
            return Err(ModelError::InvalidParameter("m must be positive"));
        }
        if !(self.i_z > 0.0) {
            return Err(ModelError::InvalidParameter("I_z must be positive"));
        }
        let all = [
            self.m, self.x_g, self.i_z, self.x_udot, self.y_vdot, self.y_rdot, self.n_vdot,
            self.n_rdot, self.x_u, self.x_absu_u, self.x_uuu, self.y_v, self.y_absv_v,
            self.y_absr_v, self.y_r, self.y_absv_r, self.y_absr_r, self.n_v, self.n_absv_v,
            self.n_r, self.n_absv_r, self.n_absr_r, self.n_absr_v,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameter("non-finite coefficient"));
        }
        Ok(())
    }
}

/// Mass matrix (rigid body plus added mass) and its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidBodyMatrices {
    pub mass: Matrix3<f64>,
    pub mass_inv: Matrix3<f64>,
}

impl RigidBodyMatrices {
    pub fn m11(&self) -> f64 {
        self.mass[(0, 0)]
    }
    pub fn m23(&self) -> f64 {
        self.mass[(1, 2)]
    }
    /// Entry `k_ij` (1-based) of the inverse mass matrix.
    pub fn k(&self, i: usize, j: usize) -> f64 {
        self.mass_inv[(i - 1, j - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity {
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

impl Velocity {
    pub fn new(u: f64, v: f64, r: f64) -> Self {
        Self { u, v, r }
    }
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, self.r)
    }
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VesselState {
    pub pose: Pose,
    pub vel: Velocity,
}

impl VesselState {
    pub fn new(x: f64, y: f64, psi: f64, u: f64, v: f64, r: f64) -> Self {
        Self {
            pose: Pose { x, y, psi },
            vel: Velocity { u, v, r },
        }
    }

    pub fn to_vector(&self) -> StateVector {
        Vector6::new(
            self.pose.x,
            self.pose.y,
            self.pose.psi,
            self.vel.u,
            self.vel.v,
            self.vel.r,
        )
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4], x[5])
    }

    pub fn position(&self) -> [f64; 2] {
        [self.pose.x, self.pose.y]
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Actuated surge force `F_u` (N) and yaw moment `T_r` (N m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub surge: f64,
    pub yaw: f64,
}

impl ControlInput {
    pub const ZERO: Self = Self {
        surge: 0.0,
        yaw: 0.0,
    };

    pub fn new(surge: f64, yaw: f64) -> Self {
        Self { surge, yaw }
    }
    pub fn to_array(self) -> [f64; 2] {
        [self.surge, self.yaw]
    }
    pub fn is_finite(&self) -> bool {
        self.surge.is_finite() && self.yaw.is_finite()
    }
}

impl core::ops::Sub for ControlInput {
    type Output = ControlInput;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.surge - rhs.surge, self.yaw - rhs.yaw)
    }
}

/// Box limits on the actuated inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputBounds {
    pub surge_min: f64,
    pub surge_max: f64,
    pub yaw_min: f64,
    pub yaw_max: f64,
}

impl Default for InputBounds {
    fn default() -> Self {
        Self {
            surge_min: -0.2,
            surge_max: 2.0,
            yaw_min: -0.15,
            yaw_max: 0.15,
        }
    }
}

impl InputBounds {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.surge_min < self.surge_max
            && self.yaw_min < self.yaw_max
            && self.surge_min.is_finite()
            && self.surge_max.is_finite()
            && self.yaw_min.is_finite()
            && self.yaw_max.is_finite();
        if !ok {
            return Err(ModelError::InvalidParameter("input bounds must be finite with min < max"));
        }
        Ok(())
    }

    pub fn clamp(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            math::clamp(u.surge, self.surge_min, self.surge_max),
            math::clamp(u.yaw, self.yaw_min, self.yaw_max),
        )
    }

    pub fn contains(&self, u: ControlInput) -> bool {
        u.surge >= self.surge_min
            && u.surge <= self.surge_max
            && u.yaw >= self.yaw_min
            && u.yaw <= self.yaw_max
    }

    pub fn lower(&self) -> [f64; 2] {
        [self.surge_min, self.yaw_min]
    }

    pub fn upper(&self) -> [f64; 2] {
        [self.surge_max, self.yaw_max]
    }

    /// Largest magnitude per channel, used for normalization.
    pub fn magnitude(&self) -> [f64; 2] {
        [
            self.surge_min.abs().max(self.surge_max.abs()),
            self.yaw_min.abs().max(self.yaw_max.abs()),
        ]
    }
}

/// Surge/sway forces and yaw moment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeneralizedForce {
    pub x: f64,
    pub y: f64,
    pub n: f64,
}

impl GeneralizedForce {
    pub const ZERO: Self = Self {
        x: 0.0,
        y: 0.0,
        n: 0.0,
    };

    pub fn new(x: f64, y: f64, n: f64) -> Self {
        Self { x, y, n }
    }
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.n)
    }
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl core::ops::Add for GeneralizedForce {
    type Output = GeneralizedForce;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y, self.n + rhs.n)
    }
}

pub fn build_matrices(params: &HydroParams) -> Result<RigidBodyMatrices, ModelError> {
    params.validate()?;
    let m11 = params.m - params.x_udot;
    let m22 = params.m - params.y_vdot;
    let m23 = params.m * params.x_g - params.y_rdot;
    let m32 = params.m * params.x_g - params.n_vdot;
    let m33 = params.i_z - params.n_rdot;
    let mass = Matrix3::new(m11, 0.0, 0.0, 0.0, m22, m23, 0.0, m32, m33);

    // Block inverse: surge is decoupled from the sway/yaw 2x2 block.
    let det_sy = m22 * m33 - m23 * m32;
    let det = m11 * det_sy;
    if m11.abs() < 1e-12 || det_sy.abs() < 1e-12 || !det.is_finite() {
        return Err(ModelError::SingularMass(det));
    }
    let mass_inv = Matrix3::new(
        1.0 / m11,
        0.0,
        0.0,
        0.0,
        m33 / det_sy,
        -m23 / det_sy,
        0.0,
        -m32 / det_sy,
        m22 / det_sy,
    );
    Ok(RigidBodyMatrices { mass, mass_inv })
}

pub fn rotation(psi: f64) -> Matrix3<f64> {
    let (s, c) = (math::sin(psi), math::cos(psi));
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn coriolis(mat: &RigidBodyMatrices, vel: &Velocity) -> Matrix3<f64> {
    let m11 = mat.m11();
    let m23 = mat.m23();
    let c13 = -m11 * vel.v - m23 * vel.r;
    let c23 = m11 * vel.u;
    Matrix3::new(0.0, 0.0, c13, 0.0, 0.0, c23, -c13, -c23, 0.0)
}

pub fn damping(params: &HydroParams, vel: &Velocity) -> Matrix3<f64> {
    let (au, av, ar) = (vel.u.abs(), vel.v.abs(), vel.r.abs());
    let p = params;
    let d11 = -p.x_u - p.x_absu_u * au - p.x_uuu * vel.u * vel.u;
    let d22 = -p.y_v - p.y_absv_v * av - p.y_absr_v * ar;
    let d23 = -p.y_r - p.y_absv_r * av - p.y_absr_r * ar;
    let d32 = -p.n_v - p.n_absv_v * av - p.n_absr_v * ar;
    let d33 = -p.n_r - p.n_absv_r * av - p.n_absr_r * ar;
    Matrix3::new(d11, 0.0, 0.0, 0.0, d22, d23, 0.0, d32, d33)
}

/// Damping with all nonlinear terms dropped.
pub fn linear_damping(params: &HydroParams) -> Matrix3<f64> {
    damping(params, &Velocity::default())
}

pub fn kinematics_ode(psi: f64, vel: &Velocity) -> Vector3<f64> {
    rotation(psi) * vel.to_vector()
}

/// Maps the 2-input actuation onto generalized forces; sway is unactuated.
pub fn allocate(u: ControlInput) -> GeneralizedForce {
    GeneralizedForce::new(u.surge, 0.0, u.yaw)
}

/// Steady-state surge speed under a constant surge force, i.e. the positive
/// root of `-X_u u - X_|u|u u^2 - X_uuu u^3 = F`.
pub fn max_surge_speed(params: &HydroParams, surge_force: f64) -> Result<f64, ModelError> {
    if !(surge_force >= 0.0) {
        return Err(ModelError::InvalidParameter("surge force must be non-negative"));
    }
    if surge_force == 0.0 {
        return Ok(0.0);
    }
    let residual = |u: f64| {
        -params.x_u * u - params.x_absu_u * u * u - params.x_uuu * u * u * u - surge_force
    };
    let mut hi = 1.0;
    while residual(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(ModelError::NoSteadyState(surge_force));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Vessel parameters bundled with their derived mass matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VesselModel {
    pub params: HydroParams,
    pub matrices: RigidBodyMatrices,
}

impl VesselModel {
    pub fn new(params: HydroParams) -> Result<Self, ModelError> {
        let matrices = build_matrices(&params)?;
        Ok(Self { params, matrices })
    }

    /// `M^-1 (-C(nu) nu - D(nu) nu + tau + tau_d)`.
    pub fn dynamics_ode(
        &self,
        vel: &Velocity,
        tau: &GeneralizedForce,
        tau_d: &GeneralizedForce,
    ) -> Vector3<f64> {
        let nu = vel.to_vector();
        let c = coriolis(&self.matrices, vel);
        let d = damping(&self.params, vel);
        self.matrices.mass_inv * (-c * nu - d * nu + tau.to_vector() + tau_d.to_vector())
    }

    /// Right-hand side of the coupled 6-state ODE.
    pub fn ode(&self, x: &StateVector, u: ControlInput, tau_d: &GeneralizedForce) -> StateVector {
        let vel = Velocity::new(x[3], x[4], x[5]);
        let eta_dot = kinematics_ode(x[2], &vel);
        let nu_dot = self.dynamics_ode(&vel, &allocate(u), tau_d);
        Vector6::new(eta_dot[0], eta_dot[1], eta_dot[2], nu_dot[0], nu_dot[1], nu_dot[2])
    }

    /// One classical RK4 step without heading wrap.
    pub fn rk4(
        &self,
        x: &StateVector,
        u: ControlInput,
        tau_d: &GeneralizedForce,
        dt: f64,
    ) -> StateVector {
        let k1 = self.ode(x, u, tau_d);
        let k2 = self.ode(&(x + k1 * (0.5 * dt)), u, tau_d);
        let k3 = self.ode(&(x + k2 * (0.5 * dt)), u, tau_d);
        let k4 = self.ode(&(x + k3 * dt), u, tau_d);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }

    /// Integrates one step and wraps the heading to `(-pi, pi]`.
    pub fn step(
        &self,
        state: &VesselState,
        u: ControlInput,
        tau_d: &GeneralizedForce,
        dt: f64,
    ) -> Result<VesselState, ModelError> {
        if !(dt > 0.0) {
            return Err(ModelError::InvalidParameter("dt must be positive"));
        }
        let mut next = self.rk4(&state.to_vector(), u, tau_d, dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        next[2] = math::wrap_angle(next[2]);
        Ok(VesselState::from_vector(&next))
    }

    /// Jacobian of `C(nu) nu` with respect to `nu`.
    pub fn coriolis_jacobian(&self, vel: &Velocity) -> Matrix3<f64> {
        // C(nu) is linear in nu, so d(C(nu) nu)/dnu = C(nu) + [C(e1) nu, C(e2) nu, C(e3) nu].
        let nu = vel.to_vector();
        let mut jac = coriolis(&self.matrices, vel);
        for k in 0..3 {
            let mut e = Vector3::zeros();
            e[k] = 1.0;
            let col = coriolis(&self.matrices, &Velocity::from_vector(&e)) * nu;
            for i in 0..3 {
                jac[(i, k)] += col[i];
            }
        }
        jac
    }

    /// Jacobian of `D(nu) nu` with respect to `nu`, using `d|x|/dx = sign(x)`.
    fn damping_jacobian(&self, vel: &Velocity) -> Matrix3<f64> {
        let p = &self.params;
        let (u, v, r) = (vel.u, vel.v, vel.r);
        let d = damping(p, vel);
        let mut jac = Matrix3::zeros();
        jac[(0, 0)] = -p.x_u - 2.0 * p.x_absu_u * u.abs() - 3.0 * p.x_uuu * u * u;
        jac[(1, 1)] = d[(1, 1)] - p.y_absv_v * v.abs() - p.y_absv_r * sign(v) * r;
        jac[(1, 2)] = d[(1, 2)] - p.y_absr_v * sign(r) * v - p.y_absr_r * r.abs();
        jac[(2, 1)] = d[(2, 1)] - p.n_absv_v * v.abs() - p.n_absv_r * sign(v) * r;
        jac[(2, 2)] = d[(2, 2)] - p.n_absr_v * sign(r) * v - p.n_absr_r * r.abs();
        jac
    }

    /// Continuous-time Jacobians `(df/dx, df/du)` of the full model.
    pub fn ode_jacobian(&self, x: &StateVector) -> (StateMatrix, InputMatrix) {
        let vel = Velocity::new(x[3], x[4], x[5]);
        let psi = x[2];
        let (s, c) = (math::sin(psi), math::cos(psi));
        let mut a = StateMatrix::zeros();
        // d(R(psi) nu)/dpsi
        a[(0, 2)] = -s * vel.u - c * vel.v;
        a[(1, 2)] = c * vel.u - s * vel.v;
        let rot = rotation(psi);
        for i in 0..3 {
            for j in 0..3 {
                a[(i, 3 + j)] = rot[(i, j)];
            }
        }
        let dyn_jac =
            -(self.matrices.mass_inv * (self.coriolis_jacobian(&vel) + self.damping_jacobian(&vel)));
        for i in 0..3 {
            for j in 0..3 {
                a[(3 + i, 3 + j)] = dyn_jac[(i, j)];
            }
        }
        (a, self.input_matrix())
    }

    /// `df/du`: constant because the actuation enters linearly.
    pub fn input_matrix(&self) -> InputMatrix {
        let k = &self.matrices.mass_inv;
        let mut b = InputMatrix::zeros();
        for i in 0..3 {
            b[(3 + i, 0)] = k[(i, 0)];
            b[(3 + i, 1)] = k[(i, 2)];
        }
        b
    }

    /// RK4 step together with its sensitivities `(x+, dx+/dx, dx+/du)`.
    pub fn rk4_with_jacobian(
        &self,
        x: &StateVector,
        u: ControlInput,
        tau_d: &GeneralizedForce,
        dt: f64,
    ) -> (StateVector, StateMatrix, InputMatrix) {
        let eye = StateMatrix::identity();
        let bu = self.input_matrix();
        let h = dt;

        let k1 = self.ode(x, u, tau_d);
        let (a1, _) = self.ode_jacobian(x);
        let dk1_dx = a1;
        let dk1_du = bu;

        let x2 = x + k1 * (0.5 * h);
        let k2 = self.ode(&x2, u, tau_d);
        let (a2, _) = self.ode_jacobian(&x2);
        let dk2_dx = a2 * (eye + dk1_dx * (0.5 * h));
        let dk2_du = a2 * (dk1_du * (0.5 * h)) + bu;

        let x3 = x + k2 * (0.5 * h);
        let k3 = self.ode(&x3, u, tau_d);
        let (a3, _) = self.ode_jacobian(&x3);
        let dk3_dx = a3 * (eye + dk2_dx * (0.5 * h));
        let dk3_du = a3 * (dk2_du * (0.5 * h)) + bu;

        let x4 = x + k3 * h;
        let k4 = self.ode(&x4, u, tau_d);
        let (a4, _) = self.ode_jacobian(&x4);
        let dk4_dx = a4 * (eye + dk3_dx * h);
        let dk4_du = a4 * (dk3_du * h) + bu;

        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let jx = eye + (dk1_dx + dk2_dx * 2.0 + dk3_dx * 2.0 + dk4_dx) * (h / 6.0);
        let ju = (dk1_du + dk2_du * 2.0 + dk3_du * 2.0 + dk4_du) * (h / 6.0);
        (next, jx, ju)
    }
}
