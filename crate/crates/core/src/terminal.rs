//! Offline synthesis of the terminal control-invariant ellipsoid.
//!
//! The set lives on the velocities: `{nu : (nu - nu_e)' P (nu - nu_e) <= 1}`
//! with the local law `u = clamp(u_e + K (nu - nu_e))` about the rest
//! equilibrium. Position enters through the distance the vessel can travel
//! under that law, which must stay inside the square inscribed in the disc of
//! radius `d_f` around the last predicted position. An underactuated vessel
//! cannot be steered back sideways at rest, so position is bounded rather
//! than regulated.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, SMatrix, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, standard_normal};
use crate::vessel::{
    linear_damping, max_surge_speed, rotation, ControlInput, GeneralizedForce, HydroParams,
    InputBounds, InputMatrix, ModelError, StateMatrix, StateVector, Velocity, VesselModel,
};

type AugMatrix = SMatrix<f64, 8, 8>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TerminalError {
    #[error("equilibrium: {0}")]
    Model(#[from] ModelError),
    #[error("polytope has an empty interior around the equilibrium (row {row}, margin {margin})")]
    EmptyPolytope { row: usize, margin: f64 },
    #[error("discretized pair (A, B) is not stabilizable")]
    NotStabilizable,
    #[error("Riccati iteration did not converge")]
    RiccatiDiverged,
    #[error("terminal matrix is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("invalid synthesis setting: {0}")]
    InvalidConfig(&'static str),
    #[error(
        "nonlinear verification failed after {iterations} refinements; {failures} of {samples} samples left the set"
    )]
    VerificationFailed {
        iterations: usize,
        failures: usize,
        samples: usize,
        /// A few offending samples `(u, v, r, heading)` for diagnostics.
        examples: Vec<[f64; 4]>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: [f64; 6],
    pub input: ControlInput,
}

impl Equilibrium {
    pub fn state_vector(&self) -> StateVector {
        StateVector::from(self.state)
    }
}

/// Equilibrium under constant surge thrust with zero yaw moment.
pub fn compute_equilibrium(params: &HydroParams, surge_force: f64) -> Result<Equilibrium, TerminalError> {
    let u = max_surge_speed(params, surge_force)?;
    Ok(Equilibrium {
        state: [0.0, 0.0, 0.0, u, 0.0, 0.0],
        input: ControlInput::new(surge_force, 0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedModel {
    pub a: StateMatrix,
    pub b: InputMatrix,
}

/// Continuous-time Jacobians of the model with nonlinear damping dropped.
pub fn linearize(model: &VesselModel, eq: &Equilibrium) -> LinearizedModel {
    let x = eq.state;
    let vel = Velocity::new(x[3], x[4], x[5]);
    let psi = x[2];
    let mut a = StateMatrix::zeros();
    let (s, c) = (math::sin(psi), math::cos(psi));
    a[(0, 2)] = -s * vel.u - c * vel.v;
    a[(1, 2)] = c * vel.u - s * vel.v;
    let rot = rotation(psi);
    let lower: Matrix3<f64> =
        -(model.matrices.mass_inv * (model.coriolis_jacobian(&vel) + linear_damping(&model.params)));
    for i in 0..3 {
        for j in 0..3 {
            a[(i, 3 + j)] = rot[(i, j)];
            a[(3 + i, 3 + j)] = lower[(i, j)];
        }
    }
    LinearizedModel {
        a,
        b: model.input_matrix(),
    }
}

/// Right-hand side of the model used for linearization (linear damping only).
pub fn simplified_ode(model: &VesselModel, x: &StateVector, u: ControlInput) -> StateVector {
    let vel = Velocity::new(x[3], x[4], x[5]);
    let nu = vel.to_vector();
    let eta_dot = rotation(x[2]) * nu;
    let c = crate::vessel::coriolis(&model.matrices, &vel);
    let tau = GeneralizedForce::new(u.surge, 0.0, u.yaw).to_vector();
    let nu_dot = model.matrices.mass_inv * (-c * nu - linear_damping(&model.params) * nu + tau);
    StateVector::new(eta_dot[0], eta_dot[1], eta_dot[2], nu_dot[0], nu_dot[1], nu_dot[2])
}

/// Velocity and heading box used to build the polytope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateBounds {
    pub surge: [f64; 2],
    pub sway: [f64; 2],
    pub yaw_rate: [f64; 2],
    /// Symmetric bound on the heading offset (rad).
    pub heading: f64,
}

impl StateBounds {
    pub fn for_speed(u_max: f64) -> Self {
        Self {
            surge: [-0.2, u_max],
            sway: [-0.3, 0.3],
            yaw_rate: [-0.3, 0.3],
            heading: core::f64::consts::FRAC_PI_2,
        }
    }
}

/// Polytope rows `H x_bar <= h` and `G u_bar <= g` in shifted coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeConstraints {
    pub state_rows: Vec<(SVector<f64, 6>, f64)>,
    pub input_rows: Vec<(SVector<f64, 2>, f64)>,
}

impl PolytopeConstraints {
    pub fn contains(&self, x_bar: &StateVector, u_bar: &SVector<f64, 2>, tol: f64) -> bool {
        self.state_rows.iter().all(|(h, rhs)| h.dot(x_bar) <= rhs + tol)
            && self.input_rows.iter().all(|(g, rhs)| g.dot(u_bar) <= rhs + tol)
    }
}

pub fn build_polytope(
    d_f: f64,
    bounds: &StateBounds,
    inputs: &InputBounds,
    eq: &Equilibrium,
) -> Result<PolytopeConstraints, TerminalError> {
    if !(d_f > 0.0) {
        return Err(TerminalError::InvalidConfig("d_f must be positive"));
    }
    let half_side = d_f / core::f64::consts::SQRT_2;
    let x_e = eq.state;
    let mut state_rows = Vec::new();
    let mut push_state = |idx: usize, lo: f64, hi: f64| {
        let mut row = SVector::<f64, 6>::zeros();
        row[idx] = 1.0;
        state_rows.push((row, hi - x_e[idx]));
        state_rows.push((-row, x_e[idx] - lo));
    };
    push_state(0, -half_side, half_side);
    push_state(1, -half_side, half_side);
    push_state(2, -bounds.heading, bounds.heading);
    push_state(3, bounds.surge[0], bounds.surge[1]);
    push_state(4, bounds.sway[0], bounds.sway[1]);
    push_state(5, bounds.yaw_rate[0], bounds.yaw_rate[1]);

    let u_e = eq.input.to_array();
    let mut input_rows = Vec::new();
    for (idx, (lo, hi)) in [(inputs.surge_min, inputs.surge_max), (inputs.yaw_min, inputs.yaw_max)]
        .into_iter()
        .enumerate()
    {
        let mut row = SVector::<f64, 2>::zeros();
        row[idx] = 1.0;
        input_rows.push((row, hi - u_e[idx]));
        input_rows.push((-row, u_e[idx] - lo));
    }

    let margins = state_rows.iter().map(|r| r.1).chain(input_rows.iter().map(|r| r.1));
    for (row, margin) in margins.enumerate() {
        if !(margin > 0.0) {
            return Err(TerminalError::EmptyPolytope { row, margin });
        }
    }
    Ok(PolytopeConstraints {
        state_rows,
        input_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub dt: f64,
    /// LQR weight on the velocity states `(u, v, r)`.
    pub state_weight: [f64; 3],
    pub input_weight: [f64; 2],
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            state_weight: [10.0, 10.0, 10.0],
            input_weight: [10.0, 10.0],
        }
    }
}

/// Velocity ellipsoid `{nu_bar : nu_bar' P nu_bar <= 1}` with its local law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSet {
    /// Velocity shape matrix, row-major.
    pub p_nu: [[f64; 3]; 3],
    /// Velocity feedback gain, row-major.
    pub k: [[f64; 3]; 2],
    pub d_f: f64,
    pub equilibrium: Equilibrium,
    pub dt: f64,
    /// Upper bound on the distance travelled under the local law when
    /// starting on the ellipsoid boundary.
    pub travel_bound: f64,
    pub verified: bool,
    pub samples: usize,
    pub refinements: usize,
}

impl TerminalSet {
    pub fn p_nu_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.p_nu[i][j])
    }

    pub fn gain(&self) -> Matrix2x3<f64> {
        Matrix2x3::from_fn(|i, j| self.k[i][j])
    }

    fn nu_e(&self) -> Vector3<f64> {
        Vector3::new(self.equilibrium.state[3], self.equilibrium.state[4], self.equilibrium.state[5])
    }

    /// Quadratic form of a velocity.
    pub fn level(&self, nu: &Vector3<f64>) -> f64 {
        let d = nu - self.nu_e();
        (d.transpose() * self.p_nu_matrix() * d)[0]
    }

    /// Local control law, clamped to the input bounds.
    pub fn control(&self, nu: &Vector3<f64>, bounds: &InputBounds) -> ControlInput {
        let du = self.gain() * (nu - self.nu_e());
        bounds.clamp(ControlInput::new(
            self.equilibrium.input.surge + du[0],
            self.equilibrium.input.yaw + du[1],
        ))
    }

    fn scale_p(&mut self, factor: f64) {
        for row in self.p_nu.iter_mut() {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        self.travel_bound /= math::sqrt(factor);
    }
}

pub fn extract_pf_nu(term: &TerminalSet) -> Matrix3<f64> {
    term.p_nu_matrix()
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
fn expm(m: &AugMatrix) -> AugMatrix {
    let norm = m.abs().row_sum().max();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = m * scale;
    let mut term = AugMatrix::identity();
    let mut sum = AugMatrix::identity();
    for k in 1..=18 {
        term = term * a / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Zero-order-hold discretization of `(A, B)`.
pub fn discretize(model: &LinearizedModel, dt: f64) -> (StateMatrix, InputMatrix) {
    let mut aug = AugMatrix::zeros();
    aug.fixed_view_mut::<6, 6>(0, 0).copy_from(&(model.a * dt));
    aug.fixed_view_mut::<6, 2>(0, 6).copy_from(&(model.b * dt));
    let e = expm(&aug);
    (e.fixed_view::<6, 6>(0, 0).into_owned(), e.fixed_view::<6, 2>(0, 6).into_owned())
}

/// Spectral radius below one, tested through repeated squaring.
fn is_schur_stable(a: &Matrix3<f64>) -> bool {
    let mut power = *a;
    for _ in 0..40 {
        let n = power.abs().max();
        if !n.is_finite() || n > 1e12 {
            return false;
        }
        if n < 1e-12 {
            return true;
        }
        power = power * power;
    }
    false
}

/// Solves `P = A' P A + Q` by doubling; requires a Schur-stable `A`.
pub fn discrete_lyapunov(a: &Matrix3<f64>, q: &Matrix3<f64>) -> Matrix3<f64> {
    let mut p = *q;
    let mut ak = *a;
    for _ in 0..60 {
        let next = p + ak.transpose() * p * ak;
        ak = ak * ak;
        let done = (next - p).abs().max() <= 1e-15 * next.abs().max();
        p = next;
        if done {
            break;
        }
    }
    (p + p.transpose()) * 0.5
}

/// Stabilizing solution of the discrete algebraic Riccati equation via the
/// structure-preserving doubling algorithm.
pub fn solve_dare(
    a: &Matrix3<f64>,
    b: &Matrix3x2<f64>,
    q: &Matrix3<f64>,
    r: &Matrix2<f64>,
) -> Result<Matrix3<f64>, TerminalError> {
    let r_inv = r.try_inverse().ok_or(TerminalError::InvalidConfig("input weight must be invertible"))?;
    let mut ak = *a;
    let mut g = b * r_inv * b.transpose();
    let mut h = *q;
    let eye = Matrix3::identity();
    for _ in 0..100 {
        let w_inv = (eye + g * h).try_inverse().ok_or(TerminalError::RiccatiDiverged)?;
        let a_next = ak * w_inv * ak;
        let g_next = g + ak * w_inv * g * ak.transpose();
        let h_next = h + ak.transpose() * h * w_inv * ak;
        let delta = (h_next - h).abs().max();
        ak = a_next;
        g = (g_next + g_next.transpose()) * 0.5;
        h = (h_next + h_next.transpose()) * 0.5;
        if !h.iter().all(|v| v.is_finite()) || h.abs().max() > 1e14 {
            return Err(TerminalError::NotStabilizable);
        }
        if delta <= 1e-13 * h.abs().max() {
            return Ok(h);
        }
    }
    Err(TerminalError::RiccatiDiverged)
}

/// Largest singular value of a 2x3 matrix.
fn spectral_norm(m: &Matrix2x3<f64>) -> f64 {
    let g = m * m.transpose();
    let tr = g[(0, 0)] + g[(1, 1)];
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    let disc = (0.25 * tr * tr - det).max(0.0);
    math::sqrt((0.5 * tr + math::sqrt(disc)).max(0.0))
}

/// Bound on `sum_k dt * |(u_k, v_k)|` for the closed loop started anywhere on
/// `{nu' P nu = 1}`.
fn travel_bound(a_cl: &Matrix3<f64>, p: &Matrix3<f64>, dt: f64) -> f64 {
    let eig = p.symmetric_eigen();
    let inv_sqrt = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / math::sqrt(l)));
    let p_inv_half = eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let mut power = p_inv_half;
    let mut total = 0.0;
    for _ in 0..200_000 {
        let planar = Matrix2x3::from_fn(|i, j| power[(i, j)]);
        let step = spectral_norm(&planar);
        total += dt * step;
        if step < 1e-14 * total.max(1e-300) {
            break;
        }
        power = a_cl * power;
    }
    total
}

/// LQR gain on the velocity subsystem plus a Lyapunov ellipsoid scaled to
/// respect the polytope. Position rows are enforced through the travel bound,
/// which holds for any heading; heading rows do not restrict the velocity set.
pub fn synthesize(
    model: &LinearizedModel,
    poly: &PolytopeConstraints,
    eq: &Equilibrium,
    d_f: f64,
    cfg: &SynthesisConfig,
) -> Result<TerminalSet, TerminalError> {
    if !(cfg.dt > 0.0) {
        return Err(TerminalError::InvalidConfig("dt must be positive"));
    }
    if cfg.state_weight.iter().chain(cfg.input_weight.iter()).any(|w| !(*w > 0.0)) {
        return Err(TerminalError::InvalidConfig("LQR weights must be positive"));
    }
    let (ad6, bd6) = discretize(model, cfg.dt);
    let ad: Matrix3<f64> = ad6.fixed_view::<3, 3>(3, 3).into_owned();
    let bd: Matrix3x2<f64> = bd6.fixed_view::<3, 2>(3, 0).into_owned();
    if bd.abs().max() == 0.0 {
        return Err(TerminalError::NotStabilizable);
    }
    let q = Matrix3::from_diagonal(&Vector3::from(cfg.state_weight));
    let r = Matrix2::from_diagonal(&nalgebra::Vector2::from(cfg.input_weight));
    let p_dare = solve_dare(&ad, &bd, &q, &r)?;
    let s = r + bd.transpose() * p_dare * bd;
    let s_inv = s.try_inverse().ok_or(TerminalError::RiccatiDiverged)?;
    let k: Matrix2x3<f64> = -(s_inv * bd.transpose() * p_dare * ad);
    let a_cl = ad + bd * k;
    if !is_schur_stable(&a_cl) {
        return Err(TerminalError::NotStabilizable);
    }
    let p0 = discrete_lyapunov(&a_cl, &(q + k.transpose() * r * k));
    let min_eig = p0.symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(TerminalError::NotPositiveDefinite(min_eig));
    }
    let p0_inv = p0.try_inverse().ok_or(TerminalError::NotPositiveDefinite(min_eig))?;
    let travel = travel_bound(&a_cl, &p0, cfg.dt);

    let mut alpha = f64::INFINITY;
    for (h, rhs) in &poly.state_rows {
        let pos = Vector3::new(h[0], h[1], h[2]);
        let vel = Vector3::new(h[3], h[4], h[5]);
        if pos.iter().all(|v| *v == 0.0) {
            let spread = (vel.transpose() * p0_inv * vel)[0];
            if spread > 0.0 {
                alpha = alpha.min(rhs * rhs / spread);
            }
        } else if pos[2] == 0.0 {
            let reach = math::hypot(pos[0], pos[1]) * travel;
            if vel.iter().any(|v| *v != 0.0) {
                return Err(TerminalError::InvalidConfig("mixed position/velocity rows are not supported"));
            }
            if reach > 0.0 {
                alpha = alpha.min(rhs * rhs / (reach * reach));
            }
        }
    }
    for (g, rhs) in &poly.input_rows {
        let gk = k.transpose() * g;
        let spread = (gk.transpose() * p0_inv * gk)[0];
        if spread > 0.0 {
            alpha = alpha.min(rhs * rhs / spread);
        }
    }
    if !alpha.is_finite() || !(alpha > 0.0) {
        return Err(TerminalError::InvalidConfig("polytope does not bound the ellipsoid"));
    }
    let p = p0 / alpha;
    Ok(TerminalSet {
        p_nu: core::array::from_fn(|i| core::array::from_fn(|j| p[(i, j)])),
        k: core::array::from_fn(|i| core::array::from_fn(|j| k[(i, j)])),
        d_f,
        equilibrium: *eq,
        dt: cfg.dt,
        travel_bound: travel * math::sqrt(alpha),
        verified: false,
        samples: 0,
        refinements: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub samples: usize,
    pub steps: usize,
    /// Factor applied to `P` on every refinement (`P <- P / shrink`).
    pub shrink: f64,
    pub max_refinements: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            steps: 120,
            shrink: 0.9,
            max_refinements: 60,
            seed: 0x5eed,
        }
    }
}

/// Point on the ellipsoid boundary along a random direction.
pub fn boundary_sample<R: rand::Rng + ?Sized>(p: &Matrix3<f64>, rng: &mut R) -> Vector3<f64> {
    loop {
        let d = Vector3::from_fn(|_, _| standard_normal(rng));
        let level = (d.transpose() * p * d)[0];
        if level > 1e-300 {
            return d / math::sqrt(level);
        }
    }
}

/// Result of rolling one boundary sample forward under the local law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rollout {
    pub max_level: f64,
    /// Largest `max(|x|, |y|)` offset from the start position.
    pub max_offset: f64,
    pub input_violation: bool,
}

/// Simulates the full nonlinear model from the reference pose with velocity
/// `nu_e + nu_bar0` and the given heading.
pub fn rollout(
    model: &VesselModel,
    term: &TerminalSet,
    inputs: &InputBounds,
    nu_bar0: &Vector3<f64>,
    heading: f64,
    steps: usize,
) -> Rollout {
    let nu0 = term.nu_e() + nu_bar0;
    let mut x = StateVector::new(0.0, 0.0, heading, nu0[0], nu0[1], nu0[2]);
    let mut out = Rollout {
        max_level: term.level(&nu0),
        max_offset: 0.0,
        input_violation: false,
    };
    let k = term.gain();
    for _ in 0..steps {
        let nu = Vector3::new(x[3], x[4], x[5]);
        let du = k * (nu - term.nu_e());
        let raw = ControlInput::new(term.equilibrium.input.surge + du[0], term.equilibrium.input.yaw + du[1]);
        if !inputs.contains(raw) {
            out.input_violation = true;
        }
        x = model.rk4(&x, inputs.clamp(raw), &GeneralizedForce::ZERO, term.dt);
        let nu = Vector3::new(x[3], x[4], x[5]);
        let level = term.level(&nu);
        out.max_level = if level.is_finite() { out.max_level.max(level) } else { f64::INFINITY };
        out.max_offset = out.max_offset.max(x[0].abs().max(x[1].abs()));
    }
    out
}

/// Shrinks the set until every boundary sample stays inside the ellipsoid and
/// the position square under the full nonlinear model.
pub fn verify_nonlinear(
    mut term: TerminalSet,
    model: &VesselModel,
    inputs: &InputBounds,
    cfg: &VerifyConfig,
) -> Result<TerminalSet, TerminalError> {
    if !(cfg.shrink > 0.0 && cfg.shrink < 1.0) {
        return Err(TerminalError::InvalidConfig("shrink factor must lie in (0, 1)"));
    }
    let half_side = term.d_f / core::f64::consts::SQRT_2;
    // Directions and headings are fixed across refinements; only the scale changes.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<(Vector3<f64>, f64)> = (0..cfg.samples)
        .map(|_| {
            let d = Vector3::from_fn(|_, _| standard_normal(&mut rng));
            let heading = rng.gen_range(-core::f64::consts::PI..core::f64::consts::PI);
            (d, heading)
        })
        .collect();
    for iteration in 0..=cfg.max_refinements {
        let p = term.p_nu_matrix();
        let mut failures = 0;
        let mut examples = Vec::new();
        for (d, heading) in &samples {
            let level = (d.transpose() * p * d)[0];
            if !(level > 0.0) {
                continue;
            }
            let nu_bar0 = d / math::sqrt(level);
            let r = rollout(model, &term, inputs, &nu_bar0, *heading, cfg.steps);
            if r.max_level > 1.0 + 1e-9 || r.max_offset > half_side || r.input_violation {
                failures += 1;
                if examples.len() < 5 {
                    examples.push([nu_bar0[0], nu_bar0[1], nu_bar0[2], *heading]);
                }
            }
        }
        if failures == 0 {
            term.verified = true;
            term.samples = cfg.samples;
            term.refinements = iteration;
            return Ok(term);
        }
        if iteration == cfg.max_refinements {
            return Err(TerminalError::VerificationFailed {
                iterations: iteration,
                failures,
                samples: cfg.samples,
                examples,
            });
        }
        term.scale_p(1.0 / cfg.shrink);
    }
    unreachable!("loop returns on the last iteration")
}

/// Inputs for the complete synthesis pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminalSetSpec {
    pub params: HydroParams,
    pub inputs: InputBounds,
    /// Surge thrust defining the equilibrium; zero gives the rest equilibrium.
    pub equilibrium_surge_force: f64,
    pub d_f: f64,
    pub bounds: Option<StateBounds>,
    pub synthesis: SynthesisConfig,
    pub verify: VerifyConfig,
}

impl Default for TerminalSetSpec {
    fn default() -> Self {
        Self {
            params: HydroParams::default(),
            inputs: InputBounds::default(),
            equilibrium_surge_force: 0.0,
            d_f: 5.0,
            bounds: None,
            synthesis: SynthesisConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl TerminalSetSpec {
    /// State box, defaulting to one scaled to the vessel's top speed.
    pub fn state_bounds(&self) -> Result<StateBounds, TerminalError> {
        match self.bounds {
            Some(b) => Ok(b),
            None => Ok(StateBounds::for_speed(max_surge_speed(&self.params, self.inputs.surge_max)?)),
        }
    }
}

/// Equilibrium, linearization, polytope, synthesis and verification.
pub fn synthesize_verified(spec: &TerminalSetSpec) -> Result<TerminalSet, TerminalError> {
    let model = VesselModel::new(spec.params)?;
    let eq = compute_equilibrium(&spec.params, spec.equilibrium_surge_force)?;
    if eq.state[3] != 0.0 {
        return Err(TerminalError::InvalidConfig(
            "a moving equilibrium has unbounded travel; use zero equilibrium thrust",
        ));
    }
    let lin = linearize(&model, &eq);
    let poly = build_polytope(spec.d_f, &spec.state_bounds()?, &spec.inputs, &eq)?;
    let term = synthesize(&lin, &poly, &eq, spec.d_f, &spec.synthesis)?;
    verify_nonlinear(term, &model, &spec.inputs, &spec.verify)
}
