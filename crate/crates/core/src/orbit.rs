//! Linearized relative orbital motion about a circular reference orbit.
//!
//! States are ordered `[x, ẋ, y, ẏ, z, ż]` in the LVLH frame (radial,
//! along-track, cross-track). Units are km, km/s and km/s² throughout.
//! Propagation uses the closed-form Clohessy–Wiltshire state-transition
//! matrix with a zero-order-hold control term, so a step is a single
//! matrix-vector product and exactly reproducible.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat6x3 = SMatrix<f64, 6, 3>;
pub type Vec6 = SVector<f64, 6>;
pub type Vec3 = SVector<f64, 3>;

/// Standard gravitational parameter of the Earth (km³/s²).
pub const MU_EARTH: f64 = 398_600.441_8;
/// Geostationary reference orbit radius (km).
pub const GEO_RADIUS_KM: f64 = 42_164.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("orbital angular velocity must be finite and positive, got {0}")]
    BadOmega(f64),
    #[error("invalid orbit parameter {name} = {value}")]
    BadOrbit { name: &'static str, value: f64 },
    #[error("time step must be non-negative, got {0}")]
    NegativeStep(f64),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("substeps must be at least 1")]
    ZeroSubsteps,
}

/// Reference orbit: gravitational constant, radius and mean motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitParams {
    pub mu: f64,
    pub a0: f64,
    pub omega: f64,
}

impl OrbitParams {
    /// Derives the mean motion `ω = sqrt(μ / a₀³)`.
    pub fn from_radius(mu: f64, a0: f64) -> Result<Self, DynamicsError> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(DynamicsError::BadOrbit { name: "mu", value: mu });
        }
        if !(a0.is_finite() && a0 > 0.0) {
            return Err(DynamicsError::BadOrbit { name: "a0", value: a0 });
        }
        Ok(Self { mu, a0, omega: (mu / (a0 * a0 * a0)).sqrt() })
    }

    /// Uses a supplied mean motion; `a0` is kept for bookkeeping only.
    pub fn with_omega(mu: f64, a0: f64, omega: f64) -> Result<Self, DynamicsError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(DynamicsError::BadOmega(omega));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(DynamicsError::BadOrbit { name: "mu", value: mu });
        }
        if !(a0.is_finite() && a0 > 0.0) {
            return Err(DynamicsError::BadOrbit { name: "a0", value: a0 });
        }
        Ok(Self { mu, a0, omega })
    }

    pub fn geo() -> Self {
        Self::from_radius(MU_EARTH, GEO_RADIUS_KM).expect("GEO constants are valid")
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(DynamicsError::BadOmega(self.omega));
        }
        Ok(())
    }
}

impl Default for OrbitParams {
    fn default() -> Self {
        Self::geo()
    }
}

/// Relative position (km) and velocity (km/s) of one satellite.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LvlhState {
    pub x: f64,
    pub xdot: f64,
    pub y: f64,
    pub ydot: f64,
    pub z: f64,
    pub zdot: f64,
}

impl LvlhState {
    pub const ZERO: Self = Self { x: 0.0, xdot: 0.0, y: 0.0, ydot: 0.0, z: 0.0, zdot: 0.0 };

    pub fn from_array(v: [f64; 6]) -> Self {
        Self { x: v[0], xdot: v[1], y: v[2], ydot: v[3], z: v[4], zdot: v[5] }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.xdot, self.y, self.ydot, self.z, self.zdot]
    }

    pub fn from_pos_vel(pos: [f64; 3], vel: [f64; 3]) -> Self {
        Self { x: pos[0], xdot: vel[0], y: pos[1], ydot: vel[1], z: pos[2], zdot: vel[2] }
    }

    pub fn to_vector(self) -> Vec6 {
        Vec6::from(self.to_array())
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Self::from_array([v[0], v[1], v[2], v[3], v[4], v[5]])
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.xdot, self.ydot, self.zdot]
    }

    pub fn set_velocity(&mut self, v: [f64; 3]) {
        self.xdot = v[0];
        self.ydot = v[1];
        self.zdot = v[2];
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    pub fn speed(&self) -> f64 {
        norm3(self.velocity())
    }

    /// `self − other`, component-wise.
    pub fn relative_to(&self, other: &LvlhState) -> LvlhState {
        let a = self.to_array();
        let b = other.to_array();
        Self::from_array(std::array::from_fn(|i| a[i] - b[i]))
    }
}

/// Thrust acceleration (km/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlAccel {
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl ControlAccel {
    pub const ZERO: Self = Self { ax: 0.0, ay: 0.0, az: 0.0 };

    pub fn new(ax: f64, ay: f64, az: f64) -> Self {
        Self { ax, ay, az }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { ax: a[0], ay: a[1], az: a[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.ax, self.ay, self.az]
    }

    pub fn norm(&self) -> f64 {
        norm3(self.to_array())
    }

    pub fn is_finite(&self) -> bool {
        self.ax.is_finite() && self.ay.is_finite() && self.az.is_finite()
    }

    /// Rescales so that the Euclidean norm does not exceed `bound`.
    pub fn clipped(self, bound: f64) -> Self {
        let n = self.norm();
        if n > bound && n > 0.0 {
            let s = bound / n;
            Self { ax: self.ax * s, ay: self.ay * s, az: self.az * s }
        } else {
            self
        }
    }
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Continuous-time system `Ẋ = A X + B a`.
#[derive(Debug, Clone, PartialEq)]
pub struct CwMatrices {
    pub a: Mat6,
    pub b: Mat6x3,
}

/// Exact discretization over one step of length `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTransition {
    pub phi: Mat6,
    pub gamma: Mat6x3,
    pub dt: f64,
}

/// Builds the CW system matrices. `ω = 0` is accepted and yields the pure
/// double integrator; negative or non-finite values are rejected.
pub fn cw_matrices_for(omega: f64) -> Result<CwMatrices, DynamicsError> {
    if !(omega.is_finite() && omega >= 0.0) {
        return Err(DynamicsError::BadOmega(omega));
    }
    let w = omega;
    let mut a = Mat6::zeros();
    a[(0, 1)] = 1.0;
    a[(1, 0)] = 3.0 * w * w;
    a[(1, 3)] = 2.0 * w;
    a[(2, 3)] = 1.0;
    a[(3, 1)] = -2.0 * w;
    a[(4, 5)] = 1.0;
    a[(5, 4)] = -w * w;
    Ok(CwMatrices { a, b: input_matrix() })
}

pub fn cw_matrices(orbit: &OrbitParams) -> Result<CwMatrices, DynamicsError> {
    orbit.validate()?;
    cw_matrices_for(orbit.omega)
}

fn input_matrix() -> Mat6x3 {
    let mut b = Mat6x3::zeros();
    b[(1, 0)] = 1.0;
    b[(3, 1)] = 1.0;
    b[(5, 2)] = 1.0;
    b
}

/// `sin θ − θ` without cancellation for small θ.
fn sin_minus_arg(theta: f64) -> f64 {
    if theta.abs() < 0.1 {
        let t2 = theta * theta;
        // Horner form of −θ³/3! + θ⁵/5! − θ⁷/7! + θ⁹/9! − θ¹¹/11!
        -theta
            * t2
            * (1.0 / 6.0 - t2 * (1.0 / 120.0 - t2 * (1.0 / 5040.0 - t2 * (1.0 / 362_880.0 - t2 / 39_916_800.0))))
    } else {
        theta.sin() - theta
    }
}

/// `1 − cos θ` without cancellation.
fn one_minus_cos(theta: f64) -> f64 {
    let h = (0.5 * theta).sin();
    2.0 * h * h
}

/// Closed-form state-transition and zero-order-hold input matrices.
pub fn state_transition(orbit: &OrbitParams, dt: f64) -> Result<DiscreteTransition, DynamicsError> {
    orbit.validate()?;
    if dt.is_nan() || dt < 0.0 {
        return Err(DynamicsError::NegativeStep(dt));
    }
    Ok(transition_signed(orbit.omega, dt))
}

/// Transition over a signed interval; callers outside the crate go through
/// [`state_transition`], which rejects negative steps.
pub(crate) fn transition_signed(omega: f64, t: f64) -> DiscreteTransition {
    let n = omega;
    let th = n * t;
    let (s, c) = th.sin_cos();
    let omc = one_minus_cos(th);
    let smt = sin_minus_arg(th);

    let mut phi = Mat6::zeros();
    // in-plane block on (x, ẋ, y, ẏ) = indices (0, 1, 2, 3)
    phi[(0, 0)] = 1.0 + 3.0 * omc;
    phi[(0, 1)] = s / n;
    phi[(0, 3)] = 2.0 * omc / n;
    phi[(1, 0)] = 3.0 * n * s;
    phi[(1, 1)] = c;
    phi[(1, 3)] = 2.0 * s;
    phi[(2, 0)] = 6.0 * smt;
    phi[(2, 1)] = -2.0 * omc / n;
    phi[(2, 2)] = 1.0;
    phi[(2, 3)] = t + 4.0 * smt / n;
    phi[(3, 0)] = -6.0 * n * omc;
    phi[(3, 1)] = -2.0 * s;
    phi[(3, 3)] = 1.0 - 4.0 * omc;
    // out-of-plane harmonic block on (z, ż)
    phi[(4, 4)] = c;
    phi[(4, 5)] = s / n;
    phi[(5, 4)] = -n * s;
    phi[(5, 5)] = c;

    let n2 = n * n;
    let mut gamma = Mat6x3::zeros();
    // response to a constant radial acceleration
    gamma[(0, 0)] = omc / n2;
    gamma[(1, 0)] = s / n;
    gamma[(2, 0)] = 2.0 * smt / n2;
    gamma[(3, 0)] = -2.0 * omc / n;
    // along-track acceleration
    gamma[(0, 1)] = -2.0 * smt / n2;
    gamma[(1, 1)] = 2.0 * omc / n;
    gamma[(2, 1)] = 4.0 * omc / n2 - 1.5 * t * t;
    gamma[(3, 1)] = t + 4.0 * smt / n;
    // cross-track acceleration
    gamma[(4, 2)] = omc / n2;
    gamma[(5, 2)] = s / n;

    DiscreteTransition { phi, gamma, dt: t }
}

impl DiscreteTransition {
    pub fn apply(&self, state: &LvlhState, accel: &ControlAccel) -> LvlhState {
        let a = Vec3::new(accel.ax, accel.ay, accel.az);
        LvlhState::from_vector(&(self.phi * state.to_vector() + self.gamma * a))
    }
}

/// Advances one satellite by `dt` under constant thrust.
pub fn propagate(
    state: &LvlhState,
    accel: &ControlAccel,
    dt: f64,
    orbit: &OrbitParams,
) -> Result<LvlhState, DynamicsError> {
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    if !accel.is_finite() {
        return Err(DynamicsError::NonFinite("acceleration"));
    }
    if !dt.is_finite() {
        return Err(DynamicsError::NonFinite("time step"));
    }
    if dt <= 0.0 {
        return Err(DynamicsError::NonPositiveStep(dt));
    }
    Ok(state_transition(orbit, dt)?.apply(state, accel))
}

/// Classic RK4 integration of the continuous CW equations. Used as an
/// independent check on [`propagate`].
pub fn integrate_oracle(
    state: &LvlhState,
    accel: &ControlAccel,
    dt: f64,
    orbit: &OrbitParams,
    substeps: usize,
) -> Result<LvlhState, DynamicsError> {
    if substeps == 0 {
        return Err(DynamicsError::ZeroSubsteps);
    }
    if !state.is_finite() || !accel.is_finite() || !dt.is_finite() {
        return Err(DynamicsError::NonFinite("oracle input"));
    }
    let w = orbit.omega;
    let [ax, ay, az] = accel.to_array();
    let rhs = |s: &[f64; 6]| -> [f64; 6] {
        let [x, xd, _y, yd, z, zd] = *s;
        [xd, 3.0 * w * w * x + 2.0 * w * yd + ax, yd, -2.0 * w * xd + ay, zd, -w * w * z + az]
    };
    let h = dt / substeps as f64;
    let mut s = state.to_array();
    for _ in 0..substeps {
        let k1 = rhs(&s);
        let k2 = rhs(&std::array::from_fn(|i| s[i] + 0.5 * h * k1[i]));
        let k3 = rhs(&std::array::from_fn(|i| s[i] + 0.5 * h * k2[i]));
        let k4 = rhs(&std::array::from_fn(|i| s[i] + h * k3[i]));
        for i in 0..6 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(LvlhState::from_array(s))
}
