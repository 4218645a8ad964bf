//! Planar wheeled-inverted-pendulum dynamics.
//!
//! Generalized coordinates are the wheel ground position `x` and the tilt `theta` of the
//! carried body's COM line from vertical (positive leaning toward `+x`). With `T` and `V`
//!
//! ```text
//! T = 1/2 (m_w + I_w / R^2) xdot^2 + 1/2 m_p |v_com|^2 + 1/2 I_p thetadot^2
//! V = m_p g l_p cos(theta)
//! ```
//!
//! the Euler-Lagrange equations with the wheel torque `M` (acting between body and wheel)
//! give
//!
//! ```text
//! (m_w + m_p + I_w / R^2) xddot + m_p l_p cos(theta) thetaddot - m_p l_p sin(theta) thetadot^2 = M / R
//! (m_p l_p^2 + I_p) thetaddot + m_p l_p cos(theta) xddot - m_p g l_p sin(theta)              = -M
//! ```

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Two wheels at 18 N m peak each.
pub const DEFAULT_TORQUE_LIMIT: f64 = 36.0;
/// Physics tick, matching the 1 kHz IMU.
pub const DEFAULT_DT: f64 = 1e-3;
pub const MAX_DT: f64 = 0.01;

/// Equivalent planar model. Wheel quantities are two-wheel totals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    /// m_w (kg)
    pub wheel_mass: f64,
    /// m_p (kg)
    pub body_mass: f64,
    /// I_w (kg m^2)
    pub wheel_inertia: f64,
    /// I_p about the body COM, axle-parallel axis (kg m^2)
    pub body_inertia: f64,
    /// l_p, axle to COM (m)
    pub length: f64,
    /// R (m)
    pub wheel_radius: f64,
    /// g (m/s^2)
    pub gravity: f64,
}

impl PendulumParams {
    pub fn check(&self) -> Result<()> {
        let checks = [
            ("wheel_mass", self.wheel_mass, self.wheel_mass >= 0.0),
            ("body_mass", self.body_mass, self.body_mass > 0.0),
            (
                "wheel_inertia",
                self.wheel_inertia,
                self.wheel_inertia >= 0.0,
            ),
            ("body_inertia", self.body_inertia, self.body_inertia >= 0.0),
            ("length", self.length, self.length > 0.0),
            ("wheel_radius", self.wheel_radius, self.wheel_radius > 0.0),
            ("gravity", self.gravity, self.gravity > 0.0),
        ];
        for (name, value, ok) in checks {
            if !(ok && value.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "pendulum {name} out of range: {value}"
                )));
            }
        }
        Ok(())
    }

    /// `m_w + m_p + I_w / R^2`
    fn translational_mass(&self) -> f64 {
        self.wheel_mass + self.body_mass + self.wheel_inertia / self.wheel_radius.powi(2)
    }

    /// `m_p l_p^2 + I_p`
    fn rotational_inertia(&self) -> f64 {
        self.body_mass * self.length * self.length + self.body_inertia
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumState {
    pub x: f64,
    pub xdot: f64,
    pub theta: f64,
    pub thetadot: f64,
}

impl PendulumState {
    pub const ZERO: PendulumState = PendulumState {
        x: 0.0,
        xdot: 0.0,
        theta: 0.0,
        thetadot: 0.0,
    };

    pub fn new(x: f64, xdot: f64, theta: f64, thetadot: f64) -> Self {
        Self {
            x,
            xdot,
            theta,
            thetadot,
        }
    }

    pub fn tilted(theta: f64) -> Self {
        Self {
            theta,
            ..Self::ZERO
        }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.x, self.xdot, self.theta, self.thetadot)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    fn axpy(self, h: f64, d: &Derivative) -> Self {
        Self {
            x: self.x + h * d.x,
            xdot: self.xdot + h * d.xdot,
            theta: self.theta + h * d.theta,
            thetadot: self.thetadot + h * d.thetadot,
        }
    }
}

/// Horizontal force applied at the body COM (N), used for disturbance pulses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExternalForce(pub f64);

#[derive(Clone, Copy, Debug, PartialEq)]
struct Derivative {
    x: f64,
    xdot: f64,
    theta: f64,
    thetadot: f64,
}

/// `(xddot, thetaddot)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accelerations {
    pub xddot: f64,
    pub thetaddot: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Energy {
    pub kinetic: f64,
    pub potential: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.kinetic + self.potential
    }
}

/// The pendulum model together with an optional viscous rolling-resistance force
/// `-c xdot` (N s/m) at the ground contact, zero by default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wips {
    pub params: PendulumParams,
    #[serde(default)]
    pub viscous: f64,
}

impl Wips {
    pub fn new(params: PendulumParams) -> Self {
        Self {
            params,
            viscous: 0.0,
        }
    }

    pub fn with_viscous(mut self, c: f64) -> Self {
        self.viscous = c;
        self
    }

    pub fn accelerations(&self, state: &PendulumState, torque: f64) -> Result<Accelerations> {
        self.accelerations_with(state, torque, ExternalForce::default())
    }

    /// Solves the 2x2 mass-matrix system in closed form.
    pub fn accelerations_with(
        &self,
        state: &PendulumState,
        torque: f64,
        force: ExternalForce,
    ) -> Result<Accelerations> {
        let p = &self.params;
        let ml = p.body_mass * p.length;
        let (s, c) = state.theta.sin_cos();
        let a11 = p.translational_mass();
        let a12 = ml * c;
        let a22 = p.rotational_inertia();
        let det = a11 * a22 - a12 * a12;
        if !(det > 0.0) {
            return Err(Error::SingularMassMatrix(det));
        }
        let rhs1 = torque / p.wheel_radius + ml * s * state.thetadot * state.thetadot
            - self.viscous * state.xdot
            + force.0;
        let rhs2 = -torque + ml * p.gravity * s + force.0 * p.length * c;
        Ok(Accelerations {
            xddot: (a22 * rhs1 - a12 * rhs2) / det,
            thetaddot: (a11 * rhs2 - a12 * rhs1) / det,
        })
    }

    pub fn energy(&self, state: &PendulumState) -> Energy {
        energy(state, &self.params)
    }

    /// Mechanical power delivered by the wheel torque, `M (xdot / R - thetadot)`.
    pub fn input_power(&self, state: &PendulumState, torque: f64) -> f64 {
        torque * (state.xdot / self.params.wheel_radius - state.thetadot)
    }

    fn derivative(
        &self,
        state: &PendulumState,
        torque: f64,
        force: ExternalForce,
    ) -> Result<Derivative> {
        let acc = self.accelerations_with(state, torque, force)?;
        Ok(Derivative {
            x: state.xdot,
            xdot: acc.xddot,
            theta: state.thetadot,
            thetadot: acc.thetaddot,
        })
    }

    pub fn step_rk4(&self, state: &PendulumState, torque: f64, dt: f64) -> Result<PendulumState> {
        self.step_rk4_with(state, torque, ExternalForce::default(), dt)
    }

    /// One classical Runge-Kutta step with input held constant over the step.
    pub fn step_rk4_with(
        &self,
        state: &PendulumState,
        torque: f64,
        force: ExternalForce,
        dt: f64,
    ) -> Result<PendulumState> {
        check_dt(dt)?;
        if !state.is_finite() || !torque.is_finite() || !force.0.is_finite() {
            return Err(Error::NonFiniteState);
        }
        let k1 = self.derivative(state, torque, force)?;
        let k2 = self.derivative(&state.axpy(dt / 2.0, &k1), torque, force)?;
        let k3 = self.derivative(&state.axpy(dt / 2.0, &k2), torque, force)?;
        let k4 = self.derivative(&state.axpy(dt, &k3), torque, force)?;
        let sum = Derivative {
            x: k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x,
            xdot: k1.xdot + 2.0 * k2.xdot + 2.0 * k3.xdot + k4.xdot,
            theta: k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta,
            thetadot: k1.thetadot + 2.0 * k2.thetadot + 2.0 * k3.thetadot + k4.thetadot,
        };
        let next = state.axpy(dt / 6.0, &sum);
        if !next.is_finite() {
            return Err(Error::NonFiniteState);
        }
        Ok(next)
    }

    /// Analytic Jacobian of the acceleration field at the upright origin.
    pub fn linearize(&self) -> LinearModel {
        let p = &self.params;
        let ml = p.body_mass * p.length;
        let a11 = p.translational_mass();
        let a22 = p.rotational_inertia();
        let det = a11 * a22 - ml * ml;
        let mgl = ml * p.gravity;
        let c = self.viscous;

        let mut a = Matrix4::zeros();
        a[(0, 1)] = 1.0;
        a[(1, 1)] = -a22 * c / det;
        a[(1, 2)] = -ml * mgl / det;
        a[(2, 3)] = 1.0;
        a[(3, 1)] = ml * c / det;
        a[(3, 2)] = a11 * mgl / det;
        let b = Vector4::new(
            0.0,
            (a22 / p.wheel_radius + ml) / det,
            0.0,
            -(a11 + ml / p.wheel_radius) / det,
        );
        LinearModel {
            a,
            b,
            timing: Timing::Continuous,
        }
    }
}

pub fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt <= MAX_DT {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "timestep must lie in (0, {MAX_DT}] s, got {dt}"
        )))
    }
}

pub fn accelerations(
    state: &PendulumState,
    params: &PendulumParams,
    torque: f64,
) -> Result<Accelerations> {
    Wips::new(*params).accelerations(state, torque)
}

pub fn energy(state: &PendulumState, params: &PendulumParams) -> Energy {
    let p = params;
    let (s, c) = state.theta.sin_cos();
    let vx = state.xdot + p.length * c * state.thetadot;
    let vz = -p.length * s * state.thetadot;
    let wheel = p.wheel_mass + p.wheel_inertia / p.wheel_radius.powi(2);
    let kinetic = 0.5 * wheel * state.xdot * state.xdot
        + 0.5 * p.body_mass * (vx * vx + vz * vz)
        + 0.5 * p.body_inertia * state.thetadot * state.thetadot;
    Energy {
        kinetic,
        potential: p.body_mass * p.gravity * p.length * c,
    }
}

pub fn step_rk4(
    state: &PendulumState,
    params: &PendulumParams,
    torque: f64,
    dt: f64,
) -> Result<PendulumState> {
    Wips::new(*params).step_rk4(state, torque, dt)
}

pub fn linearize(params: &PendulumParams) -> LinearModel {
    Wips::new(*params).linearize()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Timing {
    Continuous,
    Discrete { dt: f64 },
}

/// State-space pair for the state `[x, xdot, theta, thetadot]` and scalar torque input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
    pub timing: Timing,
}

impl LinearModel {
    pub fn is_discrete(&self) -> bool {
        matches!(self.timing, Timing::Discrete { .. })
    }

    pub fn a_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 4, self.a.as_slice())
    }

    pub fn b_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 1, self.b.as_slice())
    }

    /// Zero-order-hold discretization of a continuous model.
    pub fn discretize(&self, dt: f64) -> Result<LinearModel> {
        if self.is_discrete() {
            return Err(Error::InvalidParameter("model is already discrete".into()));
        }
        check_dt(dt)?;
        let (ad, bd) = linalg::zoh(&self.a_dyn(), &self.b_dyn(), dt);
        Ok(LinearModel {
            a: Matrix4::from_column_slice(ad.as_slice()),
            b: Vector4::from_column_slice(bd.as_slice()),
            timing: Timing::Discrete { dt },
        })
    }

    pub fn step(&self, state: &PendulumState, torque: f64) -> PendulumState {
        PendulumState::from_vector(&(self.a * state.to_vector() + self.b * torque))
    }
}

pub fn discretize(model: &LinearModel, dt: f64) -> Result<LinearModel> {
    model.discretize(dt)
}
