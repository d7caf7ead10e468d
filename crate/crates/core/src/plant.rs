//! Nonlinear quadrotor plant in double-integrator Euler form.
//!
//! The state is `[r, v, eta, eta_dot, T, T_dot]` with `eta` the ZYX Euler
//! angles `(phi, theta, psi)` and `T` the thrust deviation from hover. The
//! inputs are the thrust snap `T_ddot` and the Euler angular accelerations,
//! so the rotational channel is a pure double integrator. Body torque is only
//! reconstructed after the fact by [`recover_torque`].

use nalgebra::{Matrix3, SVector, Vector3};

use crate::error::{Error, Result};

/// Distance from `±pi/2` pitch inside which the Euler kinematics are refused.
pub const THETA_GUARD: f64 = 0.2;

/// Any simulated component above this magnitude counts as a blowup.
pub const BLOWUP_LIMIT: f64 = 1e6;

pub type StateVector = SVector<f64, 14>;

/// Full plant state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State14 {
    /// Inertial position [m].
    pub r: Vector3<f64>,
    /// Inertial velocity [m/s].
    pub v: Vector3<f64>,
    /// ZYX Euler angles (phi, theta, psi) [rad].
    pub eta: Vector3<f64>,
    /// Euler angle rates [rad/s].
    pub eta_dot: Vector3<f64>,
    /// Thrust deviation from hover [N].
    pub thrust: f64,
    /// Thrust deviation rate [N/s].
    pub thrust_rate: f64,
}

impl State14 {
    /// Level hover at rest at position `r`.
    pub fn hover_at(r: Vector3<f64>) -> Self {
        Self {
            r,
            v: Vector3::zeros(),
            eta: Vector3::zeros(),
            eta_dot: Vector3::zeros(),
            thrust: 0.0,
            thrust_rate: 0.0,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut out = StateVector::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.r);
        out.fixed_rows_mut::<3>(3).copy_from(&self.v);
        out.fixed_rows_mut::<3>(6).copy_from(&self.eta);
        out.fixed_rows_mut::<3>(9).copy_from(&self.eta_dot);
        out[12] = self.thrust;
        out[13] = self.thrust_rate;
        out
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            r: x.fixed_rows::<3>(0).into_owned(),
            v: x.fixed_rows::<3>(3).into_owned(),
            eta: x.fixed_rows::<3>(6).into_owned(),
            eta_dot: x.fixed_rows::<3>(9).into_owned(),
            thrust: x[12],
            thrust_rate: x[13],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }

    /// Fails with [`Error::SingularAttitude`] when pitch is inside the guard band.
    pub fn check_attitude(&self) -> Result<()> {
        check_pitch(self.eta[1])
    }
}

/// Physical input: thrust snap and Euler angular acceleration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Input4 {
    /// `T_ddot` [N/s^2].
    pub u_thrust: f64,
    /// `(phi_ddot, theta_ddot, psi_ddot)` [rad/s^2].
    pub u_eta: Vector3<f64>,
}

impl Input4 {
    pub fn zero() -> Self {
        Self {
            u_thrust: 0.0,
            u_eta: Vector3::zeros(),
        }
    }

    /// Ordered as `(u_T, phi_ddot, theta_ddot, psi_ddot)`.
    pub fn to_vector(&self) -> nalgebra::Vector4<f64> {
        nalgebra::Vector4::new(self.u_thrust, self.u_eta[0], self.u_eta[1], self.u_eta[2])
    }

    pub fn from_vector(u: &nalgebra::Vector4<f64>) -> Self {
        Self {
            u_thrust: u[0],
            u_eta: Vector3::new(u[1], u[2], u[3]),
        }
    }
}

/// Vehicle constants and the sampling period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantParams {
    /// Mass [kg].
    pub m: f64,
    /// Gravity [m/s^2].
    pub g: f64,
    /// Diagonal body inertia (Ixx, Iyy, Izz) [kg m^2].
    pub inertia: Vector3<f64>,
    /// Sampling period [s].
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            m: 1.5,
            g: 9.81,
            inertia: Vector3::new(0.02, 0.02, 0.04),
            dt: 0.01,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(name, format!("must be > 0, got {v}")))
            }
        };
        positive("plant.m", self.m)?;
        positive("plant.g", self.g)?;
        for i in 0..3 {
            positive("plant.inertia", self.inertia[i])?;
        }
        positive("plant.dt", self.dt)
    }

    /// Hover thrust `m g` [N].
    pub fn hover_thrust(&self) -> f64 {
        self.m * self.g
    }
}

fn check_pitch(theta: f64) -> Result<()> {
    if theta.is_finite() && theta.abs() < std::f64::consts::FRAC_PI_2 - THETA_GUARD {
        Ok(())
    } else {
        Err(Error::SingularAttitude {
            theta: theta.abs(),
            guard: THETA_GUARD,
        })
    }
}

/// ZYX rotation `R = Rz(psi) Ry(theta) Rx(phi)` mapping body to inertial axes.
pub fn rotation_matrix(eta: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = eta[0].sin_cos();
    let (st, ct) = eta[1].sin_cos();
    let (sp, cp) = eta[2].sin_cos();
    Matrix3::new(
        cp * ct,
        cp * st * sf - sp * cf,
        cp * st * cf + sp * sf,
        sp * ct,
        sp * st * sf + cp * cf,
        sp * st * cf - cp * sf,
        -st,
        ct * sf,
        ct * cf,
    )
}

/// Body z-axis expressed in the inertial frame, `R(eta) e3`.
pub fn thrust_direction(eta: &Vector3<f64>) -> Vector3<f64> {
    let (sf, cf) = eta[0].sin_cos();
    let (st, ct) = eta[1].sin_cos();
    let (sp, cp) = eta[2].sin_cos();
    Vector3::new(cf * st * cp + sf * sp, cf * st * sp - sf * cp, cf * ct)
}

/// The ZYX rate matrix `E` (with `eta_dot = E omega`) and its inverse.
#[derive(Clone, Copy, Debug)]
pub struct EulerRates {
    pub e: Matrix3<f64>,
    pub e_inv: Matrix3<f64>,
}

pub fn euler_rate_matrix(phi: f64, theta: f64) -> Result<EulerRates> {
    check_pitch(theta)?;
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let tt = st / ct;
    let e = Matrix3::new(
        1.0,
        sf * tt,
        cf * tt,
        0.0,
        cf,
        -sf,
        0.0,
        sf / ct,
        cf / ct,
    );
    let e_inv = Matrix3::new(1.0, 0.0, -st, 0.0, cf, sf * ct, 0.0, -sf, cf * ct);
    Ok(EulerRates { e, e_inv })
}

/// Body angular velocity `omega = E^-1(phi, theta) eta_dot`.
pub fn body_rates(x: &State14) -> Result<Vector3<f64>> {
    Ok(euler_rate_matrix(x.eta[0], x.eta[1])?.e_inv * x.eta_dot)
}

/// Control-affine vector field `f0(x) + G0(x) u`.
pub fn state_derivative(x: &State14, u: &Input4, p: &PlantParams) -> StateVector {
    let b = thrust_direction(&x.eta);
    let accel = -p.g * Vector3::z() + (p.hover_thrust() + x.thrust) / p.m * b;
    let mut dx = StateVector::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&x.v);
    dx.fixed_rows_mut::<3>(3).copy_from(&accel);
    dx.fixed_rows_mut::<3>(6).copy_from(&x.eta_dot);
    dx.fixed_rows_mut::<3>(9).copy_from(&u.u_eta);
    dx[12] = x.thrust_rate;
    dx[13] = u.u_thrust;
    dx
}

/// Fails on any non-finite component or one above [`BLOWUP_LIMIT`].
pub fn check_blowup(x: &StateVector) -> Result<()> {
    if x.iter().all(|c| c.is_finite() && c.abs() <= BLOWUP_LIMIT) {
        Ok(())
    } else {
        Err(Error::NumericalBlowup)
    }
}

/// One classical RK4 step of `y' = f(tau, y)` where `tau` is the offset into
/// the step (0, dt/2 or dt).
pub fn rk4_integrate<F>(y: &StateVector, dt: f64, mut f: F) -> Result<StateVector>
where
    F: FnMut(f64, &StateVector) -> Result<StateVector>,
{
    let k1 = f(0.0, y)?;
    let k2 = f(0.5 * dt, &(y + 0.5 * dt * k1))?;
    let k3 = f(0.5 * dt, &(y + 0.5 * dt * k2))?;
    let k4 = f(dt, &(y + dt * k3))?;
    let next = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_blowup(&next)?;
    Ok(next)
}

/// RK4 step of the open-loop plant with `u` held over the step.
pub fn rk4_step(x: &State14, u: &Input4, p: &PlantParams) -> Result<State14> {
    let next = rk4_integrate(&x.to_vector(), p.dt, |_, y| {
        Ok(state_derivative(&State14::from_vector(y), u, p))
    })?;
    Ok(State14::from_vector(&next))
}

/// Time derivative of `E^-1(phi, theta)` along `eta_dot`.
fn e_inv_rate(eta: &Vector3<f64>, eta_dot: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = eta[0].sin_cos();
    let (st, ct) = eta[1].sin_cos();
    let (fd, td) = (eta_dot[0], eta_dot[1]);
    Matrix3::new(
        0.0,
        0.0,
        -ct * td,
        0.0,
        -sf * fd,
        cf * ct * fd - sf * st * td,
        0.0,
        -cf * fd,
        -sf * ct * fd - cf * st * td,
    )
}

/// Body torque consistent with the commanded Euler accelerations,
/// `tau = I omega_dot + omega x (I omega)` with `omega = E^-1 eta_dot`.
pub fn recover_torque(x: &State14, u_eta: &Vector3<f64>, p: &PlantParams) -> Result<Vector3<f64>> {
    let rates = euler_rate_matrix(x.eta[0], x.eta[1])?;
    let omega = rates.e_inv * x.eta_dot;
    let omega_dot = e_inv_rate(&x.eta, &x.eta_dot) * x.eta_dot + rates.e_inv * u_eta;
    let inertia = Matrix3::from_diagonal(&p.inertia);
    Ok(inertia * omega_dot + omega.cross(&(inertia * omega)))
}
