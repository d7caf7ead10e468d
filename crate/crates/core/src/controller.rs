//! Snap-level feedback through exact nonlinear inversion.
//!
//! The flat outputs are position and yaw. Differentiating the translational
//! dynamics twice gives snap as an affine function of the physical input,
//! `s = M(x) u + n(x)`, so any commanded snap can be realized exactly while
//! `M` is nonsingular.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::plant::{thrust_direction, Input4, PlantParams, State14};
use crate::reference::ReferenceSample;

/// Total thrust must stay above this fraction of `m g` for the inversion.
pub const THRUST_FLOOR_FRACTION: f64 = 0.1;

/// Condition number above which `M` is treated as singular.
pub const MAX_CONDITION: f64 = 1e8;

pub type ErrorVector = SVector<f64, 14>;

/// Tracking-error coordinates `z = [e_r, e_v, e_a, e_j, psi, psi_dot]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorState {
    pub e_r: Vector3<f64>,
    pub e_v: Vector3<f64>,
    pub e_a: Vector3<f64>,
    pub e_j: Vector3<f64>,
    pub psi: f64,
    pub psi_dot: f64,
}

impl ErrorState {
    pub fn zero() -> Self {
        Self::from_vector(&ErrorVector::zeros())
    }

    pub fn to_vector(&self) -> ErrorVector {
        let mut z = ErrorVector::zeros();
        z.fixed_rows_mut::<3>(0).copy_from(&self.e_r);
        z.fixed_rows_mut::<3>(3).copy_from(&self.e_v);
        z.fixed_rows_mut::<3>(6).copy_from(&self.e_a);
        z.fixed_rows_mut::<3>(9).copy_from(&self.e_j);
        z[12] = self.psi;
        z[13] = self.psi_dot;
        z
    }

    pub fn from_vector(z: &ErrorVector) -> Self {
        Self {
            e_r: z.fixed_rows::<3>(0).into_owned(),
            e_v: z.fixed_rows::<3>(3).into_owned(),
            e_a: z.fixed_rows::<3>(6).into_owned(),
            e_j: z.fixed_rows::<3>(9).into_owned(),
            psi: z[12],
            psi_dot: z[13],
        }
    }
}

/// Feedback gains `k1..k14`: jerk (1-3), acceleration (4-6), velocity
/// (7-9), position (10-12), yaw rate (13) and yaw (14).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainVector(pub SVector<f64, 14>);

impl GainVector {
    pub fn from_slice(k: &[f64]) -> Self {
        Self(SVector::from_column_slice(k))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Per-axis gains `(k_j, k_a, k_v, k_p)` for axis 0, 1 or 2.
    pub fn axis(&self, axis: usize) -> [f64; 4] {
        let k = &self.0;
        [k[axis], k[3 + axis], k[6 + axis], k[9 + axis]]
    }

    /// `(k13, k14)`: yaw-rate and yaw gains.
    pub fn yaw(&self) -> [f64; 2] {
        [self.0[12], self.0[13]]
    }

    pub fn all_positive(&self) -> bool {
        self.0.iter().all(|k| k.is_finite() && *k > 0.0)
    }
}

/// Commanded snap `s_r` and yaw acceleration `s_psi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExternalInput {
    pub s_r: Vector3<f64>,
    pub s_psi: f64,
}

impl ExternalInput {
    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.s_r[0], self.s_r[1], self.s_r[2], self.s_psi)
    }

    pub fn from_vector(s: &Vector4<f64>) -> Self {
        Self {
            s_r: Vector3::new(s[0], s[1], s[2]),
            s_psi: s[3],
        }
    }
}

/// `s = M u + n` with `u = (u_T, phi_ddot, theta_ddot, psi_ddot)` and
/// `s = (s_x, s_y, s_z, s_psi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InversionTerms {
    pub m: Matrix4<f64>,
    pub n: Vector4<f64>,
}

impl InversionTerms {
    /// Solves `M u = s - n`.
    pub fn invert(&self, s: &Vector4<f64>) -> Result<Input4> {
        let lu = self.m.lu();
        let u = lu
            .solve(&(s - self.n))
            .ok_or_else(|| Error::SingularInversion("M is not invertible".into()))?;
        Ok(Input4::from_vector(&u))
    }

    /// Snap produced by applying `u`.
    pub fn apply(&self, u: &Input4) -> Vector4<f64> {
        self.m * u.to_vector() + self.n
    }
}

/// Acceleration and jerk of the vehicle implied by the state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlatKinematics {
    pub a: Vector3<f64>,
    pub j: Vector3<f64>,
}

/// Columns are `d b / d phi`, `d b / d theta`, `d b / d psi` for `b = R e3`.
fn thrust_direction_jacobian(eta: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = eta[0].sin_cos();
    let (st, ct) = eta[1].sin_cos();
    let (sp, cp) = eta[2].sin_cos();
    let d_phi = Vector3::new(-sf * st * cp + cf * sp, -sf * st * sp - cf * cp, -sf * ct);
    let d_theta = Vector3::new(cf * ct * cp, cf * ct * sp, -cf * st);
    let d_psi = Vector3::new(-cf * st * sp + sf * cp, cf * st * cp + sf * sp, 0.0);
    Matrix3::from_columns(&[d_phi, d_theta, d_psi])
}

/// Quadratic term `sum_ik d2b/(d eta_i d eta_k) eta_dot_i eta_dot_k`.
fn thrust_direction_curvature(eta: &Vector3<f64>, rate: &Vector3<f64>) -> Vector3<f64> {
    let (sf, cf) = eta[0].sin_cos();
    let (st, ct) = eta[1].sin_cos();
    let (sp, cp) = eta[2].sin_cos();
    let b = thrust_direction(eta);
    let ff = -b;
    let tt = Vector3::new(-cf * st * cp, -cf * st * sp, -cf * ct);
    let pp = Vector3::new(-b[0], -b[1], 0.0);
    let ft = Vector3::new(-sf * ct * cp, -sf * ct * sp, sf * st);
    let fp = Vector3::new(sf * st * sp + cf * cp, -sf * st * cp + cf * sp, 0.0);
    let tp = Vector3::new(-cf * ct * sp, cf * ct * cp, 0.0);
    let (f, t, p) = (rate[0], rate[1], rate[2]);
    ff * f * f + tt * t * t + pp * p * p + 2.0 * (ft * f * t + fp * f * p + tp * t * p)
}

pub fn flat_kinematics(x: &State14, p: &PlantParams) -> Result<FlatKinematics> {
    x.check_attitude()?;
    let b = thrust_direction(&x.eta);
    let b_dot = thrust_direction_jacobian(&x.eta) * x.eta_dot;
    let specific = (p.hover_thrust() + x.thrust) / p.m;
    Ok(FlatKinematics {
        a: -p.g * Vector3::z() + specific * b,
        j: x.thrust_rate / p.m * b + specific * b_dot,
    })
}

pub fn error_state(x: &State14, reference: &ReferenceSample, p: &PlantParams) -> Result<ErrorState> {
    let flat = flat_kinematics(x, p)?;
    Ok(ErrorState {
        e_r: x.r - reference.pos,
        e_v: x.v - reference.vel,
        e_a: flat.a - reference.acc,
        e_j: flat.j - reference.jerk,
        psi: x.eta[2],
        psi_dot: x.eta_dot[2],
    })
}

/// `s_r = -K_j e_j - K_a e_a - K_v e_v - K_p e_r`, `s_psi = -k13 psi_dot - k14 psi`.
pub fn external_feedback(z: &ErrorState, k: &GainVector) -> ExternalInput {
    let s_r = Vector3::from_fn(|axis, _| {
        let [kj, ka, kv, kp] = k.axis(axis);
        -kj * z.e_j[axis] - ka * z.e_a[axis] - kv * z.e_v[axis] - kp * z.e_r[axis]
    });
    let [k13, k14] = k.yaw();
    ExternalInput {
        s_r,
        s_psi: -k13 * z.psi_dot - k14 * z.psi,
    }
}

/// The 4x14 regressor `H(z)` with `s = H(z) k`.
pub fn gain_regressor(z: &ErrorState) -> SMatrix<f64, 4, 14> {
    let mut h = SMatrix::<f64, 4, 14>::zeros();
    for axis in 0..3 {
        h[(axis, axis)] = -z.e_j[axis];
        h[(axis, 3 + axis)] = -z.e_a[axis];
        h[(axis, 6 + axis)] = -z.e_v[axis];
        h[(axis, 9 + axis)] = -z.e_r[axis];
    }
    h[(3, 12)] = -z.psi_dot;
    h[(3, 13)] = -z.psi;
    h
}

/// `M(x)` and `n(x)` from twice differentiating the translational dynamics.
pub fn inversion_terms(x: &State14, p: &PlantParams) -> Result<InversionTerms> {
    x.check_attitude()?;
    let total = p.hover_thrust() + x.thrust;
    if !(total > THRUST_FLOOR_FRACTION * p.hover_thrust()) {
        return Err(Error::SingularInversion(format!(
            "total thrust {total:.4} N is below the {:.4} N floor",
            THRUST_FLOOR_FRACTION * p.hover_thrust()
        )));
    }
    let b = thrust_direction(&x.eta);
    let jac = thrust_direction_jacobian(&x.eta);
    let specific = total / p.m;

    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&(b / p.m));
    m.fixed_view_mut::<3, 3>(0, 1).copy_from(&(specific * jac));
    m[(3, 3)] = 1.0;

    let b_dot = jac * x.eta_dot;
    let n_r = 2.0 * x.thrust_rate / p.m * b_dot
        + specific * thrust_direction_curvature(&x.eta, &x.eta_dot);
    let n = Vector4::new(n_r[0], n_r[1], n_r[2], 0.0);

    let cond = condition_number(&m);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::SingularInversion(format!("cond(M) = {cond:.3e}")));
    }
    Ok(InversionTerms { m, n })
}

fn condition_number(m: &Matrix4<f64>) -> f64 {
    let sv = m.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Everything the controller computes in one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ControlOutput {
    pub z: ErrorState,
    pub s: ExternalInput,
    pub u: Input4,
}

/// Full evaluation `u = M^-1 (H(z) k - n)` with intermediate quantities.
pub fn evaluate(
    x: &State14,
    reference: &ReferenceSample,
    k: &GainVector,
    p: &PlantParams,
) -> Result<ControlOutput> {
    let z = error_state(x, reference, p)?;
    let s = external_feedback(&z, k);
    let u = inversion_terms(x, p)?.invert(&s.to_vector())?;
    Ok(ControlOutput { z, s, u })
}

pub fn control(
    x: &State14,
    reference: &ReferenceSample,
    k: &GainVector,
    p: &PlantParams,
) -> Result<Input4> {
    Ok(evaluate(x, reference, k, p)?.u)
}
