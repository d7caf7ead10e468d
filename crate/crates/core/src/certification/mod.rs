//! Stability certification of feedback gains and the finite admissible library.
//!
//! Substituting the snap feedback into the external error dynamics gives the
//! linear closed loop `z' = A_cl(k) z + E_ext r_d''''(t)`. A gain is admitted
//! when `A_cl(k)` is Hurwitz with margin; its Lyapunov matrix `P` then
//! defines `V(z) = z' P z` and the invariance level `rho* = lambda_max(P) R^2`
//! with `R = (c / alpha) r_bar`, `c = 2 ||P E_ext||`, `alpha = lambda_min(Q)`.

mod bounds;
mod lyapunov;

pub use bounds::GainBounds;
pub use lyapunov::{lyapunov_residual, solve_lyapunov};

use nalgebra::{DMatrix, SMatrix, SVector, Vector3};
use rayon::prelude::*;

use crate::controller::{ErrorVector, GainVector};
use crate::error::{Error, Result};

pub type Matrix14 = SMatrix<f64, 14, 14>;

/// Default Hurwitz margin [1/s] required of library entries.
pub const DEFAULT_MARGIN: f64 = 0.05;

/// Constant matrices of the external error dynamics
/// `z' = A_ext z + B_ext s + E_ext r_d''''`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalSystem {
    pub a_ext: Matrix14,
    pub b_ext: SMatrix<f64, 14, 4>,
    pub e_ext: SMatrix<f64, 14, 3>,
}

impl ExternalSystem {
    pub fn new() -> Self {
        let mut a_ext = Matrix14::zeros();
        for i in 0..9 {
            a_ext[(i, i + 3)] = 1.0;
        }
        a_ext[(12, 13)] = 1.0;
        let mut b_ext = SMatrix::<f64, 14, 4>::zeros();
        let mut e_ext = SMatrix::<f64, 14, 3>::zeros();
        for i in 0..3 {
            b_ext[(9 + i, i)] = 1.0;
            e_ext[(9 + i, i)] = -1.0;
        }
        b_ext[(13, 3)] = 1.0;
        Self {
            a_ext,
            b_ext,
            e_ext,
        }
    }
}

impl Default for ExternalSystem {
    fn default() -> Self {
        Self::new()
    }
}

/// Structured 4x14 gain matrix with `s = -K(k) z`.
pub fn gain_matrix(k: &GainVector) -> SMatrix<f64, 4, 14> {
    let mut out = SMatrix::<f64, 4, 14>::zeros();
    for axis in 0..3 {
        let [kj, ka, kv, kp] = k.axis(axis);
        out[(axis, axis)] = kp;
        out[(axis, 3 + axis)] = kv;
        out[(axis, 6 + axis)] = ka;
        out[(axis, 9 + axis)] = kj;
    }
    let [k13, k14] = k.yaw();
    out[(3, 12)] = k14;
    out[(3, 13)] = k13;
    out
}

/// `A_cl(k) = A_ext - B_ext K(k)`.
pub fn build_a_cl(k: &GainVector) -> Matrix14 {
    let sys = ExternalSystem::new();
    sys.a_ext - sys.b_ext * gain_matrix(k)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HurwitzReport {
    pub hurwitz: bool,
    /// `-max Re(lambda)` [1/s].
    pub stability_margin: f64,
}

/// True iff every eigenvalue satisfies `Re(lambda) < -margin`.
pub fn is_hurwitz(a: &DMatrix<f64>, margin: f64) -> Result<HurwitzReport> {
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenFailure)?;
    let eigenvalues = schur.complex_eigenvalues();
    if eigenvalues.iter().any(|l| !l.re.is_finite()) {
        return Err(Error::EigenFailure);
    }
    let max_re = eigenvalues.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(HurwitzReport {
        hurwitz: max_re < -margin,
        stability_margin: -max_re,
    })
}

/// Routh-Hurwitz test for `s^4 + kj s^3 + ka s^2 + kv s + kp`.
pub fn routh_quartic(kj: f64, ka: f64, kv: f64, kp: f64) -> bool {
    let b1 = kj * ka - kv;
    kj > 0.0 && ka > 0.0 && kv > 0.0 && kp > 0.0 && b1 > 0.0 && b1 * kv - kj * kj * kp > 0.0
}

/// Routh on the three axis quartics and positivity of the yaw quadratic.
pub fn routh_gain(k: &GainVector) -> bool {
    let [k13, k14] = k.yaw();
    (0..3).all(|axis| {
        let [kj, ka, kv, kp] = k.axis(axis);
        routh_quartic(kj, ka, kv, kp)
    }) && k13 > 0.0
        && k14 > 0.0
}

/// Weighting matrix in the Lyapunov inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QChoice {
    Identity,
    ScaledIdentity(f64),
}

impl QChoice {
    pub fn matrix(&self, n: usize) -> DMatrix<f64> {
        match self {
            QChoice::Identity => DMatrix::identity(n, n),
            QChoice::ScaledIdentity(s) => DMatrix::identity(n, n) * *s,
        }
    }
}

/// Invariance quantities derived from a Lyapunov pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvarianceLevel {
    /// `lambda_min(Q)`.
    pub alpha: f64,
    /// `2 ||P E_ext||_2`.
    pub c: f64,
    /// Ultimate-bound radius `(c / alpha) r_bar`.
    pub radius: f64,
    /// `lambda_max(P) R^2`.
    pub rho_star: f64,
    /// Diagnostic level from `lambda_min(Q) rho >= c^2 r_bar^2`.
    pub rho_alt: f64,
}

pub fn invariance_level(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    e_ext: &DMatrix<f64>,
    r_bar: f64,
) -> InvarianceLevel {
    let alpha = q.clone().symmetric_eigenvalues().min();
    let c = 2.0 * (p * e_ext).singular_values().max();
    let radius = c / alpha * r_bar;
    let lambda_max = p.clone().symmetric_eigenvalues().max();
    InvarianceLevel {
        alpha,
        c,
        radius,
        rho_star: lambda_max * radius * radius,
        rho_alt: c * c * r_bar * r_bar / alpha,
    }
}

/// Lyapunov data of a certified gain.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovCertificate {
    pub p: Matrix14,
    pub level: InvarianceLevel,
    /// `||A' P + P A + Q||_F / ||Q||_F`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub gain: GainVector,
    pub hurwitz: bool,
    pub stability_margin: f64,
    /// Present only when `hurwitz` holds.
    pub lyapunov: Option<LyapunovCertificate>,
}

impl Certificate {
    /// `V(z) = z' P z`, when certified.
    pub fn lyapunov_value(&self, z: &ErrorVector) -> Option<f64> {
        self.lyapunov.as_ref().map(|l| (z.transpose() * l.p * z)[0])
    }

    pub fn rho_star(&self) -> Option<f64> {
        self.lyapunov.as_ref().map(|l| l.level.rho_star)
    }
}

pub fn certify(k: &GainVector, r_bar: f64, q_choice: QChoice, margin: f64) -> Result<Certificate> {
    let a_cl = build_a_cl(k);
    let a = DMatrix::from_column_slice(14, 14, a_cl.as_slice());
    let report = is_hurwitz(&a, margin)?;
    if !report.hurwitz {
        return Ok(Certificate {
            gain: *k,
            hurwitz: false,
            stability_margin: report.stability_margin,
            lyapunov: None,
        });
    }
    let q = q_choice.matrix(14);
    let p = solve_lyapunov(&a, &q)?;
    let e_ext = ExternalSystem::new().e_ext;
    let e_ext = DMatrix::from_column_slice(14, 3, e_ext.as_slice());
    let level = invariance_level(&p, &q, &e_ext, r_bar);
    let residual = lyapunov_residual(&a, &p, &q);
    Ok(Certificate {
        gain: *k,
        hurwitz: true,
        stability_margin: report.stability_margin,
        lyapunov: Some(LyapunovCertificate {
            p: Matrix14::from_column_slice(p.as_slice()),
            level,
            residual,
        }),
    })
}

/// One certified gain with its grid coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct LibraryEntry {
    /// Translational scale in `[0, 1]` shared by `k1..k12`.
    pub lambda: f64,
    /// Yaw scale in `[0, 1]` for `k13, k14`.
    pub mu: f64,
    pub certificate: Certificate,
}

impl LibraryEntry {
    pub fn gain(&self) -> &GainVector {
        &self.certificate.gain
    }
}

/// A grid candidate that failed certification.
#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub lambda: f64,
    pub mu: f64,
    pub stability_margin: f64,
}

/// Ordered certified gains. The entry index is the RL action.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibleLibrary {
    pub entries: Vec<LibraryEntry>,
    pub rejected: Vec<Rejection>,
    pub bounds: GainBounds,
    pub n_trans: usize,
    pub n_yaw: usize,
    pub r_bar: f64,
    pub margin: f64,
}

impl AdmissibleLibrary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<&LibraryEntry> {
        self.entries.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.entries.len(),
        })
    }

    /// Entry closest to the grid centre.
    pub fn mid_index(&self) -> usize {
        self.entries
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (a.lambda - 0.5).abs() + (a.mu - 0.5).abs();
                let db = (b.lambda - 0.5).abs() + (b.mu - 0.5).abs();
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Index of the entry whose gain equals `k` bit for bit.
    pub fn find(&self, k: &GainVector) -> Option<usize> {
        self.entries.iter().position(|e| {
            e.gain()
                .as_slice()
                .iter()
                .zip(k.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }

    pub fn max_rho_star(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.certificate.rho_star())
            .fold(0.0, f64::max)
    }
}

fn linspace(n: usize) -> Vec<f64> {
    if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }
}

/// Gain with translational scale `lambda` and yaw scale `mu` inside `bounds`.
pub fn grid_gain(bounds: &GainBounds, lambda: f64, mu: f64) -> GainVector {
    GainVector(SVector::from_fn(|i, _| {
        let s = if i < 12 { lambda } else { mu };
        let (lo, hi) = (bounds.k_min[i], bounds.k_max[i]);
        ((1.0 - s) * lo + s * hi).clamp(lo, hi)
    }))
}

/// Certifies the `n_trans x n_yaw` tied-gain grid. Entries are ordered with
/// the translational scale outermost: index = `i_trans * n_yaw + i_yaw` when
/// nothing is rejected.
pub fn build_library(
    bounds: &GainBounds,
    n_trans: usize,
    n_yaw: usize,
    q_choice: QChoice,
    margin: f64,
    r_bar: f64,
) -> Result<AdmissibleLibrary> {
    if n_trans == 0 || n_yaw == 0 {
        return Err(Error::validation(
            "library",
            "n_trans and n_yaw must both be at least 1",
        ));
    }
    let candidates: Vec<(f64, f64)> = linspace(n_trans)
        .into_iter()
        .flat_map(|l| linspace(n_yaw).into_iter().map(move |m| (l, m)))
        .collect();
    let certified: Vec<(f64, f64, Certificate)> = candidates
        .par_iter()
        .map(|&(lambda, mu)| {
            certify(&grid_gain(bounds, lambda, mu), r_bar, q_choice, margin).map(|c| (lambda, mu, c))
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for (lambda, mu, certificate) in certified {
        if certificate.hurwitz {
            entries.push(LibraryEntry {
                lambda,
                mu,
                certificate,
            });
        } else {
            rejected.push(Rejection {
                lambda,
                mu,
                stability_margin: certificate.stability_margin,
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    Ok(AdmissibleLibrary {
        entries,
        rejected,
        bounds: bounds.clone(),
        n_trans,
        n_yaw,
        r_bar,
        margin,
    })
}

/// RK4 integration of `z' = A_cl z + E_ext snap(t)` from `t0`, returning
/// `steps + 1` samples spaced `dt`, each step split into `substeps`.
pub fn simulate_error_dynamics<F>(
    a_cl: &Matrix14,
    z0: &ErrorVector,
    t0: f64,
    dt: f64,
    steps: usize,
    substeps: usize,
    snap: F,
) -> Vec<ErrorVector>
where
    F: Fn(f64) -> Vector3<f64>,
{
    let e_ext = ExternalSystem::new().e_ext;
    let field = |t: f64, z: &ErrorVector| a_cl * z + e_ext * snap(t);
    let h = dt / substeps as f64;
    let mut z = *z0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(z);
    for step in 0..steps {
        for sub in 0..substeps {
            let t = t0 + step as f64 * dt + sub as f64 * h;
            let k1 = field(t, &z);
            let k2 = field(t + 0.5 * h, &(z + 0.5 * h * k1));
            let k3 = field(t + 0.5 * h, &(z + 0.5 * h * k2));
            let k4 = field(t + h, &(z + h * k3));
            z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(z);
    }
    out
}

#[cfg(test)]
mod tests;
