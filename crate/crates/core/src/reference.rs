//! Point-to-point reference `r_d(t) = (1 - beta) r0 + beta r*` with
//! derivatives through snap, held at `r*` after the transition time.

use nalgebra::{DMatrix, Vector3};

/// Time-scaling polynomial in normalized time `tau = t / Tf`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Profile {
    /// `10 tau^3 - 15 tau^4 + 6 tau^5`: rest-to-rest through acceleration,
    /// jerk and snap jump to zero at `Tf`.
    Quintic,
    /// `126 tau^5 - 420 tau^6 + 540 tau^7 - 315 tau^8 + 70 tau^9`: first
    /// four derivatives vanish at both ends, so `r_d` is C4 across `Tf`.
    #[default]
    Nonic,
}

const QUINTIC: [f64; 6] = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
const NONIC: [f64; 10] = [0.0, 0.0, 0.0, 0.0, 0.0, 126.0, -420.0, 540.0, -315.0, 70.0];

impl Profile {
    pub fn coefficients(&self) -> &'static [f64] {
        match self {
            Profile::Quintic => &QUINTIC,
            Profile::Nonic => &NONIC,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Quintic => "quintic",
            Profile::Nonic => "nonic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quintic" => Some(Profile::Quintic),
            "nonic" => Some(Profile::Nonic),
            _ => None,
        }
    }

    /// `(beta, beta', beta'', beta''', beta'''')` in time units for
    /// `0 <= t <= tf`.
    pub fn beta(&self, t: f64, tf: f64) -> [f64; 5] {
        let tau = t / tf;
        let mut out = [0.0; 5];
        let mut coeffs = self.coefficients().to_vec();
        let mut scale = 1.0;
        for (order, slot) in out.iter_mut().enumerate() {
            if order > 0 {
                coeffs = differentiate(&coeffs);
                scale /= tf;
            }
            *slot = horner(&coeffs, tau) * scale;
        }
        out
    }

    /// `max |d^4 beta / d tau^4|` over `[0, 1]`.
    pub fn snap_peak(&self) -> f64 {
        let mut d4 = self.coefficients().to_vec();
        for _ in 0..4 {
            d4 = differentiate(&d4);
        }
        let d5 = differentiate(&d4);
        let mut candidates = vec![0.0, 1.0];
        candidates.extend(real_roots(&d5).into_iter().filter(|r| (0.0..=1.0).contains(r)));
        candidates
            .into_iter()
            .map(|tau| horner(&d4, tau).abs())
            .fold(0.0, f64::max)
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn differentiate(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| c * i as f64)
        .collect()
}

/// Real roots of an ascending-coefficient polynomial via companion eigenvalues.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    while c.last().is_some_and(|v| *v == 0.0) {
        c.pop();
    }
    let degree = c.len().saturating_sub(1);
    if degree == 0 {
        return Vec::new();
    }
    let lead = c[degree];
    let mut companion = DMatrix::zeros(degree, degree);
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        companion[(i, degree - 1)] = -c[i] / lead;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() < 1e-9)
        .map(|z| z.re)
        .collect()
}

/// Quintic time scaling and its time derivatives.
pub fn quintic_beta(t: f64, tf: f64) -> [f64; 5] {
    Profile::Quintic.beta(t, tf)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryConfig {
    /// Start position [m].
    pub r0: Vector3<f64>,
    /// Hover target [m].
    pub r_star: Vector3<f64>,
    /// Transition time [s].
    pub tf: f64,
    pub profile: Profile,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            r0: Vector3::zeros(),
            r_star: Vector3::new(1.0, 1.0, 1.0),
            tf: 5.0,
            profile: Profile::default(),
        }
    }
}

/// Reference position and its first four derivatives at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceSample {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub jerk: Vector3<f64>,
    pub snap: Vector3<f64>,
}

impl ReferenceSample {
    /// Stationary reference at `pos`.
    pub fn hold(t: f64, pos: Vector3<f64>) -> Self {
        Self {
            t,
            pos,
            vel: Vector3::zeros(),
            acc: Vector3::zeros(),
            jerk: Vector3::zeros(),
            snap: Vector3::zeros(),
        }
    }
}

pub fn sample(t: f64, cfg: &TrajectoryConfig) -> ReferenceSample {
    if t >= cfg.tf {
        return ReferenceSample::hold(t, cfg.r_star);
    }
    let t = t.max(0.0);
    let delta = cfg.r_star - cfg.r0;
    let b = cfg.profile.beta(t, cfg.tf);
    ReferenceSample {
        t,
        pos: cfg.r0 + b[0] * delta,
        vel: b[1] * delta,
        acc: b[2] * delta,
        jerk: b[3] * delta,
        snap: b[4] * delta,
    }
}

/// `sup_t ||r_d''''(t)||`, the disturbance bound fed to certification.
pub fn snap_sup_norm(cfg: &TrajectoryConfig) -> f64 {
    cfg.profile.snap_peak() / cfg.tf.powi(4) * (cfg.r_star - cfg.r0).norm()
}
