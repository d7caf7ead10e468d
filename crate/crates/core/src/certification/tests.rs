use super::*;
use approx::assert_relative_eq;
use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dyn14(m: &Matrix14) -> DMatrix<f64> {
    DMatrix::from_column_slice(14, 14, m.as_slice())
}

fn k_min() -> GainVector {
    GainVector::from_slice(&GainBounds::default().k_min)
}

fn quartic_companion(kj: f64, ka: f64, kv: f64, kp: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            -kp, -kv, -ka, -kj,
        ],
    )
}

#[test]
fn bounds_table_matches_bundled_values() {
    let b = GainBounds::default();
    assert_eq!(b.k_min[0], 9.8304);
    assert_eq!(b.k_max[2], 248.832);
    assert_eq!(b.k_min[12], 12.0);
    assert_eq!(b.k_max[13], 12.0);
    assert!(GainBounds::parse("1 2\n").is_err());
    let swapped = DEFAULT_TABLE_FOR_TESTS.replacen("9.8304 49.7664", "49.7664 9.8304", 1);
    assert!(matches!(GainBounds::parse(&swapped), Err(Error::Validation { .. })));
}

const DEFAULT_TABLE_FOR_TESTS: &str = include_str!("../../data/gain_bounds.txt");

#[test]
fn zero_position_gain_is_not_hurwitz() {
    let mut k = k_min();
    k.0[9] = 0.0;
    let report = is_hurwitz(&dyn14(&build_a_cl(&k)), 0.0).unwrap();
    assert!(!report.hurwitz);
    assert!(report.stability_margin.abs() < 1e-9);
    assert!(!certify(&k, 1.0, QChoice::Identity, DEFAULT_MARGIN).unwrap().hurwitz);
}

#[test]
fn characteristic_polynomial_factors_per_axis() {
    // det(sI - A_cl) equals the product of the three axis quartics and the
    // yaw quadratic.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let k = GainVector(SVector::from_fn(|_, _| rng.random_range(0.1..30.0)));
        let a = build_a_cl(&k);
        for _ in 0..5 {
            let s: f64 = rng.random_range(-3.0..3.0);
            let det = (Matrix14::identity() * s - a).determinant();
            let mut expected = 1.0;
            for axis in 0..3 {
                let [kj, ka, kv, kp] = k.axis(axis);
                expected *= s.powi(4) + kj * s.powi(3) + ka * s * s + kv * s + kp;
            }
            let [k13, k14] = k.yaw();
            expected *= s * s + k13 * s + k14;
            assert_relative_eq!(det, expected, max_relative = 1e-8, epsilon = 1e-8);
        }
    }
}

#[test]
fn spectrum_is_union_of_axis_roots() {
    let k = grid_gain(&GainBounds::default(), 0.5, 0.5);
    let mut from_acl: Vec<f64> = build_a_cl(&k)
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re * 1e3 + l.im.abs())
        .collect();
    let mut from_blocks = Vec::new();
    for axis in 0..3 {
        let [kj, ka, kv, kp] = k.axis(axis);
        from_blocks.extend(quartic_companion(kj, ka, kv, kp).complex_eigenvalues().iter().map(|l| l.re * 1e3 + l.im.abs()));
    }
    let [k13, k14] = k.yaw();
    let yaw = Matrix2::new(0.0, 1.0, -k14, -k13);
    from_blocks.extend(yaw.complex_eigenvalues().iter().map(|l| l.re * 1e3 + l.im.abs()));
    from_acl.sort_by(f64::total_cmp);
    from_blocks.sort_by(f64::total_cmp);
    for (a, b) in from_acl.iter().zip(&from_blocks) {
        assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn gain_matrix_sparsity() {
    let k = GainVector(SVector::from_fn(|i, _| (i + 1) as f64));
    let km = gain_matrix(&k);
    for col in 0..12 {
        assert_eq!(km[(3, col)], 0.0);
    }
    assert_eq!(km[(0, 12)], 0.0);
    assert_eq!(km[(2, 13)], 0.0);
    assert_eq!(km[(3, 12)], 14.0);
    assert_eq!(km[(3, 13)], 13.0);
    // x row: K_p, K_v, K_a, K_j in z order.
    assert_eq!(km[(0, 0)], 10.0);
    assert_eq!(km[(0, 3)], 7.0);
    assert_eq!(km[(0, 6)], 4.0);
    assert_eq!(km[(0, 9)], 1.0);
    assert_eq!(km.iter().filter(|v| **v != 0.0).count(), 14);
}

#[test]
fn external_system_structure() {
    let sys = ExternalSystem::new();
    assert_eq!(sys.a_ext.iter().filter(|v| **v != 0.0).count(), 10);
    assert_eq!(sys.e_ext[(9, 0)], -1.0);
    assert_eq!(sys.e_ext[(11, 2)], -1.0);
    assert_eq!(sys.e_ext.iter().filter(|v| **v != 0.0).count(), 3);
    assert_eq!(sys.b_ext[(13, 3)], 1.0);
}

#[test]
fn hurwitz_examples() {
    let r = is_hurwitz(&(-DMatrix::<f64>::identity(14, 14)), 0.0).unwrap();
    assert!(r.hurwitz);
    assert_relative_eq!(r.stability_margin, 1.0, epsilon = 1e-12);

    let k = k_min();
    assert!(is_hurwitz(&dyn14(&build_a_cl(&k)), DEFAULT_MARGIN).unwrap().hurwitz);
    assert!(routh_gain(&k));

    assert!(!is_hurwitz(&quartic_companion(1.0, 1.0, 10.0, 10.0), 0.0).unwrap().hurwitz);
}

#[test]
fn routh_examples() {
    assert!(routh_quartic(9.8304, 25.6, 22.4, 8.0));
    assert!(!routh_quartic(1.0, 1.0, 10.0, 10.0));
    assert!(!routh_quartic(0.0, 25.6, 22.4, 8.0));
    assert!(!routh_quartic(9.8304, -25.6, 22.4, 8.0));
    assert!(!routh_quartic(9.8304, 25.6, 22.4, 0.0));
}

#[test]
fn eigen_test_agrees_with_routh_on_random_gains() {
    let bounds = GainBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut disagreements = 0;
    let mut unstable = 0;
    for _ in 0..500 {
        let k = GainVector(SVector::from_fn(|i, _| {
            rng.random_range(-0.1 * bounds.k_max[i]..1.5 * bounds.k_max[i])
        }));
        let eig = is_hurwitz(&dyn14(&build_a_cl(&k)), 0.0).unwrap().hurwitz;
        if eig != routh_gain(&k) {
            disagreements += 1;
        }
        unstable += usize::from(!eig);
    }
    assert_eq!(disagreements, 0);
    // The sample must exercise both outcomes.
    assert!(unstable > 50 && unstable < 450, "{unstable}");
}

#[test]
fn lyapunov_examples() {
    let p = solve_lyapunov(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 2.0)).unwrap();
    assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-14);

    // Hand solution of the 2x2 system for A = [[0, 1], [-8, -12]], Q = I.
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -8.0, -12.0]);
    let q = DMatrix::identity(2, 2);
    let p = solve_lyapunov(&a, &q).unwrap();
    let expected = DMatrix::from_row_slice(2, 2, &[1.125, 0.0625, 0.0625, 0.046875]);
    assert!((&p - expected).amax() < 1e-12);
    assert!(lyapunov_residual(&a, &p, &q) < 1e-10);
    assert!(p.symmetric_eigenvalues().min() > 0.0);

    assert!(matches!(
        solve_lyapunov(&DMatrix::from_element(1, 1, 1.0), &DMatrix::from_element(1, 1, 1.0)),
        Err(Error::NotHurwitz(_))
    ));
}

#[test]
fn lyapunov_matches_gramian_quadrature() {
    // P = int_0^inf exp(A't) Q exp(At) dt by composite Simpson over a long
    // horizon; independent of the vectorized solve.
    let k = k_min();
    let a = build_a_cl(&k);
    let h = 0.005;
    let step = (a * h).exp();
    let horizon = 120.0;
    let n = (horizon / h) as usize;
    let n = n + n % 2;
    let mut phi = Matrix14::identity();
    let mut integral = Matrix14::zeros();
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += phi.transpose() * phi * w;
        phi *= step;
    }
    integral *= h / 3.0;
    let p = solve_lyapunov(&dyn14(&a), &DMatrix::identity(14, 14)).unwrap();
    let p = Matrix14::from_column_slice(p.as_slice());
    let rel = (p - integral).norm() / p.norm();
    assert!(rel < 1e-6, "relative gap {rel}");
}

#[test]
fn invariance_level_examples() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let two = DMatrix::from_element(1, 1, 2.0);
    let lvl = invariance_level(&one, &two, &one, 1.0);
    assert_relative_eq!(lvl.alpha, 2.0);
    assert_relative_eq!(lvl.c, 2.0);
    assert_relative_eq!(lvl.radius, 1.0);
    assert_relative_eq!(lvl.rho_star, 1.0);

    let zero = invariance_level(&one, &two, &one, 0.0);
    assert_eq!((zero.radius, zero.rho_star), (0.0, 0.0));

    let cert = certify(&k_min(), 1.0, QChoice::Identity, DEFAULT_MARGIN).unwrap();
    let base = cert.rho_star().unwrap();
    let tripled = certify(&k_min(), 3.0, QChoice::Identity, DEFAULT_MARGIN).unwrap();
    assert_relative_eq!(tripled.rho_star().unwrap(), 9.0 * base, max_relative = 1e-12);
}

#[test]
fn certify_examples() {
    let c = certify(&k_min(), 0.5, QChoice::Identity, DEFAULT_MARGIN).unwrap();
    assert!(c.hurwitz && c.stability_margin > DEFAULT_MARGIN);
    let l = c.lyapunov.as_ref().unwrap();
    assert!(l.level.rho_star.is_finite() && l.level.rho_star > 0.0);
    assert_relative_eq!(l.level.alpha, 1.0, epsilon = 1e-12);
    assert!(l.residual < 1e-8);
    assert!((l.p - l.p.transpose()).amax() == 0.0);

    let z = certify(&k_min(), 0.0, QChoice::Identity, DEFAULT_MARGIN).unwrap();
    assert_eq!(z.rho_star(), Some(0.0));
}

#[test]
fn library_single_entry_is_k_min() {
    let lib = build_library(&GainBounds::default(), 1, 1, QChoice::Identity, DEFAULT_MARGIN, 1.0).unwrap();
    assert_eq!(lib.len(), 1);
    assert_eq!(lib.entries[0].gain().as_slice(), &GainBounds::default().k_min);
    assert!(lib.entries[0].certificate.hurwitz);
}

#[test]
fn default_grid_certifies_every_entry() {
    let bounds = GainBounds::default();
    let lib = build_library(&bounds, 5, 3, QChoice::Identity, DEFAULT_MARGIN, 1.0).unwrap();
    assert_eq!(lib.len(), 15);
    assert!(lib.rejected.is_empty());
    for (i, e) in lib.entries.iter().enumerate() {
        assert!(e.certificate.hurwitz && e.certificate.stability_margin > DEFAULT_MARGIN);
        assert!(bounds.contains(e.gain().as_slice()));
        assert!(e.certificate.lyapunov.as_ref().unwrap().residual < 1e-8);
        assert_eq!(lib.find(e.gain()), Some(i));
        assert_relative_eq!(e.lambda, (i / 3) as f64 / 4.0);
        assert_relative_eq!(e.mu, (i % 3) as f64 / 2.0);
    }
    assert_eq!(lib.mid_index(), 7);
    assert!(lib.get(15).is_err());
}

#[test]
fn library_rejects_unstable_candidates() {
    let mut bounds = GainBounds::default();
    // Make the high end of the x-axis velocity gain violate Routh.
    bounds.k_max[6] = 5000.0;
    let lib = build_library(&bounds, 3, 1, QChoice::Identity, DEFAULT_MARGIN, 1.0).unwrap();
    assert!(!lib.rejected.is_empty());
    assert_eq!(lib.len() + lib.rejected.len(), 3);
    assert!(lib.entries.iter().all(|e| e.certificate.hurwitz));

    bounds.k_min[6] = 4000.0;
    assert!(matches!(
        build_library(&bounds, 2, 1, QChoice::Identity, DEFAULT_MARGIN, 1.0),
        Err(Error::EmptyLibrary)
    ));
}

#[test]
fn lyapunov_value_decreases_outside_ultimate_ball() {
    let lib = build_library(&GainBounds::default(), 3, 2, QChoice::Identity, DEFAULT_MARGIN, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for entry in &lib.entries {
        let cert = &entry.certificate;
        let a = build_a_cl(entry.gain());
        let radius = cert.lyapunov.as_ref().unwrap().level.radius;
        for _ in 0..5 {
            let z0 = ErrorVector::from_fn(|_, _| rng.random_range(-1.0..1.0));
            // worst-case constant disturbance of magnitude r_bar
            let d = Vector3::new(1.0, -1.0, 1.0).normalize() * lib.r_bar;
            let traj = simulate_error_dynamics(&a, &z0, 0.0, 0.01, 500, 10, |_| d);
            for w in traj.windows(2) {
                if w[0].norm() > radius {
                    let (v0, v1) = (
                        cert.lyapunov_value(&w[0]).unwrap(),
                        cert.lyapunov_value(&w[1]).unwrap(),
                    );
                    assert!(v1 <= v0 * (1.0 + 1e-9), "{v1} > {v0}");
                }
            }
        }
    }
}
