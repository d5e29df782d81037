use contraction::dae::QuadraticTerm;
use contraction::extension::{
    converse_extension_2, coupling, extended_jacobian, key_relation_residual, lemma1_gamma, manifold_displacement,
    reduced_jacobian, ExtensionMatrices, Lemma1Outcome, Metric,
};
use contraction::linops::{induced_norm, matrix_measure, matrix_measure_oracle, solve_lyapunov, NormOrder};
use contraction::region::{
    box_bounds, build_certificate, certify_box, coefficient_spectra, CertificateOptions, CertifyOptions,
};
use contraction::simulator::sphere_directions;
use contraction::{JacobianBlocks, QuadraticDae};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn square(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max).prop_flat_map(|n| matrix(n, n, 2.0))
}

fn vector(len: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0..1.0f64, len).prop_map(DVector::from_vec)
}

/// Upper triangular with a well separated diagonal.
fn metric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n, 0.4).prop_map(move |mut t| {
        for i in 0..n {
            t[(i, i)] = 1.0 + t[(i, i)].abs();
            for j in 0..i {
                t[(i, j)] = 0.0;
            }
        }
        t
    })
}

/// Blocks with a diagonally shifted `D` so it stays invertible.
fn blocks(max_n: usize, max_m: usize) -> impl Strategy<Value = JacobianBlocks> {
    (1..=max_n, 1..=max_m).prop_flat_map(|(n, m)| {
        (matrix(n, n, 1.0), matrix(n, m, 1.0), matrix(m, n, 1.0), matrix(m, m, 0.4)).prop_map(
            move |(a, b, c, mut d)| {
                for i in 0..m {
                    d[(i, i)] -= 2.0;
                }
                JacobianBlocks { a, b, c, d }
            },
        )
    })
}

/// Blocks and a metric with `μ₂(θA_rθ⁻¹) < 0`, obtained by shifting `A`.
fn hurwitz_system() -> impl Strategy<Value = (JacobianBlocks, DMatrix<f64>)> {
    blocks(4, 4).prop_flat_map(|bl| {
        let n = bl.n();
        (Just(bl), metric(n), 0.1..2.0f64).prop_map(|(mut bl, theta, margin)| {
            let n = bl.n();
            let fr = &theta * bl.reduced().unwrap() * theta.clone().try_inverse().unwrap();
            let top = SymmetricEigen::new((&fr + fr.transpose()) * 0.5).eigenvalues.max();
            bl.a -= DMatrix::identity(n, n) * (top.max(0.0) + margin);
            (bl, theta)
        })
    })
}

/// `ẋ = −a x + b y + q₁ x y`, `0 = c x − d y + q₂ y²` around the origin.
fn scalar_quadratic() -> impl Strategy<Value = QuadraticDae> {
    (0.5..2.0f64, -1.0..1.0f64, -1.0..1.0f64, 1.0..3.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("reduced dynamics must decay", |&(a, b, c, d, _, _)| -a + b * c / d < -0.1)
        .prop_map(|(a, b, c, d, q1, q2)| {
            let lin = DMatrix::from_row_slice(2, 2, &[-a, b, c, -d]);
            let terms =
                [QuadraticTerm { eq: 0, j: 0, k: 1, coeff: q1 }, QuadraticTerm { eq: 1, j: 1, k: 1, coeff: q2 }];
            QuadraticDae::new(1, 1, DVector::zeros(2), lin, &terms)
                .unwrap()
                .with_equilibrium(DVector::zeros(2))
                .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measure_is_bounded_by_norm(m in square(6)) {
        for p in NormOrder::ALL {
            let mu = matrix_measure(&m, p).unwrap();
            let norm = induced_norm(&m, p);
            prop_assert!(mu <= norm + 1e-12 && -norm - 1e-12 <= mu);
        }
    }

    #[test]
    fn measure_is_subadditive_and_homogeneous(
        (a, b) in (1..=5usize).prop_flat_map(|n| (matrix(n, n, 2.0), matrix(n, n, 2.0))),
        c in 0.0..5.0f64,
    ) {
        for p in NormOrder::ALL {
            let (ma, mb) = (matrix_measure(&a, p).unwrap(), matrix_measure(&b, p).unwrap());
            prop_assert!(matrix_measure(&(&a + &b), p).unwrap() <= ma + mb + 1e-10);
            prop_assert!((matrix_measure(&(&a * c), p).unwrap() - c * ma).abs() <= 1e-10 * (1.0 + c * ma.abs()));
        }
    }

    #[test]
    fn measure_matches_limit(m in square(5)) {
        for p in NormOrder::ALL {
            let exact = matrix_measure(&m, p).unwrap();
            let limit = matrix_measure_oracle(&m, p, 1e-7).unwrap();
            prop_assert!((exact - limit).abs() <= 1e-5, "p={} {} vs {}", p, exact, limit);
        }
    }

    #[test]
    fn key_relation_holds(
        (bl, theta, rho, q, r, dx, dy) in blocks(5, 5).prop_flat_map(|bl| {
            let (n, m) = (bl.n(), bl.m());
            (Just(bl), metric(n), metric(m), matrix(m, m, 1.0), matrix(m, n, 1.0), vector(n), vector(m))
        })
    ) {
        let metric = Metric::new(theta, rho).unwrap();
        let ext = ExtensionMatrices { q, r, eta: 0.0, epsilon: 0.0 };
        prop_assert!(key_relation_residual(&bl, &metric, &ext, &dx, &dy).unwrap() <= 1e-12);
    }

    #[test]
    fn manifold_displacement_stays_on_manifold(
        (bl, dx) in blocks(5, 5).prop_flat_map(|bl| { let n = bl.n(); (Just(bl), vector(n)) })
    ) {
        let dy = manifold_displacement(&bl, &dx).unwrap();
        let r = &bl.c * &dx + &bl.d * &dy;
        prop_assert!(r.amax() <= 1e-12 * (1.0 + dx.amax() + dy.amax()) * 10.0);
    }

    #[test]
    fn theorem2_structure((bl, theta) in hurwitz_system(), eps in 0.05..10.0f64) {
        let (ext, rho) = converse_extension_2(&bl, &theta, eps).unwrap();
        let metric = Metric::new(theta, rho).unwrap();
        let fr = reduced_jacobian(&bl, &metric).unwrap();
        let f = extended_jacobian(&bl, &metric, &ext).unwrap();
        let (s, _) = coupling(&bl, &metric).unwrap();
        let n = fr.nrows();
        let m = f.nrows() - n;
        let sym = (&f + f.transpose()) * 0.5;
        let sym_fr = (&fr + fr.transpose()) * 0.5;
        let expected_top = &sym_fr + s.transpose() * &s * ext.eta;
        prop_assert!((sym.view((0, 0), (n, n)) - expected_top).amax() <= 1e-10 * (1.0 + sym.amax()));
        prop_assert!(sym.view((n, 0), (m, n)).amax() <= 1e-10 * (1.0 + sym.amax()));
        prop_assert!((sym.view((n, n), (m, m)) + DMatrix::identity(m, m) * ext.eta).amax() <= 1e-10 * (1.0 + ext.eta));
        let mu_f = matrix_measure(&f, NormOrder::Two).unwrap();
        let mu_fr = matrix_measure(&fr, NormOrder::Two).unwrap();
        prop_assert!(mu_f <= mu_fr / (1.0 + eps) + 1e-9);
    }

    #[test]
    fn lemma1_finite_exponents(
        (fr, dv, du) in (1..=5usize, 1..=5usize).prop_flat_map(|(n, m)| (matrix(n, n, 1.0), vector(n), vector(m))),
        h in 1e-3..0.5f64,
        shift in 0.0..3.0f64,
    ) {
        let n = fr.nrows();
        let fr = fr - DMatrix::identity(n, n) * shift;
        for p in [1.0, 1.5, 2.0, 3.0, 7.0] {
            if let Lemma1Outcome::Applicable { gamma } = lemma1_gamma(&dv, &du, &fr, h, p).unwrap() {
                prop_assert!(gamma >= -1e-12, "p={} gamma={}", p, gamma);
            }
        }
    }

    #[test]
    fn lyapunov_solution_is_spd(
        (a, shift) in (1..=5usize).prop_flat_map(|n| (matrix(n, n, 1.0), 0.1..1.0f64))
    ) {
        let n = a.nrows();
        let top = a.clone().complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
        let a = a - DMatrix::identity(n, n) * (top.max(0.0) + shift);
        let f = solve_lyapunov(&a).unwrap();
        let res = a.transpose() * &f.p + &f.p * &a + DMatrix::identity(n, n);
        prop_assert!(res.amax() <= 1e-8 * (1.0 + f.p.amax()));
        prop_assert!(SymmetricEigen::new(f.p.clone()).eigenvalues.min() > 0.0);
        prop_assert!((f.theta.transpose() * &f.theta - &f.p).amax() <= 1e-9 * f.p.amax());
    }

    #[test]
    fn certificate_reconstructs_lmi(dae in scalar_quadratic()) {
        let decomp = dae.coefficient_decomposition().unwrap();
        let cert = build_certificate(&decomp, &dae.blocks_at_equilibrium().unwrap(), &CertificateOptions::default()).unwrap();
        prop_assert!(cert.beta > 0.0);
        let lhs = cert.lmi(&decomp.j_star) + cert.u.transpose() * &cert.u;
        prop_assert!(lhs.amax() <= 1e-9 * (1.0 + cert.lmi(&decomp.j_star).amax()));
    }

    #[test]
    fn certified_box_interior_is_sound(dae in scalar_quadratic(), t in prop::collection::vec(-1.0..1.0f64, 40)) {
        let decomp = dae.coefficient_decomposition().unwrap();
        let cert = build_certificate(&decomp, &dae.blocks_at_equilibrium().unwrap(), &CertificateOptions::default()).unwrap();
        let spectrum = coefficient_spectra(&cert, &decomp).unwrap();
        let region = box_bounds(&spectrum, dae.dim(), None).unwrap();
        let c = certify_box(&decomp, &cert, &region, Some(&spectrum), NormOrder::Two, &CertifyOptions::default()).unwrap();
        prop_assert!(c.certified);
        for pair in t.chunks(2) {
            let dz = DVector::from_fn(2, |k, _| region.bounds[k].map_or(0.0, |b| b * pair[k]));
            let j = dae.eval_jacobian(&dz).unwrap();
            let lmi = cert.lmi(&j);
            prop_assert!(SymmetricEigen::new(lmi).eigenvalues.max() <= 1e-9);
        }
    }

    #[test]
    fn lower_rate_certifies_higher_rate_box(dae in scalar_quadratic(), frac in 0.1..0.9f64) {
        let decomp = dae.coefficient_decomposition().unwrap();
        let blocks = dae.blocks_at_equilibrium().unwrap();
        let full = build_certificate(&decomp, &blocks, &CertificateOptions::default()).unwrap();
        let opts = CertificateOptions { beta_target: Some(frac * full.beta), ..Default::default() };
        let low = build_certificate(&decomp, &blocks, &opts).unwrap();
        prop_assert!(low.beta < full.beta);
        let region = box_bounds(&coefficient_spectra(&full, &decomp).unwrap(), 2, None).unwrap();
        let c = certify_box(&decomp, &low, &region, None, NormOrder::Two, &CertifyOptions::default()).unwrap();
        prop_assert!(c.certified);
    }

    #[test]
    fn model_json_round_trip(dae in scalar_quadratic()) {
        let text = dae.to_json();
        let back = QuadraticDae::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json(), text);
        prop_assert_eq!(back.equilibrium(), dae.equilibrium());
    }

    #[test]
    fn sphere_directions_are_unit_and_seeded(dim in 1..8usize, count in 1..40usize, seed in any::<u64>()) {
        let a = sphere_directions(dim, count, seed);
        prop_assert_eq!(a.len(), count);
        for u in &a {
            prop_assert!((u.norm() - 1.0).abs() <= 1e-12);
        }
        prop_assert_eq!(a, sphere_directions(dim, count, seed));
    }
}
