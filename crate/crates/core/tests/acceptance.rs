//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion. Oracles are computed here from first
//! principles rather than through the library routines under test.

use std::process::ExitCode;
use std::time::Instant;

use contraction::builtin;
use contraction::extension::{
    converse_extension_1, converse_extension_2, converse_extension_inf, extended_jacobian, reduced_jacobian,
    ExtensionMatrices, Metric,
};
use contraction::linops::{matrix_measure, NormOrder};
use contraction::powersys::{self, default_params};
use contraction::region::{
    box_bounds, build_certificate, certify_box, coefficient_spectra, invariant_ball, CertificateOptions,
    CertificationMethod, CertifyOptions, InvariantBall,
};
use contraction::simulator::{ball_invariance, integrate, integrate_from, scct, InvarianceOptions};
use contraction::JacobianBlocks;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is recorded and explained in the README.
const KNOWN_FAILURES: [usize; 1] = [6];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

// Oracles.

fn induced_norm(m: &DMatrix<f64>, p: NormOrder) -> f64 {
    match p {
        NormOrder::One => (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max),
        NormOrder::Infinity => {
            (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
        }
        NormOrder::Two => m.clone().svd(false, false).singular_values.max(),
    }
}

fn limit_measure(m: &DMatrix<f64>, p: NormOrder, h: f64) -> f64 {
    let n = m.nrows();
    (induced_norm(&(DMatrix::identity(n, n) + m * h), p) - 1.0) / h
}

fn lam_max(s: &DMatrix<f64>) -> f64 {
    let sym = (s + s.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

/// Closed-form measures: Gershgorin-type sums for 1 and ∞, largest
/// eigenvalue of the symmetric part for 2.
fn mu(m: &DMatrix<f64>, p: NormOrder) -> f64 {
    let n = m.nrows();
    let off = |i: usize, row: bool| -> f64 {
        (0..n).filter(|&j| j != i).map(|j| if row { m[(i, j)].abs() } else { m[(j, i)].abs() }).sum()
    };
    match p {
        NormOrder::Two => lam_max(m),
        NormOrder::Infinity => (0..n).map(|i| m[(i, i)] + off(i, true)).fold(f64::NEG_INFINITY, f64::max),
        NormOrder::One => (0..n).map(|i| m[(i, i)] + off(i, false)).fold(f64::NEG_INFINITY, f64::max),
    }
}

fn vnorm(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        v.iter().fold(0.0, |a, x| a.max(x.abs()))
    } else {
        v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s))
}

fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible")
}

/// Random blocks with `F_r = θ A_r θ⁻¹` chosen directly, so the reduced
/// Jacobian is contracting in the requested norm by construction.
struct System {
    blocks: JacobianBlocks,
    theta: DMatrix<f64>,
    fr: DMatrix<f64>,
}

fn random_system(rng: &mut ChaCha8Rng, p: NormOrder) -> System {
    let n = rng.gen_range(1..=6);
    let m = rng.gen_range(1..=6);
    let mut theta = uniform(rng, n, n, 0.3);
    for i in 0..n {
        theta[(i, i)] += rng.gen_range(0.8..1.5);
    }
    let b = uniform(rng, n, m, 1.0);
    let c = uniform(rng, m, n, 1.0);
    let mut d = uniform(rng, m, m, 0.5);
    for i in 0..m {
        d[(i, i)] += if rng.gen_bool(0.5) { 2.0 } else { -2.0 };
    }
    let base = uniform(rng, n, n, 1.0);
    let shift = mu(&base, p) + rng.gen_range(0.1..1.5);
    let fr = base - DMatrix::identity(n, n) * shift;
    let a = inv(&theta) * &fr * &theta + &b * inv(&d) * &c;
    System { blocks: JacobianBlocks { a, b, c, d }, theta, fr }
}

// Criteria.

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let m = uniform(&mut rng, n, n, 2.0);
        for p in NormOrder::ALL {
            let got = matrix_measure(&m, p).expect("measure");
            worst = worst.max((got - limit_measure(&m, p, 1e-7)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-5 && secs < 5.0, format!("max |mu - oracle| = {worst:.2e} over 600 cases, {secs:.2} s"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let sys = random_system(&mut rng, NormOrder::Two);
        let JacobianBlocks { a, b, c, d } = &sys.blocks;
        let (n, m) = (a.nrows(), d.nrows());
        let mut rho = uniform(&mut rng, m, m, 0.3);
        for i in 0..m {
            rho[(i, i)] += 1.0;
        }
        let metric = Metric::new(sys.theta.clone(), rho.clone()).expect("metric");
        let ext = ExtensionMatrices {
            q: uniform(&mut rng, m, m, 1.0),
            r: uniform(&mut rng, m, n, 1.0),
            eta: 0.0,
            epsilon: 0.0,
        };
        let f = extended_jacobian(&sys.blocks, &metric, &ext).expect("F");
        let dx = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let dy = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let dw = DVector::from_iterator(n + m, (&sys.theta * &dx).iter().chain((&rho * &dy).iter()).copied());
        let lhs = &f * dw;
        let fr = &sys.theta * (a - b * inv(d) * c) * inv(&sys.theta);
        let g = c * &dx + d * &dy;
        let top = &fr * (&sys.theta * &dx) + &sys.theta * ext.r.transpose() * &g;
        let bottom = ext.q.transpose() * &g;
        let rhs = DVector::from_iterator(n + m, top.iter().chain(bottom.iter()).copied());
        let scale = lhs.amax().max(rhs.amax()).max(1.0);
        worst = worst.max((lhs - rhs).amax() / scale);
    }
    outcome(worst <= 1e-12, format!("max relative residual = {worst:.2e} over 100 pairs"))
}

fn theorem2_extension(sys: &System, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (ext, rho) = converse_extension_2(&sys.blocks, &sys.theta, eps).expect("extension");
    let metric = Metric::new(sys.theta.clone(), rho).expect("metric");
    let f = extended_jacobian(&sys.blocks, &metric, &ext).expect("F");
    let JacobianBlocks { c, d, .. } = &sys.blocks;
    let s = &metric.rho * inv(d) * c * inv(&sys.theta);
    let n = sys.theta.nrows();
    let mut h = DMatrix::zeros(n + s.nrows(), n);
    h.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    h.view_mut((n, 0), (s.nrows(), n)).copy_from(&s);
    (f, h)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::INFINITY;
    let mut cases = 0;
    while cases < 100 {
        let sys = random_system(&mut rng, NormOrder::Two);
        let eps = rng.gen_range(0.1..5.0);
        let (_, h) = theorem2_extension(&sys, eps);
        let (ext, rho) = converse_extension_2(&sys.blocks, &sys.theta, eps).expect("extension");
        let metric = Metric::new(sys.theta.clone(), rho).expect("metric");
        let (m, n) = ext.r.shape();
        let (nq, nr) = (uniform(&mut rng, m, m, 1.0), uniform(&mut rng, m, n, 1.0));
        // Perturb Q and R, keeping F an extension, until F stops contracting.
        let mut scale = 1.0;
        let f = loop {
            let trial = ExtensionMatrices { q: &ext.q + &nq * scale, r: &ext.r + &nr * scale, ..ext.clone() };
            let f = extended_jacobian(&sys.blocks, &metric, &trial).expect("F");
            if mu(&f, NormOrder::Two) < 0.0 {
                break f;
            }
            scale *= 0.5;
        };
        let nu = h.clone().svd(false, false).singular_values.min();
        worst = worst.min(mu(&f, NormOrder::Two) * nu - mu(&sys.fr, NormOrder::Two));
        cases += 1;
    }
    outcome(worst >= -1e-9, format!("min slack mu2(F)nu2(H) - mu2(F_r) = {worst:.3e} over 100 systems"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let systems: Vec<System> = (0..100).map(|_| random_system(&mut rng, NormOrder::Two)).collect();
    let (mut slack, mut block) = (f64::INFINITY, 0.0f64);
    for eps in [0.1, 1.0, 10.0] {
        for sys in &systems {
            let (f, _) = theorem2_extension(sys, eps);
            slack = slack.min(mu(&sys.fr, NormOrder::Two) / (1.0 + eps) - mu(&f, NormOrder::Two));
            let n = sys.theta.nrows();
            let sym = (&f + f.transpose()) * 0.5;
            block = block.max(sym.view((n, 0), (f.nrows() - n, n)).amax());
        }
    }
    outcome(
        slack >= -1e-9 && block <= 1e-10,
        format!("min rate slack = {slack:.3e}, max off-diagonal block of sym(F) = {block:.2e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut detail = Vec::new();
    let mut passed = true;
    for (p, build, seed) in [
        (NormOrder::Infinity, converse_extension_inf as fn(&_, &_, f64) -> _, 5),
        (NormOrder::One, converse_extension_1, 6),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let systems: Vec<System> = (0..100).map(|_| random_system(&mut rng, p)).collect();
        let mut slack = f64::INFINITY;
        for eps in [0.1, 0.5] {
            for sys in &systems {
                let (ext, rho): (ExtensionMatrices, DMatrix<f64>) =
                    build(&sys.blocks, &sys.theta, eps).expect("extension");
                let metric = Metric::new(sys.theta.clone(), rho).expect("metric");
                let f = extended_jacobian(&sys.blocks, &metric, &ext).expect("F");
                slack = slack.min(mu(&sys.fr, p) * (1.0 - eps) - mu(&f, p));
            }
        }
        passed &= slack >= -1e-9;
        detail.push(format!("p={p}: min slack {slack:.3e}"));
    }
    outcome(passed, detail.join(", "))
}

fn criterion_6() -> Outcome {
    let mut detail = Vec::new();
    let mut passed = true;
    for (idx, p) in [1.0, 2.0, 3.0, f64::INFINITY].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(60 + idx as u64);
        let (mut admissible, mut worst, mut negative) = (0, f64::INFINITY, 0);
        while admissible < 1000 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(1..=6);
            let fr = uniform(&mut rng, n, n, 1.0) - DMatrix::identity(n, n) * rng.gen_range(0.0..3.0);
            let dv = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let du_scale = rng.gen_range(0.0..2.0);
            let du = DVector::from_fn(m, |_, _| du_scale * rng.gen_range(-1.0..1.0));
            let h = rng.gen_range(1e-3..0.5);
            let stepped = &dv + &fr * &dv * h;
            let stack = |a: &DVector<f64>| a.iter().chain(du.iter()).copied().collect::<Vec<f64>>();
            let hyp = vnorm(&stack(&stepped), p) - vnorm(&stack(&dv), p);
            if hyp > 0.0 {
                continue;
            }
            admissible += 1;
            let gamma = hyp - (vnorm(stepped.as_slice(), p) - vnorm(dv.as_slice(), p));
            worst = worst.min(gamma);
            if gamma < -1e-12 {
                negative += 1;
            }
        }
        passed &= worst >= -1e-12;
        let tag = if p.is_infinite() { "inf".to_string() } else { p.to_string() };
        detail.push(format!("p={tag}: min gamma {worst:.3e} ({negative} negative)"));
    }
    outcome(passed, detail.join(", "))
}

fn criterion_7() -> Outcome {
    let dae = builtin::linear().expect("model");
    let blocks = dae.blocks_at_equilibrium().expect("blocks");
    let fr = reduced_jacobian(&blocks, &Metric::identity(1, 1)).expect("F_r");
    let tr = integrate(&dae, &DVector::from_element(1, 1.0), 10.0, 1e-3).expect("simulation");
    let err = tr.times.iter().zip(&tr.x).map(|(t, x)| (x[0] - (-t / 2.0).exp()).abs()).fold(0.0, f64::max);
    let exact = fr[(0, 0)] == -0.5;
    outcome(
        exact && err <= 1e-6 && tr.failure.is_none(),
        format!("F_r = {}, max |x(t) - exp(-t/2)| = {err:.2e}", fr[(0, 0)]),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let p = default_params();
    let published = [
        (p.t_d0p, 0.6),
        (p.t_d0pp, 0.02),
        (p.x_q, 0.8958),
        (p.x_qp, 0.1969),
        (p.x_qpp, 0.1),
        (p.t_q0p, 0.535),
        (p.t_q0pp, 0.02),
        (p.inertia, 12.8),
        (p.damping, 20.0),
        (p.t_aa, 0.002),
        (p.p_m, p.p_g),
        (p.r, 0.01938),
        (p.x, 0.05),
        (p.b, 0.0528),
        (p.f_n, 60.0),
        (p.v1, 1.04),
        (p.v2, 1.025),
        (p.p_g, 0.8),
        (p.p_l, 1.63),
        (p.q_l, 1.025),
    ];
    let params_ok = published.iter().all(|(a, b)| a == b);
    let dae = builtin::by_name("two-bus").expect("model");
    let z = dae.require_equilibrium().expect("equilibrium").clone();
    let residual = dae.residual(&z).expect("residual").amax();
    let setpoints = (z[powersys::V_2] - 1.025)
        .abs()
        .max((z[powersys::I_D] * z[powersys::V_D] + z[powersys::I_Q] * z[powersys::V_Q] - 0.8).abs());
    let blocks = dae.blocks_at_equilibrium().expect("blocks");
    let ar = &blocks.a - &blocks.b * inv(&blocks.d) * &blocks.c;
    let abscissa = ar.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let decomp = dae.coefficient_decomposition().expect("decomposition");
    let cert = build_certificate(&decomp, &blocks, &CertificateOptions::default()).expect("certificate");
    let lm = lam_max(&(cert.z.transpose() * &decomp.j_star));
    let secs = start.elapsed().as_secs_f64();
    let passed = params_ok
        && residual <= 1e-8
        && setpoints <= 1e-8
        && abscissa < 0.0
        && cert.beta > 0.0
        && lm <= -cert.beta
        && secs < 30.0;
    outcome(
        passed,
        format!(
            "params {}, residual {residual:.1e}, setpoint error {setpoints:.1e}, abscissa(A_r) {abscissa:.4}, \
             lambda_max {lm:.4} <= -beta {:.4}, {secs:.2} s",
            if params_ok { "exact" } else { "MISMATCH" },
            -cert.beta
        ),
    )
}

struct TwoBus {
    dae: contraction::QuadraticDae,
    z: DVector<f64>,
    blocks: JacobianBlocks,
    decomp: contraction::CoefficientDecomposition,
    cert: contraction::region::Certificate,
    region: contraction::region::BoxRegion,
    ball: InvariantBall,
}

fn two_bus() -> TwoBus {
    let dae = builtin::by_name("two-bus").expect("model");
    let z = dae.require_equilibrium().expect("equilibrium").clone();
    let blocks = dae.blocks_at_equilibrium().expect("blocks");
    let decomp = dae.coefficient_decomposition().expect("decomposition");
    let cert = build_certificate(&decomp, &blocks, &CertificateOptions::default()).expect("certificate");
    let spectrum = coefficient_spectra(&cert, &decomp).expect("spectra");
    let region = box_bounds(&spectrum, dae.dim(), None).expect("box");
    let ball = invariant_ball(&region, &cert, &blocks, &z).expect("ball");
    TwoBus { dae, z, blocks, decomp, cert, region, ball }
}

fn criterion_9(sys: &TwoBus) -> Outcome {
    let spectrum = coefficient_spectra(&sys.cert, &sys.decomp).expect("spectra");
    let cert_box =
        certify_box(&sys.decomp, &sys.cert, &sys.region, Some(&spectrum), NormOrder::Two, &CertifyOptions::default())
            .expect("certification");
    let vertices_ok = cert_box.certified && cert_box.method == CertificationMethod::Vertices;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::NEG_INFINITY;
    let dim = sys.dae.dim();
    let beta_i = DMatrix::identity(dim, dim) * sys.cert.beta;
    for _ in 0..500 {
        let dz = DVector::from_fn(dim, |k, _| sys.region.bounds[k].map_or(0.0, |b| rng.gen_range(-b..b)));
        let j = sys.dae.eval_jacobian(&(&sys.z + dz)).expect("jacobian");
        let zj = sys.cert.z.transpose() * j;
        worst = worst.max(SymmetricEigen::new(&zj + zj.transpose() + &beta_i).eigenvalues.max());
    }

    // Inscribed radius: for every finite box coordinate, the largest r with
    // r·sqrt(aᵀ(θᵀθ)⁻¹a) <= b, minimized over coordinates.
    let n = sys.dae.n();
    let p_inv = inv(&(sys.cert.theta.transpose() * &sys.cert.theta));
    let sens = -(sys.blocks.d.clone().lu().solve(&sys.blocks.c).expect("D nonsingular"));
    let mut oracle = f64::INFINITY;
    for (k, b) in sys.region.bounds.iter().enumerate() {
        let Some(b) = b else { continue };
        let a: DVector<f64> = if k < n {
            DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 })
        } else {
            sens.row(k - n).transpose()
        };
        let gain = (a.transpose() * &p_inv * &a)[(0, 0)].sqrt();
        if gain > 0.0 {
            oracle = oracle.min(b / gain);
        }
    }
    let r = sys.ball.radius.unwrap_or(f64::INFINITY);
    let r_err = (r - oracle).abs();
    let label = sys.ball.binding.map(|k| sys.dae.labels()[k].clone()).unwrap_or_default();
    outcome(
        vertices_ok && worst <= 1e-9 && r_err <= 1e-9,
        format!(
            "{} vertices worst {:.3e}, 500 interior samples worst {worst:.3e}, r_max {r:.6e} vs oracle {oracle:.6e} \
             (binding {label})",
            cert_box.vertices_checked, cert_box.worst
        ),
    )
}

fn criterion_10(sys: &TwoBus) -> Outcome {
    let start = Instant::now();
    let beta = sys.cert.beta;
    let r = sys.ball.radius.expect("finite ball");
    let opts = InvarianceOptions { samples: 50, horizon: 10.0 / beta, dt: 1e-3, seed: 10, fraction: 1.0 };
    let report = ball_invariance(&sys.dae, &sys.ball, &opts).expect("invariance");
    let on_boundary = report
        .samples
        .iter()
        .all(|s| (sys.ball.metric_distance(&DVector::from_column_slice(&s.start)) / r - 1.0).abs() <= 1e-6);
    let stayed = report.samples.iter().all(|s| s.failure.is_none() && s.max_ratio <= 1.0 + 1e-6);
    let converged = report.samples.iter().all(|s| s.final_ratio <= 0.01);
    let max_ratio = report.samples.iter().map(|s| s.max_ratio).fold(0.0, f64::max);
    let final_ratio = report.samples.iter().map(|s| s.final_ratio).fold(0.0, f64::max);

    // Pair of interior starts; least-squares slope of log distance.
    let theta_inv = inv(&sys.ball.theta);
    let xs = DVector::from_column_slice(&sys.ball.x_star);
    let n = xs.len();
    let u1 = DVector::from_fn(n, |i, _| if i == 0 { 0.5 * r } else { 0.0 });
    let u2 = DVector::from_fn(n, |i, _| if i == n - 1 { -0.5 * r } else { 0.0 });
    let y0 = sys.z.rows(n, sys.dae.m()).into_owned();
    let t1 = integrate_from(&sys.dae, &(&xs + &theta_inv * u1), &y0, 3.0, 1e-3).expect("pair");
    let t2 = integrate_from(&sys.dae, &(&xs + &theta_inv * u2), &y0, 3.0, 1e-3).expect("pair");
    let d0 = (&sys.ball.theta * (&t1.x[0] - &t2.x[0])).norm();
    let pts: Vec<(f64, f64)> = (0..t1.len())
        .map(|i| (t1.times[i], (&sys.ball.theta * (&t1.x[i] - &t2.x[i])).norm()))
        .filter(|&(_, d)| d > 1e-7 * d0)
        .map(|(t, d)| (t, d.ln()))
        .collect();
    let k = pts.len() as f64;
    let (mt, md) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let slope =
        pts.iter().map(|p| (p.0 - mt) * (p.1 - md)).sum::<f64>() / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    let rate = -slope;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        on_boundary && stayed && converged && rate >= 0.9 * beta && secs < 120.0,
        format!(
            "50 boundary starts: max ratio {max_ratio:.6}, final ratio {final_ratio:.2e} at T = {:.2}; \
             pair rate {rate:.3} vs 0.9 beta {:.3}; {secs:.1} s",
            opts.horizon,
            0.9 * beta
        ),
    )
}

fn criterion_11(sys: &TwoBus) -> Outcome {
    let unit = InvariantBall {
        center: vec![0.0],
        x_star: vec![0.0],
        radius: Some(1.0),
        theta: DMatrix::identity(1, 1),
        binding: None,
        constraints: Vec::new(),
    };
    let fault = builtin::scalar_fault().expect("model");
    let rep = scct(&fault, &unit, &DVector::from_element(1, 0.5), &DVector::zeros(1), 10.0, 1e-3).expect("scct");
    let exact = 2.0f64.ln() / 0.5;
    let scalar_err = rep.time.map_or(f64::INFINITY, |t| (t - exact).abs());

    let fault = builtin::by_name("two-bus-fault").expect("fault model");
    let n = sys.dae.n();
    let x0 = sys.z.rows(0, n).into_owned();
    let y0 = sys.z.rows(n, sys.dae.m()).into_owned();
    let a = scct(&fault, &sys.ball, &x0, &y0, 1.0, 1e-3).expect("scct");
    let b = scct(&fault, &sys.ball, &x0, &y0, 1.0, 1e-3).expect("scct");
    let finite = a.time.is_some_and(f64::is_finite);
    outcome(
        scalar_err <= 1e-3 && finite && a == b,
        format!(
            "scalar exit {:.6} vs ln2/0.5 = {exact:.6}; two-bus fault exit {:?} s (repeat identical: {})",
            rep.time.unwrap_or(f64::NAN),
            a.time,
            a == b
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut run = |id: usize, f: &dyn Fn() -> Outcome| {
        let o = f();
        let tag = match (o.passed, KNOWN_FAILURES.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2}: {tag}: {}", o.detail);
        results.push((id, o));
    };
    run(1, &criterion_1);
    run(2, &criterion_2);
    run(3, &criterion_3);
    run(4, &criterion_4);
    run(5, &criterion_5);
    run(6, &criterion_6);
    run(7, &criterion_7);
    run(8, &criterion_8);
    let sys = two_bus();
    run(9, &|| criterion_9(&sys));
    run(10, &|| criterion_10(&sys));
    run(11, &|| criterion_11(&sys));

    let unexpected: Vec<usize> =
        results.iter().filter(|(id, o)| !o.passed && !KNOWN_FAILURES.contains(id)).map(|(id, _)| *id).collect();
    let passed = results.iter().filter(|(_, o)| o.passed).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
