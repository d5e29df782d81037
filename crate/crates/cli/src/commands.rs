use std::fs;
use std::path::Path;

use contraction::builtin;
use contraction::ensemble::{run_all, EnsembleConfig};
use contraction::extension::{coupling, reduced_jacobian, Metric};
use contraction::linops::{matrix_measure, min_gain, spectral_abscissa, NormOrder};
use contraction::region::{
    box_bounds, build_certificate, certify_box, coefficient_spectra, BetaSource, BoxRegion, Certificate,
    CertificateOptions, CertifyOptions, InvariantBall, RegionReport,
};
use contraction::simulator::{
    ball_invariance, integrate_from, scct as run_scct, InvarianceOptions, InvarianceReport, SimFailure,
};
use contraction::{CoefficientDecomposition, JacobianBlocks, QuadraticDae};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::{DemoArgs, ModelArgs, RegionArgs, ScctArgs, SimulateArgs, VerifyArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Ok = 0,
    Io = 1,
    Model = 2,
    NotContracting = 3,
    Certification = 4,
    Property = 5,
    Simulation = 6,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
}

type CmdResult = Result<Code, Failure>;

fn fail(code: Code) -> impl Fn(contraction::Error) -> Failure {
    move |e| Failure { code, message: e.to_string() }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: Code::Model, message: message.into() }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn read_model(source: &str) -> Result<QuadraticDae, Failure> {
    let path = Path::new(source);
    if path.exists() {
        QuadraticDae::load(path).map_err(fail(Code::Model))
    } else {
        builtin::by_name(source).map_err(fail(Code::Model))
    }
}

/// Load a model and make sure it carries an equilibrium.
fn load_model(source: &str) -> Result<QuadraticDae, Failure> {
    let mut dae = read_model(source)?;
    if dae.equilibrium().is_none() {
        dae.find_equilibrium(&DVector::zeros(dae.dim())).map_err(fail(Code::Model))?;
    }
    Ok(dae)
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serialises") + "\n"
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>, file: &str) -> Result<(), Failure> {
    let text = json(value);
    print!("{text}");
    write_file(out, file, &text)
}

fn write_file(out: Option<&Path>, file: &str, text: &str) -> Result<(), Failure> {
    let Some(dir) = out else { return Ok(()) };
    let io = |e: std::io::Error| Failure { code: Code::Io, message: format!("{}: {e}", dir.display()) };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(dir.join(file), text).map_err(io)
}

struct Certified {
    dae: QuadraticDae,
    z: DVector<f64>,
    blocks: JacobianBlocks,
    decomp: CoefficientDecomposition,
    cert: Certificate,
}

fn regular_blocks(dae: &QuadraticDae) -> Result<JacobianBlocks, Failure> {
    let blocks = dae.blocks_at_equilibrium().map_err(fail(Code::Model))?;
    if blocks.d_sigma_min() <= contraction::dae::REGULARITY_THRESHOLD {
        return Err(usage(format!(
            "algebraic Jacobian is singular at the equilibrium (sigma_min = {:.3e})",
            blocks.d_sigma_min()
        )));
    }
    Ok(blocks)
}

fn certified(args: &ModelArgs) -> Result<Certified, Failure> {
    let dae = load_model(&args.model)?;
    let z = dae.require_equilibrium().map_err(fail(Code::Model))?.clone();
    let blocks = regular_blocks(&dae)?;
    let decomp = dae.coefficient_decomposition().map_err(fail(Code::Model))?;
    let opts = CertificateOptions { beta_target: args.beta, epsilon: args.epsilon };
    let cert = build_certificate(&decomp, &blocks, &opts).map_err(fail(Code::NotContracting))?;
    Ok(Certified { dae, z, blocks, decomp, cert })
}

#[derive(Serialize)]
struct Blocks {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Measure {
    norm: NormOrder,
    value: f64,
}

#[derive(Serialize)]
struct CertificateSummary {
    beta: f64,
    beta_source: BetaSource,
    epsilon: f64,
    lambda_max: f64,
    reduced_abscissa: f64,
    /// `μ₂(θA_rθ⁻¹)` in the certificate metric.
    reduced_measure_in_metric: f64,
    theta: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct Analysis {
    model: String,
    labels: Vec<String>,
    n: usize,
    m: usize,
    equilibrium: Vec<f64>,
    residual: f64,
    regularity: f64,
    blocks: Blocks,
    reduced_jacobian: Vec<Vec<f64>>,
    reduced_abscissa: f64,
    /// `μ_p(F_r)` with identity metrics.
    measures: Vec<Measure>,
    nu2_h: f64,
    certificate: Option<CertificateSummary>,
    certificate_error: Option<String>,
}

pub fn analyze(args: &ModelArgs) -> CmdResult {
    let dae = load_model(&args.model)?;
    let z = dae.require_equilibrium().map_err(fail(Code::Model))?.clone();
    let blocks = regular_blocks(&dae)?;
    let identity = Metric::identity(dae.n(), dae.m());
    let fr = reduced_jacobian(&blocks, &identity).map_err(fail(Code::Model))?;
    let (_, h) = coupling(&blocks, &identity).map_err(fail(Code::Model))?;
    let mut measures = Vec::new();
    for p in NormOrder::ALL {
        measures.push(Measure { norm: p, value: matrix_measure(&fr, p).map_err(fail(Code::Model))? });
    }
    let decomp = dae.coefficient_decomposition().map_err(fail(Code::Model))?;
    let opts = CertificateOptions { beta_target: args.beta, epsilon: args.epsilon };
    let (certificate, certificate_error) = match build_certificate(&decomp, &blocks, &opts) {
        Ok(cert) => {
            let metric =
                Metric::new(cert.theta.clone(), DMatrix::identity(dae.m(), dae.m())).map_err(fail(Code::Model))?;
            let fr_metric = reduced_jacobian(&blocks, &metric).map_err(fail(Code::Model))?;
            let summary = CertificateSummary {
                beta: cert.beta,
                beta_source: cert.beta_source,
                epsilon: args.epsilon,
                lambda_max: cert.lambda_max,
                reduced_abscissa: cert.reduced_abscissa,
                reduced_measure_in_metric: matrix_measure(&fr_metric, NormOrder::Two).map_err(fail(Code::Model))?,
                theta: rows(&cert.theta),
            };
            (Some(summary), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let report = Analysis {
        model: args.model.clone(),
        labels: dae.labels().to_vec(),
        n: dae.n(),
        m: dae.m(),
        equilibrium: z.iter().copied().collect(),
        residual: dae.residual(&z).map_err(fail(Code::Model))?.amax(),
        regularity: blocks.d_sigma_min(),
        blocks: Blocks { a: rows(&blocks.a), b: rows(&blocks.b), c: rows(&blocks.c), d: rows(&blocks.d) },
        reduced_abscissa: spectral_abscissa(&fr),
        reduced_jacobian: rows(&fr),
        measures,
        nu2_h: min_gain(&h, NormOrder::Two).map_err(fail(Code::Model))?.value,
        certificate_error,
        certificate,
    };
    emit(&report, args.out.as_deref(), "analysis.json")?;
    Ok(if report.certificate.is_some() { Code::Ok } else { Code::NotContracting })
}

#[derive(Serialize)]
struct ConstraintEntry {
    coord: usize,
    label: String,
    bound: f64,
    radius: f64,
}

#[derive(Serialize)]
struct Ball {
    radius: Option<f64>,
    binding_constraint: Option<String>,
    x_star: Vec<f64>,
    center: Vec<f64>,
    theta: Vec<Vec<f64>>,
    constraints: Vec<ConstraintEntry>,
}

impl Ball {
    fn new(ball: &InvariantBall, labels: &[String]) -> Self {
        Self {
            radius: ball.radius,
            binding_constraint: ball.binding.map(|k| labels[k].clone()),
            x_star: ball.x_star.clone(),
            center: ball.center.clone(),
            theta: rows(&ball.theta),
            constraints: ball
                .constraints
                .iter()
                .map(|c| ConstraintEntry {
                    coord: c.coord,
                    label: labels[c.coord].clone(),
                    bound: c.bound,
                    radius: c.radius,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct RegionOutput {
    model: String,
    region: RegionReport,
    /// No coordinate is bounded: the contraction region is the whole space.
    unbounded: bool,
    unbounded_coordinates: Vec<String>,
    ball: Ball,
}

struct RegionParts {
    region: BoxRegion,
    ball: InvariantBall,
    certified: bool,
    report: RegionReport,
}

fn build_region(c: &Certified, norm: NormOrder, weights: Option<&[f64]>) -> Result<RegionParts, Failure> {
    let spectrum = coefficient_spectra(&c.cert, &c.decomp).map_err(fail(Code::Certification))?;
    let region = box_bounds(&spectrum, c.dae.dim(), weights).map_err(fail(Code::Model))?;
    let certification = certify_box(&c.decomp, &c.cert, &region, Some(&spectrum), norm, &CertifyOptions::default())
        .map_err(fail(Code::Certification))?;
    let ball =
        contraction::region::invariant_ball(&region, &c.cert, &c.blocks, &c.z).map_err(fail(Code::Certification))?;
    let certified = certification.certified;
    let report = RegionReport::new(&c.cert, &region, &ball, certification, c.dae.labels());
    Ok(RegionParts { region, ball, certified, report })
}

pub fn region(args: &RegionArgs) -> CmdResult {
    let c = certified(&args.model)?;
    let parts = build_region(&c, args.norm, args.weights.as_deref())?;
    let labels = c.dae.labels();
    let out = RegionOutput {
        model: args.model.model.clone(),
        unbounded: parts.region.finite_coordinates().is_empty(),
        unbounded_coordinates: (0..c.dae.dim())
            .filter(|&k| parts.region.bounds[k].is_none())
            .map(|k| labels[k].clone())
            .collect(),
        ball: Ball::new(&parts.ball, labels),
        region: parts.report,
    };
    let dir = args.model.out.as_deref();
    print!("{}", json(&out));
    write_file(dir, "region.json", &json(&out.region))?;
    write_file(dir, "ball.json", &json(&out.ball))?;
    Ok(if parts.certified { Code::Ok } else { Code::Certification })
}

pub fn verify_theorems(args: &VerifyArgs) -> CmdResult {
    let cfg = EnsembleConfig {
        seed: args.seed,
        systems: args.samples,
        lemma_tuples: args.lemma_tuples,
        max_n: args.max_dim,
        max_m: args.max_dim,
    };
    if args.samples == 0 || args.lemma_tuples == 0 || args.max_dim == 0 {
        return Err(usage("samples, lemma-tuples and max-dim must be positive"));
    }
    let report = run_all(&cfg).map_err(fail(Code::Property))?;
    emit(&report, args.out.as_deref(), "ensemble.json")?;
    Ok(if report.passed { Code::Ok } else { Code::Property })
}

fn start_point(x0: Option<&[f64]>, z: &DVector<f64>, n: usize) -> Result<DVector<f64>, Failure> {
    match x0 {
        None => Ok(z.rows(0, n).into_owned()),
        Some(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(usage(format!("start has {} entries, the model has {n} differential variables", v.len()))),
    }
}

#[derive(Serialize)]
struct Simulation {
    model: String,
    x0: Vec<f64>,
    horizon: f64,
    dt: f64,
    steps: usize,
    final_time: f64,
    final_x: Vec<f64>,
    max_residual: f64,
    failure: Option<SimFailure>,
    invariance: Option<InvarianceReport>,
}

pub fn simulate(args: &SimulateArgs) -> CmdResult {
    let dae = load_model(&args.model.model)?;
    let z = dae.require_equilibrium().map_err(fail(Code::Model))?.clone();
    let (n, m) = (dae.n(), dae.m());
    let x0 = start_point(args.x0.as_deref(), &z, n)?;
    let y0 = z.rows(n, m).into_owned();
    let horizon = args.horizon.unwrap_or(10.0);
    let tr = integrate_from(&dae, &x0, &y0, horizon, args.dt).map_err(fail(Code::Simulation))?;
    let invariance = if args.samples > 0 {
        let c = certified(&args.model)?;
        let parts = build_region(&c, NormOrder::Two, None)?;
        if !parts.certified {
            return Err(Failure { code: Code::Certification, message: "box certification failed".into() });
        }
        let opts = InvarianceOptions {
            samples: args.samples,
            horizon: args.horizon.unwrap_or(10.0 / c.cert.beta),
            dt: args.dt,
            seed: args.seed,
            fraction: 1.0,
        };
        Some(ball_invariance(&dae, &parts.ball, &opts).map_err(fail(Code::Simulation))?)
    } else {
        None
    };
    let report = Simulation {
        model: args.model.model.clone(),
        x0: x0.iter().copied().collect(),
        horizon,
        dt: args.dt,
        steps: tr.len() - 1,
        final_time: *tr.times.last().expect("nonempty trajectory"),
        final_x: tr.last_x().iter().copied().collect(),
        max_residual: tr.residuals.iter().cloned().fold(0.0, f64::max),
        failure: tr.failure.clone(),
        invariance,
    };
    let dir = args.model.out.as_deref();
    write_file(dir, "trajectory.csv", &tr.to_csv(dae.labels()))?;
    emit(&report, dir, "simulation.json")?;
    let ok = report.failure.is_none() && report.invariance.as_ref().is_none_or(|r| r.passed);
    Ok(if ok { Code::Ok } else { Code::Simulation })
}

#[derive(Serialize)]
struct Scct {
    model: String,
    fault: String,
    metric: &'static str,
    radius: f64,
    x0: Vec<f64>,
    horizon: f64,
    dt: f64,
    exit_time: Option<f64>,
    result: String,
    failure: Option<SimFailure>,
}

pub fn scct(args: &ScctArgs) -> CmdResult {
    let (nominal, ball, metric) = match args.radius {
        Some(r) => {
            if !(r > 0.0 && r.is_finite()) {
                return Err(usage(format!("radius must be positive and finite, got {r}")));
            }
            let dae = load_model(&args.model.model)?;
            let n = dae.n();
            let xs: Vec<f64> =
                dae.require_equilibrium().map_err(fail(Code::Model))?.rows(0, n).iter().copied().collect();
            let ball = InvariantBall {
                center: xs.clone(),
                x_star: xs,
                radius: Some(r),
                theta: DMatrix::identity(n, n),
                binding: None,
                constraints: Vec::new(),
            };
            (dae, ball, "euclidean")
        }
        None => {
            let c = certified(&args.model)?;
            let parts = build_region(&c, NormOrder::Two, None)?;
            if !parts.certified {
                return Err(Failure { code: Code::Certification, message: "box certification failed".into() });
            }
            if parts.ball.radius.is_none() {
                return Err(Failure {
                    code: Code::Certification,
                    message: "invariant ball is unbounded; pass --radius".into(),
                });
            }
            (c.dae, parts.ball, "certificate")
        }
    };
    let fault = read_model(&args.fault)?;
    if fault.n() != nominal.n() || fault.m() != nominal.m() {
        return Err(usage("fault and nominal models have different dimensions"));
    }
    let z = nominal.require_equilibrium().map_err(fail(Code::Model))?.clone();
    let (n, m) = (nominal.n(), nominal.m());
    let x0 = start_point(args.x0.as_deref(), &z, n)?;
    let y0 = z.rows(n, m).into_owned();
    let radius = ball.radius.expect("bounded ball");
    if ball.metric_distance(&x0) > radius {
        return Err(usage("start lies outside the ball"));
    }
    let rep = run_scct(&fault, &ball, &x0, &y0, args.horizon, args.dt).map_err(fail(Code::Simulation))?;
    let result = match rep.time {
        Some(t) => format!("exit at t = {t:.6} s"),
        None => "none within horizon".to_string(),
    };
    eprintln!("{result}");
    let report = Scct {
        model: args.model.model.clone(),
        fault: args.fault.clone(),
        metric,
        radius,
        x0: x0.iter().copied().collect(),
        horizon: args.horizon,
        dt: args.dt,
        exit_time: rep.time,
        result,
        failure: rep.failure.clone(),
    };
    let dir = args.model.out.as_deref();
    if dir.is_some() {
        let span = rep.time.unwrap_or(args.horizon);
        let tr = integrate_from(&fault, &x0, &y0, span, args.dt.min(span)).map_err(fail(Code::Simulation))?;
        write_file(dir, "fault_trajectory.csv", &tr.to_csv(fault.labels()))?;
    }
    emit(&report, dir, "scct.json")?;
    Ok(if report.failure.is_none() { Code::Ok } else { Code::Simulation })
}

pub fn demo(args: &DemoArgs) -> CmdResult {
    let dae = builtin::by_name(&args.name).map_err(fail(Code::Model))?;
    let text = dae.to_json() + "\n";
    match &args.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure { code: Code::Io, message: format!("{}: {e}", path.display()) })?,
        None => print!("{text}"),
    }
    Ok(Code::Ok)
}
