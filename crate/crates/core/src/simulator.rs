//! Fixed-step RK4 on the reduced field `ẋ = f(x, Y(x))` with per-stage
//! Newton solves, plus empirical checks of contraction, ball invariance and
//! the sufficient critical clearing time.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dae::{NewtonOptions, QuadraticDae, EQUILIBRIUM_TOL};
use crate::error::{invalid, Error, Result};
use crate::region::{BoxRegion, InvariantBall};

pub const DEFAULT_DT: f64 = 1e-3;
pub const SCCT_RESOLUTION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFailure {
    pub time: f64,
    pub message: String,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// `‖g‖_∞` at each accepted point.
    pub residuals: Vec<f64>,
    pub failure: Option<SimFailure>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn z(&self, i: usize) -> DVector<f64> {
        DVector::from_iterator(self.x[i].len() + self.y[i].len(), self.x[i].iter().chain(self.y[i].iter()).copied())
    }

    pub fn last_x(&self) -> &DVector<f64> {
        self.x.last().expect("trajectory has an initial point")
    }

    /// CSV with a time column, one column per coordinate and the residual.
    pub fn to_csv(&self, labels: &[String]) -> String {
        let mut out = String::from("t");
        for l in labels {
            out.push(',');
            out.push_str(l);
        }
        out.push_str(",residual\n");
        for i in 0..self.len() {
            out.push_str(&format!("{}", self.times[i]));
            for v in self.x[i].iter().chain(self.y[i].iter()) {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", self.residuals[i]));
        }
        out
    }
}

/// One reduced-field evaluation: `(ẋ, Y(x))`.
struct Field<'a> {
    dae: &'a QuadraticDae,
    newton: NewtonOptions,
}

impl Field<'_> {
    fn eval(&self, x: &DVector<f64>, y_guess: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let y = self.dae.solve_algebraic_with(x, y_guess, &self.newton)?;
        let (f, _) = self.dae.eval_residual(&self.dae.stack(x, &y))?;
        Ok((f, y))
    }

    fn step(&self, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let (k1, y1) = self.eval(x, y)?;
        let (k2, y2) = self.eval(&(x + &k1 * (h / 2.0)), &y1)?;
        let (k3, y3) = self.eval(&(x + &k2 * (h / 2.0)), &y2)?;
        let (k4, _) = self.eval(&(x + &k3 * h), &y3)?;
        let x_next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let y_next = self.dae.solve_algebraic_with(&x_next, &y3, &self.newton)?;
        Ok((x_next, y_next))
    }

    fn residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        Ok(self.dae.eval_residual(&self.dae.stack(x, y))?.1.amax())
    }
}

fn initial_guess(dae: &QuadraticDae) -> DVector<f64> {
    match dae.equilibrium() {
        Some(z) => z.rows(dae.n(), dae.m()).into_owned(),
        None => DVector::zeros(dae.m()),
    }
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be nonnegative, got {horizon}")));
    }
    Ok((horizon / dt - 1e-9).ceil().max(0.0) as usize)
}

/// Integrate from `x0`, starting the algebraic solve from the stored
/// equilibrium (or zero).
pub fn integrate(dae: &QuadraticDae, x0: &DVector<f64>, horizon: f64, dt: f64) -> Result<Trajectory> {
    integrate_from(dae, x0, &initial_guess(dae), horizon, dt)
}

/// Integrate from `x0` with an explicit algebraic starting guess.
pub fn integrate_from(
    dae: &QuadraticDae,
    x0: &DVector<f64>,
    y_guess: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    integrate_observed(dae, x0, y_guess, horizon, dt, |_, _| true)
}

/// Integration that stops early once `keep_going(t, x)` returns false.
fn integrate_observed(
    dae: &QuadraticDae,
    x0: &DVector<f64>,
    y_guess: &DVector<f64>,
    horizon: f64,
    dt: f64,
    mut keep_going: impl FnMut(f64, &DVector<f64>) -> bool,
) -> Result<Trajectory> {
    if x0.len() != dae.n() || y_guess.len() != dae.m() {
        return Err(invalid("initial state has the wrong dimension"));
    }
    let steps = step_count(horizon, dt)?;
    let h = if steps == 0 { dt } else { horizon / steps as f64 };
    let field = Field { dae, newton: NewtonOptions::default() };
    let y0 = dae.solve_algebraic(x0, y_guess)?;
    let mut tr = Trajectory {
        times: vec![0.0],
        x: vec![x0.clone()],
        y: vec![y0.clone()],
        residuals: vec![field.residual(x0, &y0)?],
        failure: None,
    };
    if !keep_going(0.0, x0) {
        return Ok(tr);
    }
    let (mut x, mut y) = (x0.clone(), y0);
    for i in 1..=steps {
        let t = i as f64 * h;
        match field.step(&x, &y, h) {
            Ok((xn, yn)) => {
                let res = field.residual(&xn, &yn)?;
                if !(res <= EQUILIBRIUM_TOL) {
                    tr.failure = Some(SimFailure {
                        time: t,
                        message: format!("algebraic residual {res:.3e} exceeds tolerance"),
                        singular: false,
                    });
                    break;
                }
                x = xn;
                y = yn;
                tr.times.push(t);
                tr.x.push(x.clone());
                tr.y.push(y.clone());
                tr.residuals.push(res);
                if !keep_going(t, &x) {
                    break;
                }
            }
            Err(e) => {
                tr.failure = Some(SimFailure {
                    time: t,
                    singular: matches!(e, Error::SingularManifold { .. }),
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    Ok(tr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub applicable: bool,
    pub times: Vec<f64>,
    /// `‖θ(x₁(t) − x₂(t))‖₂`.
    pub distances: Vec<f64>,
    pub in_region: Vec<bool>,
    /// Least-squares decay rate of `log d` over in-region samples.
    pub fitted_rate: Option<f64>,
    pub checks: usize,
    pub violations: usize,
}

/// Compare the distance decay of two trajectories with the rate `β`
/// over intervals where both stay inside the box around `z★`.
pub fn pairwise_contraction(
    tr1: &Trajectory,
    tr2: &Trajectory,
    theta: &DMatrix<f64>,
    beta: f64,
    region: &BoxRegion,
    z_star: &DVector<f64>,
) -> Result<ContractionReport> {
    if tr1.times.len() != tr2.times.len()
        || tr1.times.iter().zip(&tr2.times).any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(invalid("trajectories do not share a time grid"));
    }
    if region.dim() != z_star.len() {
        return Err(invalid("box and equilibrium dimensions differ"));
    }
    let len = tr1.len();
    let distances: Vec<f64> = (0..len).map(|i| (theta * (&tr1.x[i] - &tr2.x[i])).norm()).collect();
    let in_region: Vec<bool> =
        (0..len).map(|i| region.contains(&(tr1.z(i) - z_star)) && region.contains(&(tr2.z(i) - z_star))).collect();
    let mut report = ContractionReport {
        applicable: in_region.iter().any(|&b| b),
        times: tr1.times.clone(),
        distances,
        in_region,
        fitted_rate: None,
        checks: 0,
        violations: 0,
    };
    if !report.applicable {
        return Ok(report);
    }
    let d = &report.distances;
    let t = &report.times;
    let d0 = d.iter().zip(&report.in_region).find(|(_, &r)| r).map_or(0.0, |(v, _)| *v);
    // Distances at this level are dominated by rounding in θ(x₁ − x₂).
    let x_scale = tr1.x.iter().chain(&tr2.x).map(|x| x.amax()).fold(1.0, f64::max);
    let floor = f64::max(1e-9 * d0, 64.0 * f64::EPSILON * theta.norm() * x_scale);
    let stride = (len / 200).max(1);
    let check = |i: usize, j: usize, report_checks: &mut (usize, usize)| {
        if d[j] <= floor {
            return;
        }
        report_checks.0 += 1;
        if d[j] > d[i] * (-beta * (t[j] - t[i])).exp() * 1.05 {
            report_checks.1 += 1;
        }
    };
    let mut counts = (0, 0);
    let mut start = 0;
    while start < len {
        if !report.in_region[start] {
            start += 1;
            continue;
        }
        let mut end = start;
        while end + 1 < len && report.in_region[end + 1] {
            end += 1;
        }
        for j in start + 1..=end {
            check(start, j, &mut counts);
        }
        let mut i = start;
        while i + stride <= end {
            check(i, i + stride, &mut counts);
            i += stride;
        }
        start = end + 1;
    }
    report.checks = counts.0;
    report.violations = counts.1;

    let pts: Vec<(f64, f64)> =
        (0..len).filter(|&i| report.in_region[i] && d[i] > floor).map(|i| (t[i], d[i].ln())).collect();
    if pts.len() >= 2 && d0 > 0.0 {
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
        if sxx > 0.0 {
            report.fitted_rate = Some(-sxy / sxx);
        }
    }
    Ok(report)
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

/// Unit directions from a shifted Halton sequence pushed through Box–Muller.
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let pairs = dim.div_ceil(2);
    assert!(2 * pairs <= PRIMES.len(), "dimension too large for the Halton table");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..2 * pairs).map(|_| rng.gen::<f64>()).collect();
    let mut out = Vec::with_capacity(count);
    let mut i = 1u64;
    while out.len() < count {
        let u: Vec<f64> = (0..2 * pairs)
            .map(|d| {
                let v = (radical_inverse(i, PRIMES[d]) + shift[d]).fract();
                v.clamp(1e-12, 1.0 - 1e-12)
            })
            .collect();
        i += 1;
        let mut g = Vec::with_capacity(2 * pairs);
        for p in 0..pairs {
            let rad = (-2.0 * u[2 * p].ln()).sqrt();
            let ang = std::f64::consts::TAU * u[2 * p + 1];
            g.push(rad * ang.cos());
            g.push(rad * ang.sin());
        }
        let v = DVector::from_iterator(dim, g.into_iter().take(dim));
        let norm = v.norm();
        if norm > 1e-12 {
            out.push(v / norm);
        }
    }
    out
}

/// Starts `x★ + θ⁻¹(fraction · r · u)` for seeded unit directions `u`.
pub fn ball_starts(ball: &InvariantBall, count: usize, fraction: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    let r = ball.radius.ok_or_else(|| invalid("ball is unbounded"))?;
    let theta_inv = ball.theta_inv();
    let xs = DVector::from_column_slice(&ball.x_star);
    Ok(sphere_directions(xs.len(), count, seed).into_iter().map(|u| &xs + &theta_inv * (u * (fraction * r))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub start: Vec<f64>,
    /// `max_t ‖θ(x(t) − x★)‖ / r`.
    pub max_ratio: f64,
    pub final_ratio: f64,
    pub first_exit: Option<f64>,
    pub failure: Option<SimFailure>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub radius: f64,
    pub horizon: f64,
    pub seed: u64,
    pub samples: Vec<SampleOutcome>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvarianceOptions {
    pub samples: usize,
    /// Defaults to `10/β` when `None`.
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    /// Fraction of the radius at which starts are placed.
    pub fraction: f64,
}

/// Simulate seeded starts on the ball and check that each stays inside
/// and ends within 1% of the radius from the center.
pub fn ball_invariance(dae: &QuadraticDae, ball: &InvariantBall, opts: &InvarianceOptions) -> Result<InvarianceReport> {
    let r = match ball.radius {
        Some(r) if r > 0.0 => r,
        _ => return Err(invalid("ball radius must be positive and finite")),
    };
    if !(opts.fraction > 0.0 && opts.fraction <= 1.0) {
        return Err(invalid("start fraction must lie in (0, 1]"));
    }
    dae.require_equilibrium()?;
    let mut samples = Vec::with_capacity(opts.samples);
    for x0 in ball_starts(ball, opts.samples, opts.fraction, opts.seed)? {
        let tr = integrate(dae, &x0, opts.horizon, opts.dt)?;
        let ratios: Vec<f64> = tr.x.iter().map(|x| ball.metric_distance(x) / r).collect();
        let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
        let final_ratio = *ratios.last().expect("nonempty trajectory");
        let first_exit = ratios.iter().position(|&q| q > 1.0 + 1e-6).map(|i| tr.times[i]);
        let passed = tr.failure.is_none() && first_exit.is_none() && final_ratio <= 0.01;
        samples.push(SampleOutcome {
            start: x0.iter().copied().collect(),
            max_ratio,
            final_ratio,
            first_exit,
            failure: tr.failure,
            passed,
        });
    }
    let passed = samples.iter().all(|s| s.passed);
    Ok(InvarianceReport { radius: r, horizon: opts.horizon, seed: opts.seed, samples, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScctReport {
    /// First exit time, `None` if the trajectory stays inside up to the horizon.
    pub time: Option<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub failure: Option<SimFailure>,
}

/// First time the fault-on trajectory from `x0` leaves the ball, refined
/// by bisection on a single RK4 sub-step to [`SCCT_RESOLUTION`].
pub fn scct(
    fault: &QuadraticDae,
    ball: &InvariantBall,
    x0: &DVector<f64>,
    y_guess: &DVector<f64>,
    horizon: f64,
    dt: f64,
) -> Result<ScctReport> {
    let r = ball.radius.ok_or_else(|| invalid("ball is unbounded"))?;
    if x0.len() != ball.x_star.len() || x0.len() != fault.n() {
        return Err(invalid("start has the wrong dimension"));
    }
    if ball.metric_distance(x0) > r {
        return Err(invalid("start lies outside the ball"));
    }
    let tr = integrate_observed(fault, x0, y_guess, horizon, dt, |_, x| ball.metric_distance(x) <= r)?;
    let last = tr.len() - 1;
    if ball.metric_distance(&tr.x[last]) <= r {
        return Ok(ScctReport { time: None, horizon, dt, failure: tr.failure });
    }
    // Exit lies in (t_{last−1}, t_last].
    let (t0, x, y) = (tr.times[last - 1], &tr.x[last - 1], &tr.y[last - 1]);
    let field = Field { dae: fault, newton: NewtonOptions::default() };
    let (mut lo, mut hi) = (0.0, tr.times[last] - t0);
    while hi - lo > SCCT_RESOLUTION / 4.0 {
        let mid = 0.5 * (lo + hi);
        let (xm, _) = field.step(x, y, mid)?;
        if ball.metric_distance(&xm) > r {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(ScctReport { time: Some(t0 + hi), horizon, dt, failure: None })
}
