//! Seeded random-system suites exercising the forward bound, the converse
//! constructions, the key relation and Lemma 1.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dae::JacobianBlocks;
use crate::error::Result;
use crate::extension::{
    converse_extension_1, converse_extension_2, converse_extension_inf, coupling, extended_jacobian,
    forward_bound_check, key_relation_residual, lemma1_gamma, reduced_jacobian, ExtensionMatrices, Lemma1Outcome,
    Metric,
};
use crate::linops::{measure_unchecked, sigma_min, symmetrize, NormOrder};

pub const SLACK_TOL: f64 = 1e-9;
pub const KEY_RELATION_TOL: f64 = 1e-12;
pub const BLOCK_TOL: f64 = 1e-10;
pub const LEMMA1_TOL: f64 = 1e-12;
pub const EPSILONS_2: [f64; 3] = [0.1, 1.0, 10.0];
pub const EPSILONS_POLY: [f64; 2] = [0.1, 0.5];
pub const LEMMA1_EXPONENTS: [f64; 4] = [1.0, 2.0, 3.0, f64::INFINITY];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub seed: u64,
    pub systems: usize,
    pub lemma_tuples: usize,
    pub max_n: usize,
    pub max_m: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { seed: 0, systems: 100, lemma_tuples: 1000, max_n: 6, max_m: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    /// Smallest slack (or largest residual for identity checks).
    pub worst: f64,
    pub threshold: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub config: EnsembleConfig,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

/// Random generator for blocks whose reduced Jacobian is contracting in a
/// chosen norm and metric.
pub struct SystemSampler {
    rng: ChaCha8Rng,
    max_n: usize,
    max_m: usize,
}

/// A sampled system: blocks, a differential metric and the norm used.
#[derive(Debug, Clone)]
pub struct SampledSystem {
    pub blocks: JacobianBlocks,
    pub theta: DMatrix<f64>,
}

impl SystemSampler {
    pub fn new(seed: u64, max_n: usize, max_m: usize) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), max_n: max_n.max(1), max_m: max_m.max(1) }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn uniform(&mut self, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| self.rng.gen_range(-scale..scale))
    }

    pub fn vector(&mut self, len: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(len, |_, _| self.rng.gen_range(-scale..scale))
    }

    /// Upper triangular with diagonal in `[0.5, 2]`.
    pub fn metric(&mut self, n: usize) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(n, n);
        for i in 0..n {
            t[(i, i)] = self.rng.gen_range(0.5..2.0);
            for j in i + 1..n {
                t[(i, j)] = self.rng.gen_range(-0.5..0.5);
            }
        }
        t
    }

    fn nonsingular(&mut self, m: usize) -> DMatrix<f64> {
        loop {
            let d = self.uniform(m, m, 2.0);
            if sigma_min(&d) > 0.2 {
                return d;
            }
        }
    }

    /// Blocks with `μ_p(θ(A − BD⁻¹C)θ⁻¹) < 0` for a random metric θ.
    pub fn contracting(&mut self, p: NormOrder) -> SampledSystem {
        let n = self.rng.gen_range(1..=self.max_n);
        let m = self.rng.gen_range(1..=self.max_m);
        self.contracting_sized(n, m, p)
    }

    pub fn contracting_sized(&mut self, n: usize, m: usize, p: NormOrder) -> SampledSystem {
        let theta = self.metric(n);
        let theta_inv = theta.clone().try_inverse().expect("triangular with positive diagonal");
        let b = self.uniform(n, m, 1.5);
        let c = self.uniform(m, n, 1.5);
        let d = self.nonsingular(m);
        let base = self.uniform(n, n, 1.5);
        let shift = measure_unchecked(&base, p) + self.rng.gen_range(0.1..2.0);
        let fr = base - DMatrix::identity(n, n) * shift;
        let a_r = &theta_inv * fr * &theta;
        let dinv = d.clone().try_inverse().expect("well conditioned");
        let a = a_r + &b * dinv * &c;
        SampledSystem { blocks: JacobianBlocks { a, b, c, d }, theta }
    }
}

fn suite(name: &str, threshold: f64, values: &[f64], lower_is_worse: bool) -> SuiteResult {
    let worst = if lower_is_worse {
        values.iter().cloned().fold(f64::INFINITY, f64::min)
    } else {
        values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    let passed = !values.is_empty()
        && values.iter().all(|v| v.is_finite())
        && if lower_is_worse { worst >= threshold } else { worst <= threshold };
    SuiteResult { name: name.into(), cases: values.len(), worst, threshold, passed, notes: Vec::new() }
}

/// Key-relation residual over random systems, metrics and extensions.
pub fn key_relation_suite(cfg: &EnsembleConfig) -> Result<SuiteResult> {
    let mut s = SystemSampler::new(cfg.seed ^ 0x4b45_5900, cfg.max_n, cfg.max_m);
    let mut values = Vec::with_capacity(cfg.systems);
    for _ in 0..cfg.systems {
        let sys = s.contracting(NormOrder::Two);
        let (n, m) = (sys.blocks.n(), sys.blocks.m());
        let rho = s.metric(m);
        let ext = ExtensionMatrices { q: s.uniform(m, m, 2.0), r: s.uniform(m, n, 2.0), eta: 0.0, epsilon: 0.0 };
        let metric = Metric::new(sys.theta, rho)?.with_theta_dot(s.uniform(n, n, 0.5))?;
        let dx = s.vector(n, 1.0);
        let dy = s.vector(m, 1.0);
        values.push(key_relation_residual(&sys.blocks, &metric, &ext, &dx, &dy)?);
    }
    Ok(suite("key_relation", KEY_RELATION_TOL, &values, false))
}

/// Forward bound `μ₂(F_r) <= μ₂(F)·ν₂(H)` on random contracting extensions:
/// the explicit 2-norm extension with random perturbations of `Q` and `R`
/// shrunk until `μ₂(F) < 0`.
pub fn forward_bound_suite(cfg: &EnsembleConfig) -> Result<SuiteResult> {
    let mut s = SystemSampler::new(cfg.seed ^ 0x5448_3100, cfg.max_n, cfg.max_m);
    let mut values = Vec::with_capacity(cfg.systems);
    while values.len() < cfg.systems {
        let sys = s.contracting(NormOrder::Two);
        let (n, m) = (sys.blocks.n(), sys.blocks.m());
        let eps = s.rng().gen_range(0.05..5.0);
        let (base, rho) = converse_extension_2(&sys.blocks, &sys.theta, eps)?;
        let metric = Metric::new(sys.theta.clone(), rho)?;
        let (dq, dr) = (s.uniform(m, m, 1.0), s.uniform(m, n, 1.0));
        let mut scale = 1.0;
        let mut found = None;
        for _ in 0..40 {
            let ext =
                ExtensionMatrices { q: &base.q + &dq * scale, r: &base.r + &dr * scale, eta: base.eta, epsilon: eps };
            let f = extended_jacobian(&sys.blocks, &metric, &ext)?;
            if measure_unchecked(&f, NormOrder::Two) < 0.0 {
                found = Some(f);
                break;
            }
            scale *= 0.5;
        }
        let Some(f) = found else { continue };
        let fr = reduced_jacobian(&sys.blocks, &metric)?;
        let (_, h) = coupling(&sys.blocks, &metric)?;
        values.push(forward_bound_check(&fr, &f, &h, NormOrder::Two)?);
    }
    Ok(suite("theorem1_forward_bound", -SLACK_TOL, &values, true))
}

/// Explicit 2-norm extensions for each ε: rate slack and block structure.
pub fn theorem2_suite(cfg: &EnsembleConfig) -> Result<Vec<SuiteResult>> {
    let mut s = SystemSampler::new(cfg.seed ^ 0x5448_3200, cfg.max_n, cfg.max_m);
    let systems: Vec<SampledSystem> = (0..cfg.systems).map(|_| s.contracting(NormOrder::Two)).collect();
    let mut out = Vec::new();
    let mut mean_ratios = Vec::new();
    for eps in EPSILONS_2 {
        let mut slacks = Vec::new();
        let mut block_err = Vec::new();
        let mut ratio_sum = 0.0;
        for sys in &systems {
            let (ext, rho) = converse_extension_2(&sys.blocks, &sys.theta, eps)?;
            let metric = Metric::new(sys.theta.clone(), rho)?;
            let f = extended_jacobian(&sys.blocks, &metric, &ext)?;
            let fr = reduced_jacobian(&sys.blocks, &metric)?;
            let (mu_f, mu_fr) = (measure_unchecked(&f, NormOrder::Two), measure_unchecked(&fr, NormOrder::Two));
            slacks.push(mu_fr / (1.0 + eps) - mu_f);
            ratio_sum += mu_f / mu_fr;
            let (sm, _) = coupling(&sys.blocks, &metric)?;
            let (n, m) = (fr.nrows(), sm.nrows());
            let mut expected = DMatrix::zeros(n + m, n + m);
            expected.view_mut((0, 0), (n, n)).copy_from(&(symmetrize(&fr) + sm.transpose() * &sm * ext.eta));
            expected.view_mut((n, n), (m, m)).copy_from(&(DMatrix::identity(m, m) * -ext.eta));
            block_err.push((symmetrize(&f) - expected).amax());
        }
        let ratio = ratio_sum / systems.len().max(1) as f64;
        mean_ratios.push(ratio);
        let mut rate = suite(&format!("theorem2_rate_eps_{eps}"), -SLACK_TOL, &slacks, true);
        rate.notes.push(format!("mean μ₂(F)/μ₂(F_r) = {ratio:.6}"));
        out.push(rate);
        out.push(suite(&format!("theorem2_block_diagonal_eps_{eps}"), BLOCK_TOL, &block_err, false));
    }
    let monotone = mean_ratios.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    out.push(SuiteResult {
        name: "theorem2_epsilon_sweep_monotone".into(),
        cases: mean_ratios.len(),
        worst: mean_ratios.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min),
        threshold: -1e-12,
        passed: monotone,
        notes: vec![format!("mean rate ratios {mean_ratios:?}")],
    });
    Ok(out)
}

/// Polyhedral-norm extensions: `μ_p(F) <= μ_p(F_r)(1 − ε)`.
pub fn theorem3_suite(cfg: &EnsembleConfig) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for (tag, p) in [(0x5448_3300u64, NormOrder::Infinity), (0x5448_3400, NormOrder::One)] {
        let mut s = SystemSampler::new(cfg.seed ^ tag, cfg.max_n, cfg.max_m);
        let systems: Vec<SampledSystem> = (0..cfg.systems).map(|_| s.contracting(p)).collect();
        for eps in EPSILONS_POLY {
            let mut slacks = Vec::new();
            for sys in &systems {
                let (ext, rho) = match p {
                    NormOrder::Infinity => converse_extension_inf(&sys.blocks, &sys.theta, eps)?,
                    _ => converse_extension_1(&sys.blocks, &sys.theta, eps)?,
                };
                let metric = Metric::new(sys.theta.clone(), rho)?;
                let f = extended_jacobian(&sys.blocks, &metric, &ext)?;
                let fr = reduced_jacobian(&sys.blocks, &metric)?;
                slacks.push(measure_unchecked(&fr, p) * (1.0 - eps) - measure_unchecked(&f, p));
            }
            out.push(suite(&format!("theorem3_p{p}_eps_{eps}"), -SLACK_TOL, &slacks, true));
        }
    }
    Ok(out)
}

fn exponent_tag(p: f64) -> String {
    if p.is_infinite() {
        "inf".into()
    } else {
        format!("{p}")
    }
}

fn sorted_magnitudes(a: &DVector<f64>, b: &DVector<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = a.iter().chain(b.iter()).map(|x| x.abs()).collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

/// Whether the Lemma 1 hypothesis holds in every p-norm for all large
/// enough finite `p`: the descending magnitudes of the stepped stack are
/// lexicographically no larger than those of the original stack.
pub fn lemma1_limit_hypothesis(dv: &DVector<f64>, du: &DVector<f64>, fr: &DMatrix<f64>, h: f64) -> bool {
    let stepped = dv + fr * dv * h;
    let (a, b) = (sorted_magnitudes(&stepped, du), sorted_magnitudes(dv, du));
    for (x, y) in a.iter().zip(&b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    true
}

/// Lemma 1 over random admissible tuples, one suite per exponent. For
/// `p = ∞` a second suite restricts to tuples satisfying
/// [`lemma1_limit_hypothesis`].
pub fn lemma1_suite(cfg: &EnsembleConfig) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for (idx, p) in LEMMA1_EXPONENTS.into_iter().enumerate() {
        let mut s = SystemSampler::new(cfg.seed ^ (0x4c45_4d00 + idx as u64), cfg.max_n, cfg.max_m);
        let mut values = Vec::with_capacity(cfg.lemma_tuples);
        let mut limit_values = Vec::new();
        let mut attempts = 0usize;
        while values.len() < cfg.lemma_tuples {
            attempts += 1;
            let n = s.rng().gen_range(1..=cfg.max_n.max(1));
            let m = s.rng().gen_range(1..=cfg.max_m.max(1));
            let fr = s.uniform(n, n, 1.0) - DMatrix::identity(n, n) * s.rng().gen_range(0.0..3.0);
            let dv = s.vector(n, 1.0);
            let du = s.vector(m, 1.0) * s.rng().gen_range(0.0..2.0);
            let h = s.rng().gen_range(1e-3..0.5);
            if let Lemma1Outcome::Applicable { gamma } = lemma1_gamma(&dv, &du, &fr, h, p)? {
                values.push(gamma);
                if p.is_infinite() && lemma1_limit_hypothesis(&dv, &du, &fr, h) {
                    limit_values.push(gamma);
                }
            }
        }
        let tag = exponent_tag(p);
        let mut r = suite(&format!("lemma1_gamma_p{tag}"), -LEMMA1_TOL, &values, true);
        r.notes.push(format!("{attempts} tuples drawn for {} admissible", values.len()));
        let negative = values.iter().filter(|&&g| g < -LEMMA1_TOL).count();
        if negative > 0 {
            r.notes.push(format!("{negative} admissible tuples with negative gamma"));
        }
        out.push(r);
        if p.is_infinite() {
            let mut r = suite("lemma1_gamma_pinf_limit_hypothesis", -LEMMA1_TOL, &limit_values, true);
            r.notes.push(format!("{} of {} tuples satisfy the limit hypothesis", limit_values.len(), values.len()));
            out.push(r);
        }
    }
    Ok(out)
}

/// Every suite.
pub fn run_all(cfg: &EnsembleConfig) -> Result<EnsembleReport> {
    let mut suites = vec![key_relation_suite(cfg)?, forward_bound_suite(cfg)?];
    suites.extend(theorem2_suite(cfg)?);
    suites.extend(theorem3_suite(cfg)?);
    suites.extend(lemma1_suite(cfg)?);
    let passed = suites.iter().all(|s| s.passed);
    Ok(EnsembleReport { config: *cfg, suites, passed })
}
