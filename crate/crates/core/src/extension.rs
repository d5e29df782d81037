//! Reduced and extended (virtual ODE) generalized Jacobians, the forward
//! rate bound, and explicit converse extensions for the 2, ∞ and 1 norms.
//!
//! With metrics `δv = θ δx`, `δu = ρ δy` the extended Jacobian is
//!
//! ```text
//!     ⎡ F_r + θRᵀCθ⁻¹   θRᵀDρ⁻¹ ⎤
//! F = ⎢                          ⎥ ,   F_r = θ̇θ⁻¹ + θ(A − BD⁻¹C)θ⁻¹
//!     ⎣ QᵀCθ⁻¹          QᵀDρ⁻¹  ⎦
//! ```
//!
//! and for every displacement `F (θδx; ρδy) = (F_r θδx; 0) + (θRᵀ; Qᵀ)(Cδx + Dδy)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dae::{JacobianBlocks, REGULARITY_THRESHOLD};
use crate::error::{invalid, Error, Result};
use crate::linops::{induced_norm, measure_unchecked, min_gain, sigma_max, vector_norm, NormOrder};

/// Differential metric θ, algebraic metric ρ and optional θ̇.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub theta: DMatrix<f64>,
    pub rho: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_dot: Option<DMatrix<f64>>,
}

impl Metric {
    pub fn new(theta: DMatrix<f64>, rho: DMatrix<f64>) -> Result<Self> {
        if !theta.is_square() || !rho.is_square() {
            return Err(invalid("metrics must be square"));
        }
        for (name, mat) in [("theta", &theta), ("rho", &rho)] {
            if mat.nrows() > 0 && mat.clone().try_inverse().is_none() {
                return Err(invalid(format!("{name} is not invertible")));
            }
        }
        Ok(Self { theta, rho, theta_dot: None })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self { theta: DMatrix::identity(n, n), rho: DMatrix::identity(m, m), theta_dot: None }
    }

    pub fn with_theta_dot(mut self, theta_dot: DMatrix<f64>) -> Result<Self> {
        if theta_dot.shape() != self.theta.shape() {
            return Err(invalid("theta_dot must match theta"));
        }
        self.theta_dot = Some(theta_dot);
        Ok(self)
    }

    pub fn theta_inv(&self) -> DMatrix<f64> {
        invert(&self.theta)
    }

    pub fn rho_inv(&self) -> DMatrix<f64> {
        invert(&self.rho)
    }
}

fn invert(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    m.clone().try_inverse().expect("metric validated as invertible")
}

/// Auxiliary matrices of a virtual extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionMatrices {
    /// `m × m`
    pub q: DMatrix<f64>,
    /// `m × n`
    pub r: DMatrix<f64>,
    pub eta: f64,
    pub epsilon: f64,
}

/// `δw = (δv; δu)` with `δv = θδx`, `δu = ρδy`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualDisplacement {
    pub dv: DVector<f64>,
    pub du: DVector<f64>,
    pub dw: DVector<f64>,
}

impl VirtualDisplacement {
    pub fn new(dv: DVector<f64>, du: DVector<f64>) -> Self {
        let dw = DVector::from_iterator(dv.len() + du.len(), dv.iter().chain(du.iter()).copied());
        Self { dv, du, dw }
    }

    pub fn from_physical(metric: &Metric, dx: &DVector<f64>, dy: &DVector<f64>) -> Self {
        Self::new(&metric.theta * dx, &metric.rho * dy)
    }
}

fn check_dims(blocks: &JacobianBlocks, metric: &Metric) -> Result<()> {
    let (n, m) = (blocks.n(), blocks.m());
    if metric.theta.nrows() != n || metric.rho.nrows() != m {
        return Err(invalid(format!(
            "metric dimensions ({}, {}) do not match blocks ({n}, {m})",
            metric.theta.nrows(),
            metric.rho.nrows()
        )));
    }
    Ok(())
}

/// `F_r = θ̇θ⁻¹ + θ(A − BD⁻¹C)θ⁻¹`.
pub fn reduced_jacobian(blocks: &JacobianBlocks, metric: &Metric) -> Result<DMatrix<f64>> {
    check_dims(blocks, metric)?;
    let theta_inv = metric.theta_inv();
    let mut fr = &metric.theta * blocks.reduced()? * &theta_inv;
    if let Some(td) = &metric.theta_dot {
        fr += td * &theta_inv;
    }
    Ok(fr)
}

/// Displacement of the algebraic variables that keeps `C δx + D δy = 0`.
pub fn manifold_displacement(blocks: &JacobianBlocks, dx: &DVector<f64>) -> Result<DVector<f64>> {
    if dx.len() != blocks.n() {
        return Err(invalid("dx length does not match n"));
    }
    let dinv = blocks.d_inverse(REGULARITY_THRESHOLD)?;
    Ok(-(dinv * (&blocks.c * dx)))
}

/// `S = ρD⁻¹Cθ⁻¹` and `H = [I; S]`.
pub fn coupling(blocks: &JacobianBlocks, metric: &Metric) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims(blocks, metric)?;
    let (n, m) = (blocks.n(), blocks.m());
    let dinv = blocks.d_inverse(REGULARITY_THRESHOLD)?;
    let s = &metric.rho * dinv * &blocks.c * metric.theta_inv();
    let mut h = DMatrix::zeros(n + m, n);
    h.view_mut((0, 0), (n, n)).fill_with_identity();
    h.view_mut((n, 0), (m, n)).copy_from(&s);
    Ok((s, h))
}

/// Assemble the generalized unreduced Jacobian `F`.
pub fn extended_jacobian(blocks: &JacobianBlocks, metric: &Metric, ext: &ExtensionMatrices) -> Result<DMatrix<f64>> {
    check_dims(blocks, metric)?;
    let (n, m) = (blocks.n(), blocks.m());
    if ext.q.shape() != (m, m) || ext.r.shape() != (m, n) {
        return Err(invalid(format!(
            "extension shapes Q {:?}, R {:?} do not match n = {n}, m = {m}",
            ext.q.shape(),
            ext.r.shape()
        )));
    }
    let fr = reduced_jacobian(blocks, metric)?;
    let theta_inv = metric.theta_inv();
    let rho_inv = metric.rho_inv();
    let theta_rt = &metric.theta * ext.r.transpose();
    let qt = ext.q.transpose();
    let mut f = DMatrix::zeros(n + m, n + m);
    f.view_mut((0, 0), (n, n)).copy_from(&(fr + &theta_rt * &blocks.c * &theta_inv));
    f.view_mut((0, n), (n, m)).copy_from(&(&theta_rt * &blocks.d * &rho_inv));
    f.view_mut((n, 0), (m, n)).copy_from(&(&qt * &blocks.c * &theta_inv));
    f.view_mut((n, n), (m, m)).copy_from(&(&qt * &blocks.d * &rho_inv));
    Ok(f)
}

/// `‖F(θδx; ρδy) − (F_r θδx; 0) − (θRᵀ; Qᵀ)(Cδx + Dδy)‖_∞` relative to the
/// magnitude of the terms involved.
pub fn key_relation_residual(
    blocks: &JacobianBlocks,
    metric: &Metric,
    ext: &ExtensionMatrices,
    dx: &DVector<f64>,
    dy: &DVector<f64>,
) -> Result<f64> {
    let (n, m) = (blocks.n(), blocks.m());
    let f = extended_jacobian(blocks, metric, ext)?;
    let fr = reduced_jacobian(blocks, metric)?;
    let w = VirtualDisplacement::from_physical(metric, dx, dy);
    let lhs = &f * &w.dw;
    let constraint = &blocks.c * dx + &blocks.d * dy;
    let top = &fr * &w.dv + &metric.theta * ext.r.transpose() * &constraint;
    let bottom = ext.q.transpose() * &constraint;
    let rhs = DVector::from_iterator(n + m, top.iter().chain(bottom.iter()).copied());
    let scale = 1.0f64.max(lhs.amax()).max(rhs.amax());
    Ok((lhs - rhs).amax() / scale)
}

/// Slack `μ_p(F)·ν_p(H) − μ_p(F_r)` of the forward bound (nonnegative when
/// the bound holds). Requires `μ_p(F) < 0`.
pub fn forward_bound_check(fr: &DMatrix<f64>, f: &DMatrix<f64>, h: &DMatrix<f64>, p: NormOrder) -> Result<f64> {
    let n = fr.nrows();
    if !fr.is_square() || !f.is_square() || h.ncols() != n || h.nrows() != f.nrows() {
        return Err(invalid("inconsistent F_r, F, H shapes"));
    }
    let mu_f = measure_unchecked(f, p);
    if mu_f >= 0.0 {
        return Err(Error::PreconditionViolation(format!("μ_{p}(F) = {mu_f:.6e} is not negative")));
    }
    let nu = min_gain(h, p)?.value;
    Ok(mu_f * nu - measure_unchecked(fr, p))
}

fn contracting_rate(blocks: &JacobianBlocks, theta: &DMatrix<f64>, p: NormOrder) -> Result<(DMatrix<f64>, f64)> {
    let metric = Metric::new(theta.clone(), DMatrix::identity(blocks.m(), blocks.m()))?;
    let fr = reduced_jacobian(blocks, &metric)?;
    let mu = measure_unchecked(&fr, p);
    if !(mu < 0.0) {
        return Err(Error::NotContracting { measure: mu });
    }
    Ok((fr, mu))
}

/// Explicit 2-norm extension with `μ₂(F) <= μ₂(F_r)/(1 + ε)` and
/// `sym(F) = blkdiag(sym(F_r) + ηSᵀS, −ηI)`.
///
/// `ρ = sI` with `s = min(1, √ε / σ_max(D⁻¹Cθ⁻¹))`.
pub fn converse_extension_2(
    blocks: &JacobianBlocks,
    theta: &DMatrix<f64>,
    epsilon: f64,
) -> Result<(ExtensionMatrices, DMatrix<f64>)> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let (n, m) = (blocks.n(), blocks.m());
    let (_, mu) = contracting_rate(blocks, theta, NormOrder::Two)?;
    let dinv = blocks.d_inverse(REGULARITY_THRESHOLD)?;
    let theta_inv = invert(theta);
    let base = &dinv * &blocks.c * &theta_inv;
    let smax = sigma_max(&base);
    let s = if smax > 0.0 { f64::min(1.0, epsilon.sqrt() / smax) } else { 1.0 };
    let rho = DMatrix::identity(m, m) * s;
    let s_mat = &base * s;
    let sig = sigma_max(&s_mat);
    let eta = -mu / (1.0 + sig * sig);
    let p_inv = &theta_inv * theta_inv.transpose();
    let r = (&dinv.transpose() * rho.transpose() * &rho * &dinv * &blocks.c * p_inv) * eta;
    let q = -(dinv.transpose() * rho.transpose()) * eta;
    debug_assert_eq!(r.shape(), (m, n));
    Ok((ExtensionMatrices { q, r, eta, epsilon }, rho))
}

/// Shared recipe for the 1- and ∞-norm converse constructions: `R = 0`,
/// `Q = μ D⁻ᵀρᵀ`, which yields `F = [F_r, 0; μS, μI]`.
fn converse_extension_polyhedral(
    blocks: &JacobianBlocks,
    theta: &DMatrix<f64>,
    epsilon: f64,
    p: NormOrder,
) -> Result<(ExtensionMatrices, DMatrix<f64>)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let (n, m) = (blocks.n(), blocks.m());
    let (_, mu) = contracting_rate(blocks, theta, p)?;
    let dinv = blocks.d_inverse(REGULARITY_THRESHOLD)?;
    let base = &dinv * &blocks.c * invert(theta);
    // ‖S‖_∞ bounds the extra row sums of the lower block for p = ∞;
    // ‖S‖₁ = ‖Sᵀ‖_∞ bounds the extra column sums for p = 1.
    let coupling_norm = induced_norm(&base, p);
    let s = if coupling_norm > 0.0 { f64::min(1.0, epsilon / coupling_norm) } else { 1.0 };
    let rho = DMatrix::identity(m, m) * s;
    let q = dinv.transpose() * rho.transpose() * mu;
    Ok((ExtensionMatrices { q, r: DMatrix::zeros(m, n), eta: -mu, epsilon }, rho))
}

/// ∞-norm extension with `μ_∞(F) <= μ_∞(F_r)(1 − ε)`.
pub fn converse_extension_inf(
    blocks: &JacobianBlocks,
    theta: &DMatrix<f64>,
    epsilon: f64,
) -> Result<(ExtensionMatrices, DMatrix<f64>)> {
    converse_extension_polyhedral(blocks, theta, epsilon, NormOrder::Infinity)
}

/// 1-norm extension with `μ₁(F) <= μ₁(F_r)(1 − ε)`.
pub fn converse_extension_1(
    blocks: &JacobianBlocks,
    theta: &DMatrix<f64>,
    epsilon: f64,
) -> Result<(ExtensionMatrices, DMatrix<f64>)> {
    converse_extension_polyhedral(blocks, theta, epsilon, NormOrder::One)
}

/// Extension reproducing the singularly perturbed Jacobian
/// `[θAθ⁻¹, θBρ⁻¹; ρCθ⁻¹/ε, ρDρ⁻¹/ε]`: `Q = ρᵀ/ε`, `R = D⁻ᵀBᵀ`.
pub fn singular_perturbation_extension(
    blocks: &JacobianBlocks,
    theta: &DMatrix<f64>,
    rho: &DMatrix<f64>,
    epsilon: f64,
) -> Result<ExtensionMatrices> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let metric = Metric::new(theta.clone(), rho.clone())?;
    check_dims(blocks, &metric)?;
    let dinv = blocks.d_inverse(REGULARITY_THRESHOLD)?;
    Ok(ExtensionMatrices {
        q: rho.transpose() / epsilon,
        r: dinv.transpose() * blocks.b.transpose(),
        eta: 0.0,
        epsilon,
    })
}

/// The singularly perturbed generalized Jacobian assembled directly.
pub fn singular_perturbation_jacobian(
    blocks: &JacobianBlocks,
    theta: &DMatrix<f64>,
    rho: &DMatrix<f64>,
    epsilon: f64,
) -> DMatrix<f64> {
    let (n, m) = (blocks.n(), blocks.m());
    let (ti, ri) = (invert(theta), invert(rho));
    let mut f = DMatrix::zeros(n + m, n + m);
    f.view_mut((0, 0), (n, n)).copy_from(&(theta * &blocks.a * &ti));
    f.view_mut((0, n), (n, m)).copy_from(&(theta * &blocks.b * &ri));
    f.view_mut((n, 0), (m, n)).copy_from(&(rho * &blocks.c * &ti / epsilon));
    f.view_mut((n, n), (m, m)).copy_from(&(rho * &blocks.d * &ri / epsilon));
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Lemma1Outcome {
    Applicable {
        gamma: f64,
    },
    /// The hypothesis `‖(δv + hF_rδv; δu)‖ − ‖(δv; δu)‖ <= 0` fails.
    NotApplicable {
        hypothesis: f64,
    },
}

/// `γ = [‖(δv + hF_rδv; δu)‖_p − ‖(δv; δu)‖_p] − [‖δv + hF_rδv‖_p − ‖δv‖_p]`.
pub fn lemma1_gamma(dv: &DVector<f64>, du: &DVector<f64>, fr: &DMatrix<f64>, h: f64, p: f64) -> Result<Lemma1Outcome> {
    if !(h > 0.0) {
        return Err(invalid(format!("h must be positive, got {h}")));
    }
    if !(p >= 1.0) {
        return Err(invalid(format!("p must be at least 1, got {p}")));
    }
    if fr.shape() != (dv.len(), dv.len()) {
        return Err(invalid("F_r shape does not match dv"));
    }
    let stepped = dv + fr * dv * h;
    let cat = |a: &DVector<f64>| DVector::from_iterator(a.len() + du.len(), a.iter().chain(du.iter()).copied());
    let hypothesis = vector_norm(&cat(&stepped), p) - vector_norm(&cat(dv), p);
    if hypothesis > 0.0 {
        return Ok(Lemma1Outcome::NotApplicable { hypothesis });
    }
    let gamma = hypothesis - (vector_norm(&stepped, p) - vector_norm(dv, p));
    Ok(Lemma1Outcome::Applicable { gamma })
}
