//! Inner approximation of the contraction region around an equilibrium:
//! a bilinear Lyapunov certificate `Z★`, per-coefficient spectra, a box of
//! admissible state variations, and the largest metric ball inside it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dae::{CoefficientDecomposition, JacobianBlocks, REGULARITY_THRESHOLD};
use crate::error::{invalid, Error, Result};
use crate::extension::{converse_extension_2, Metric};
use crate::linops::{
    lambda_max_sym, measure_unchecked, sigma_max, solve_lyapunov, spectral_abscissa, sym_eig, EigenPair, NormOrder,
    SpdFactor,
};

pub const BETA_MARGIN: f64 = 1e-6;
pub const VERTEX_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    /// Half the spectral abscissa margin of `A_r`.
    Default,
    /// The caller's target.
    Target,
    /// Capped by the eigenvalue bound of the certificate at `z★`.
    Capped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    pub beta_target: Option<f64>,
    /// Slack of the underlying 2-norm extension.
    pub epsilon: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self { beta_target: None, epsilon: 0.1 }
    }
}

/// `Z★ = [P, 0; R̃, Q̃]` with `Z★ᵀJ★ + J★ᵀZ★ + βI = −UᵀU`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub n: usize,
    pub m: usize,
    pub z: DMatrix<f64>,
    pub beta: f64,
    pub beta_source: BetaSource,
    pub u: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// `λ_max((Z★ᵀJ★ + J★ᵀZ★)/2)`.
    pub lambda_max: f64,
    /// Spectral abscissa of `A − BD⁻¹C` at `z★`.
    pub reduced_abscissa: f64,
}

impl Certificate {
    pub fn theta_inv(&self) -> DMatrix<f64> {
        self.theta.clone().try_inverse().expect("certificate metric is invertible")
    }

    /// `Z★ᵀJ + JᵀZ★ + βI`.
    pub fn lmi(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        let x = self.z.transpose() * j;
        let dim = x.nrows();
        &x + x.transpose() + DMatrix::identity(dim, dim) * self.beta
    }
}

/// Construct a certificate from a Lyapunov metric of the reduced Jacobian
/// and the explicit 2-norm extension.
pub fn build_certificate(
    decomp: &CoefficientDecomposition,
    blocks: &JacobianBlocks,
    opts: &CertificateOptions,
) -> Result<Certificate> {
    let (n, m) = (blocks.n(), blocks.m());
    if decomp.j_star.shape() != (n + m, n + m) {
        return Err(invalid("decomposition and blocks have different dimensions"));
    }
    if let Some(b) = opts.beta_target {
        if !(b > 0.0 && b.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {b}")));
        }
    }
    let a_r = blocks.reduced()?;
    let abscissa = if n == 0 { f64::NEG_INFINITY } else { spectral_abscissa(&a_r) };
    if !(abscissa < 0.0) {
        return Err(Error::NotContracting { measure: abscissa });
    }
    let beta0 = if n == 0 { 1.0 } else { 0.5 * abscissa.abs() };
    let shifted = &a_r + DMatrix::identity(n, n) * beta0;
    let factor = if n == 0 {
        SpdFactor { p: DMatrix::zeros(0, 0), theta: DMatrix::zeros(0, 0) }
    } else {
        solve_lyapunov(&shifted)?
    };

    // Rescale the metric so that the coupling S = D⁻¹Cθ⁻¹ satisfies
    // σ_max(S)² <= ε with ρ = I.
    let dinv = blocks.d_inverse(REGULARITY_THRESHOLD)?;
    let smax = if n == 0 { 0.0 } else { sigma_max(&(&dinv * &blocks.c * factor.theta_inv())) };
    let scale = if smax > 0.0 { f64::min(1.0, opts.epsilon.sqrt() / smax) } else { 1.0 };
    let factor = factor.scaled(1.0 / (scale * scale));

    let (ext, rho) = converse_extension_2(blocks, &factor.theta, opts.epsilon)?;
    debug_assert!((rho - DMatrix::<f64>::identity(m, m)).amax() < 1e-9);
    let r_tilde = (&ext.r - dinv.transpose() * blocks.b.transpose()) * &factor.p;
    let mut z = DMatrix::zeros(n + m, n + m);
    z.view_mut((0, 0), (n, n)).copy_from(&factor.p);
    z.view_mut((n, 0), (m, n)).copy_from(&r_tilde);
    z.view_mut((n, n), (m, m)).copy_from(&ext.q);

    let x = z.transpose() * &decomp.j_star;
    let lambda_max = lambda_max_sym(&x);
    let cap = -lambda_max - BETA_MARGIN;
    let (requested, source) = match opts.beta_target {
        Some(b) => (b, BetaSource::Target),
        None => (beta0, BetaSource::Default),
    };
    let (beta, beta_source) = if cap < requested { (cap, BetaSource::Capped) } else { (requested, source) };
    if !(beta > 0.0) {
        return Err(Error::NoCertificate(format!("λ_max(sym(Z★ᵀJ★)) = {lambda_max:.6e} leaves no positive rate")));
    }
    let neg = -(&x + x.transpose() + DMatrix::identity(n + m, n + m) * beta);
    let chol =
        neg.cholesky().ok_or_else(|| Error::NoCertificate("−(Z★ᵀJ★ + J★ᵀZ★ + βI) is not positive definite".into()))?;
    let u = chol.l().transpose();
    Ok(Certificate {
        n,
        m,
        z,
        beta,
        beta_source,
        u,
        theta: factor.theta,
        p: factor.p,
        lambda_max,
        reduced_abscissa: abscissa,
    })
}

/// `−λ_max(JᵀZ★ + Z★ᵀJ + βI)`; nonnegative where `J` is certified.
pub fn verify_certificate(cert: &Certificate, j: &DMatrix<f64>) -> Result<f64> {
    if j.shape() != cert.z.shape() {
        return Err(invalid("Jacobian and certificate dimensions differ"));
    }
    Ok(-lambda_max_sym(&cert.lmi(j)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSpectrum {
    pub coord: usize,
    pub pairs: Vec<EigenPair>,
}

impl CoordinateSpectrum {
    pub fn max_abs(&self) -> f64 {
        self.pairs.iter().fold(0.0, |acc, p| acc.max(p.value.abs()))
    }

    pub fn reconstruct(&self, dim: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(dim, dim);
        for p in &self.pairs {
            g += &p.vector * p.vector.transpose() * p.value;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpectrum {
    pub dim: usize,
    pub coords: Vec<CoordinateSpectrum>,
    pub gram_sigma: f64,
}

impl CoefficientSpectrum {
    /// `σ_max(Σ_k dz_k Σ_h λ_kh e_kh e_khᵀ)`; the box is sound where this is at most 1.
    pub fn criterion(&self, dz: &DVector<f64>) -> f64 {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for c in &self.coords {
            if dz[c.coord] != 0.0 {
                g += c.reconstruct(self.dim) * dz[c.coord];
            }
        }
        sigma_max(&g)
    }
}

/// `G_k = U⁻ᵀ(Z★ᵀJ_k + J_kᵀZ★)U⁻¹` for every nonzero `J_k`.
pub fn coefficient_spectra(cert: &Certificate, decomp: &CoefficientDecomposition) -> Result<CoefficientSpectrum> {
    let dim = cert.z.nrows();
    let u_inv = cert
        .u
        .clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::DegenerateCertificate("U is singular".into()))?;
    let mut coords = Vec::new();
    let mut gram = DMatrix::zeros(dim, dim);
    for k in decomp.active_coordinates() {
        let x = cert.z.transpose() * &decomp.j_k[k];
        let g = u_inv.transpose() * (&x + x.transpose()) * &u_inv;
        let g = (&g + g.transpose()) * 0.5;
        let pairs = sym_eig(&g)?;
        let top = pairs.iter().fold(0.0f64, |acc, p| acc.max(p.value.abs()));
        let pairs: Vec<EigenPair> = pairs.into_iter().filter(|p| p.value.abs() > 1e-12 * top).collect();
        for p in &pairs {
            gram += &p.vector * p.vector.transpose();
        }
        coords.push(CoordinateSpectrum { coord: k, pairs });
    }
    let gram_sigma = if coords.iter().all(|c| c.pairs.is_empty()) { 0.0 } else { sigma_max(&gram) };
    Ok(CoefficientSpectrum { dim, coords, gram_sigma })
}

/// Symmetric bounds `|z_k − z★_k| <= bound_k`; `None` is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub bounds: Vec<Option<f64>>,
}

impl BoxRegion {
    pub fn unbounded(dim: usize) -> Self {
        Self { bounds: vec![None; dim] }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn finite_coordinates(&self) -> Vec<usize> {
        (0..self.bounds.len()).filter(|&k| self.bounds[k].is_some()).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { bounds: self.bounds.iter().map(|b| b.map(|v| v * factor)).collect() }
    }

    pub fn contains(&self, dz: &DVector<f64>) -> bool {
        self.bounds.iter().zip(dz.iter()).all(|(b, v)| b.is_none_or(|b| v.abs() <= b))
    }
}

/// `b_k = w_k / (max_h |λ_kh| · gram_sigma)` with weights normalized to a
/// maximum of one.
pub fn box_bounds(spectrum: &CoefficientSpectrum, dim: usize, weights: Option<&[f64]>) -> Result<BoxRegion> {
    let mut bounds = vec![None; dim];
    let w_max = match weights {
        Some(w) => {
            if w.len() != dim {
                return Err(invalid(format!("expected {dim} weights, got {}", w.len())));
            }
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(invalid("weights must be positive and finite"));
            }
            w.iter().cloned().fold(0.0, f64::max)
        }
        None => 1.0,
    };
    for c in &spectrum.coords {
        if c.coord >= dim {
            return Err(invalid("spectrum coordinate out of range"));
        }
        let lam = c.max_abs();
        if lam > 0.0 && spectrum.gram_sigma > 0.0 {
            let w = weights.map_or(1.0, |w| w[c.coord] / w_max);
            bounds[c.coord] = Some(w / (lam * spectrum.gram_sigma));
        }
    }
    Ok(BoxRegion { bounds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificationMethod {
    Vertices,
    Criterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCertification {
    pub certified: bool,
    pub method: CertificationMethod,
    pub norm: NormOrder,
    pub vertices_checked: usize,
    /// Largest violation measure found; `<= tolerance` when certified.
    pub worst: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_vertex: Option<Vec<f64>>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    pub tolerance: f64,
    pub allow_fallback: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { tolerance: 1e-9, allow_fallback: true }
    }
}

fn vertex_measure(cert: &Certificate, j: &DMatrix<f64>, p: NormOrder) -> f64 {
    match p {
        NormOrder::Two => lambda_max_sym(&cert.lmi(j)),
        _ => measure_unchecked(&(cert.z.transpose() * j), p) + cert.beta,
    }
}

/// Check the contraction condition at every vertex of the box. For `p = 2`
/// the condition is `λ_max(Z★ᵀJ + JᵀZ★ + βI) <= tol`, otherwise
/// `μ_p(Z★ᵀJ) <= −β + tol`.
pub fn certify_box(
    decomp: &CoefficientDecomposition,
    cert: &Certificate,
    region: &BoxRegion,
    spectrum: Option<&CoefficientSpectrum>,
    p: NormOrder,
    opts: &CertifyOptions,
) -> Result<BoxCertification> {
    let dim = cert.z.nrows();
    if region.dim() != dim || decomp.j_star.nrows() != dim {
        return Err(invalid("box, certificate and decomposition dimensions differ"));
    }
    // Coordinates whose J_k vanishes do not move J.
    let coords: Vec<usize> = region.finite_coordinates().into_iter().filter(|&k| decomp.nonzero[k]).collect();
    let unbounded_active = decomp.active_coordinates().iter().any(|&k| region.bounds[k].is_none());
    if coords.len() > VERTEX_CAP {
        if !opts.allow_fallback {
            return Err(Error::TooManyCoordinates { count: coords.len(), cap: VERTEX_CAP });
        }
        let spectrum = spectrum.ok_or_else(|| invalid("criterion fallback needs the coefficient spectrum"))?;
        // Σ|c_i| e_i e_iᵀ bounds the worst vertex in the Loewner order.
        let worst =
            spectrum.coords.iter().filter_map(|c| region.bounds[c.coord].map(|b| b * c.max_abs())).fold(0.0, f64::max)
                * spectrum.gram_sigma;
        return Ok(BoxCertification {
            certified: !unbounded_active && worst <= 1.0 + opts.tolerance && p == NormOrder::Two,
            method: CertificationMethod::Criterion,
            norm: p,
            vertices_checked: 0,
            worst: worst - 1.0,
            worst_vertex: None,
            tolerance: opts.tolerance,
        });
    }
    let tol = opts.tolerance;
    let mut worst = f64::NEG_INFINITY;
    let mut worst_vertex = None;
    let count = 1usize << coords.len();
    let mut dz = DVector::zeros(dim);
    for mask in 0..count {
        for (bit, &k) in coords.iter().enumerate() {
            let b = region.bounds[k].expect("finite coordinate");
            dz[k] = if mask >> bit & 1 == 1 { b } else { -b };
        }
        let value = vertex_measure(cert, &decomp.jacobian_at_offset(&dz), p);
        if value > worst {
            worst = value;
            worst_vertex = Some(dz.iter().copied().collect());
        }
    }
    Ok(BoxCertification {
        certified: !unbounded_active && worst <= tol,
        method: CertificationMethod::Vertices,
        norm: p,
        vertices_checked: count,
        worst,
        worst_vertex,
        tolerance: tol,
    })
}

/// One constraint `|a_iᵀ(x − x★)| <= b_i` of the invariant-set program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallConstraint {
    pub coord: usize,
    pub row: Vec<f64>,
    pub bound: f64,
    /// `b_i / ‖a_iᵀθ⁻¹‖₂`.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantBall {
    /// `θx★`.
    pub center: Vec<f64>,
    pub x_star: Vec<f64>,
    /// `None` when no finite constraint exists.
    pub radius: Option<f64>,
    pub theta: DMatrix<f64>,
    pub binding: Option<usize>,
    pub constraints: Vec<BallConstraint>,
}

impl InvariantBall {
    /// `‖θ(x − x★)‖₂`.
    pub fn metric_distance(&self, x: &DVector<f64>) -> f64 {
        let xs = DVector::from_column_slice(&self.x_star);
        (&self.theta * (x - xs)).norm()
    }

    pub fn theta_inv(&self) -> DMatrix<f64> {
        self.theta.clone().try_inverse().expect("ball metric is invertible")
    }

    /// Largest radius for which the box constraints hold on the whole ball.
    pub fn radius_or(&self, fallback: f64) -> f64 {
        self.radius.unwrap_or(fallback)
    }
}

/// Inscribe the largest `θ`-ball in the x-space image of the box.
///
/// Differential bounds give rows `e_k`; algebraic bounds are mapped through
/// the manifold linearization `δy = −D⁻¹C δx`.
pub fn invariant_ball(
    region: &BoxRegion,
    cert: &Certificate,
    blocks: &JacobianBlocks,
    z_star: &DVector<f64>,
) -> Result<InvariantBall> {
    let (n, m) = (blocks.n(), blocks.m());
    if region.dim() != n + m || cert.theta.nrows() != n || z_star.len() != n + m {
        return Err(invalid("box, certificate, blocks and equilibrium dimensions differ"));
    }
    let theta_inv = cert.theta_inv();
    let sens = -(blocks.d_inverse(REGULARITY_THRESHOLD)? * &blocks.c);
    let mut constraints = Vec::new();
    for k in region.finite_coordinates() {
        let bound = region.bounds[k].expect("finite coordinate");
        let row: DVector<f64> = if k < n {
            DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 })
        } else {
            sens.row(k - n).transpose()
        };
        let gain = (theta_inv.transpose() * &row).norm();
        if gain == 0.0 {
            continue;
        }
        constraints.push(BallConstraint { coord: k, row: row.iter().copied().collect(), bound, radius: bound / gain });
    }
    let best = constraints.iter().min_by(|a, b| a.radius.total_cmp(&b.radius)).map(|c| (c.radius, c.coord));
    if let Some((r, _)) = best {
        if !(r > 0.0) {
            return Err(Error::Degenerate(format!("inscribed radius {r:.3e} is not positive")));
        }
    }
    let x_star = z_star.rows(0, n).into_owned();
    Ok(InvariantBall {
        center: (&cert.theta * &x_star).iter().copied().collect(),
        x_star: x_star.iter().copied().collect(),
        radius: best.map(|b| b.0),
        theta: cert.theta.clone(),
        binding: best.map(|b| b.1),
        constraints,
    })
}

/// Metric used by the ball and by contraction reports.
pub fn certificate_metric(cert: &Certificate) -> Result<Metric> {
    Metric::new(cert.theta.clone(), DMatrix::identity(cert.m, cert.m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxEntry {
    pub coord: usize,
    pub label: String,
    pub bound: Option<f64>,
}

/// Region report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub beta: f64,
    #[serde(rename = "box")]
    pub bounds: Vec<BoxEntry>,
    pub r_max: Option<f64>,
    pub theta: Vec<Vec<f64>>,
    pub binding_constraint: Option<String>,
    pub certification: BoxCertification,
}

impl RegionReport {
    pub fn new(
        cert: &Certificate,
        region: &BoxRegion,
        ball: &InvariantBall,
        certification: BoxCertification,
        labels: &[String],
    ) -> Self {
        let label = |k: usize| labels.get(k).cloned().unwrap_or_else(|| format!("z{k}"));
        Self {
            beta: cert.beta,
            bounds: region
                .bounds
                .iter()
                .enumerate()
                .map(|(k, b)| BoxEntry { coord: k, label: label(k), bound: *b })
                .collect(),
            r_max: ball.radius,
            theta: cert.theta.row_iter().map(|r| r.iter().copied().collect()).collect(),
            binding_constraint: ball.binding.map(label),
            certification,
        }
    }
}
