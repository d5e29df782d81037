//! Dense linear-algebra kernel: matrix measures (logarithmic norms), minimum
//! gains, Lyapunov solves, SPD factors and symmetric eigendecompositions.
//!
//! Everything here is a pure function of its inputs.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Induced norm / matrix measure order. Only the three standard norms are
/// representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    One,
    Two,
    Infinity,
}

impl NormOrder {
    pub const ALL: [NormOrder; 3] = [NormOrder::One, NormOrder::Two, NormOrder::Infinity];

    /// The exponent `p` of the vector norm, `f64::INFINITY` for the max norm.
    pub fn exponent(self) -> f64 {
        match self {
            NormOrder::One => 1.0,
            NormOrder::Two => 2.0,
            NormOrder::Infinity => f64::INFINITY,
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormOrder::One => "1",
            NormOrder::Two => "2",
            NormOrder::Infinity => "inf",
        })
    }
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "one" => Ok(NormOrder::One),
            "2" | "two" => Ok(NormOrder::Two),
            "inf" | "infinity" | "∞" => Ok(NormOrder::Infinity),
            other => Err(invalid(format!("unknown norm order `{other}` (expected 1, 2 or inf)"))),
        }
    }
}

fn ensure_square_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(invalid(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn lambda_max_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().max()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn lambda_min_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Smallest singular value; `+inf` for an empty matrix.
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    m.singular_values().min()
}

/// Largest singular value; `0` for an empty matrix.
pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues().iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Vector p-norm for any `p >= 1`, including `p = inf`.
pub fn vector_norm(v: &DVector<f64>, p: f64) -> f64 {
    if p.is_infinite() {
        v.amax()
    } else if p == 1.0 {
        v.lp_norm(1)
    } else if p == 2.0 {
        v.norm()
    } else {
        let scale = v.amax();
        if scale == 0.0 {
            return 0.0;
        }
        scale * v.iter().map(|x| (x.abs() / scale).powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Induced matrix norm. Works for rectangular matrices.
pub fn induced_norm(m: &DMatrix<f64>, p: NormOrder) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    match p {
        NormOrder::One => m.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max),
        NormOrder::Infinity => m.row_iter().map(|r| r.lp_norm(1)).fold(0.0, f64::max),
        NormOrder::Two => sigma_max(m),
    }
}

/// Matrix measure (logarithmic norm) `μ_p(M)` from the closed forms:
///
/// ```text
/// μ₁(M) = max_j ( m_jj + Σ_{i≠j} |m_ij| )
/// μ₂(M) = λ_max( (M + Mᵀ)/2 )
/// μ∞(M) = max_i ( m_ii + Σ_{j≠i} |m_ij| )
/// ```
pub fn matrix_measure(m: &DMatrix<f64>, p: NormOrder) -> Result<f64> {
    ensure_square_finite(m, "matrix")?;
    Ok(measure_unchecked(m, p))
}

pub(crate) fn measure_unchecked(m: &DMatrix<f64>, p: NormOrder) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    match p {
        NormOrder::Two => lambda_max_sym(m),
        NormOrder::One => (0..n)
            .map(|j| m[(j, j)] + (0..n).filter(|&i| i != j).map(|i| m[(i, j)].abs()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max),
        NormOrder::Infinity => (0..n)
            .map(|i| m[(i, i)] + (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Finite-`h` difference quotient `(‖I + hM‖_p − 1)/h`, which converges to
/// [`matrix_measure`] as `h → 0⁺`.
pub fn matrix_measure_oracle(m: &DMatrix<f64>, p: NormOrder, h: f64) -> Result<f64> {
    ensure_square_finite(m, "matrix")?;
    if !(h > 0.0 && h <= 1e-4) {
        return Err(invalid(format!("step h must lie in (0, 1e-4], got {h}")));
    }
    let n = m.nrows();
    let shifted = DMatrix::identity(n, n) + m * h;
    Ok((induced_norm(&shifted, p) - 1.0) / h)
}

/// Result of a minimum-gain evaluation `ν_p(H) = min_{‖v‖_p = 1} ‖Hv‖_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinGain {
    pub value: f64,
    /// Step size at which the descent stopped (zero for the exact 2-norm value).
    pub tolerance: f64,
    /// `true` for the closed-form 2-norm value. Sampled estimates are upper
    /// bounds on the true minimum.
    pub exact: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MinGainOptions {
    pub restarts: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for MinGainOptions {
    fn default() -> Self {
        Self { restarts: 64, tolerance: 1e-8, seed: 0x5eed_0001 }
    }
}

/// Minimum gain of a full-column-rank matrix.
pub fn min_gain(h: &DMatrix<f64>, p: NormOrder) -> Result<MinGain> {
    min_gain_with(h, p, &MinGainOptions::default())
}

pub fn min_gain_with(h: &DMatrix<f64>, p: NormOrder, opts: &MinGainOptions) -> Result<MinGain> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let cols = h.ncols();
    if cols == 0 || h.nrows() < cols {
        return Err(Error::DegenerateInput(format!("{}x{} matrix cannot have full column rank", h.nrows(), cols)));
    }
    let sv = h.singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if smin <= 1e-12 * smax.max(1.0) {
        return Err(Error::DegenerateInput(format!("rank-deficient matrix (sigma_min = {smin:.3e})")));
    }
    if p == NormOrder::Two {
        return Ok(MinGain { value: smin, tolerance: 0.0, exact: true });
    }

    let q = p.exponent();
    let ratio = |v: &DVector<f64>| vector_norm(&(h * v), q) / vector_norm(v, q);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(opts.restarts + 2 * cols);
    for i in 0..cols {
        for s in [1.0, -1.0] {
            let mut v = DVector::zeros(cols);
            v[i] = s;
            starts.push(v);
        }
    }
    for _ in 0..opts.restarts {
        let v = DVector::from_fn(cols, |_, _| rng.gen_range(-1.0..1.0));
        if v.amax() > 0.0 {
            starts.push(v);
        }
    }

    let mut best = MinGain { value: f64::INFINITY, tolerance: f64::INFINITY, exact: false };
    for start in starts {
        let mut v = &start / vector_norm(&start, q);
        let mut value = ratio(&v);
        let mut step = 1.0 / smax;
        while step > opts.tolerance {
            let hv = h * &v;
            let grad = norm_subgradient(h, &hv, p);
            if grad.amax() == 0.0 {
                break;
            }
            let trial = &v - &grad * step;
            let tn = vector_norm(&trial, q);
            if tn == 0.0 {
                step *= 0.5;
                continue;
            }
            let trial = trial / tn;
            let tv = ratio(&trial);
            if tv < value - 1e-15 * value {
                v = trial;
                value = tv;
            } else {
                step *= 0.5;
            }
        }
        if value < best.value {
            best = MinGain { value, tolerance: step, exact: false };
        }
    }
    Ok(best)
}

/// A subgradient of `v ↦ ‖Hv‖_p` for p ∈ {1, ∞}.
fn norm_subgradient(h: &DMatrix<f64>, hv: &DVector<f64>, p: NormOrder) -> DVector<f64> {
    match p {
        NormOrder::One => h.transpose() * hv.map(|x| if x == 0.0 { 0.0 } else { x.signum() }),
        NormOrder::Infinity => {
            let i = hv.iamax();
            h.row(i).transpose() * hv[i].signum()
        }
        NormOrder::Two => h.transpose() * hv / hv.norm().max(f64::MIN_POSITIVE),
    }
}

/// A symmetric positive-definite matrix together with its factor,
/// `P = θᵀθ` where θ is the transpose of the lower Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdFactor {
    pub p: DMatrix<f64>,
    pub theta: DMatrix<f64>,
}

impl SpdFactor {
    pub fn from_spd(p: &DMatrix<f64>) -> Result<Self> {
        ensure_square_finite(p, "P")?;
        let p = symmetrize(p);
        let chol =
            p.clone().cholesky().ok_or_else(|| Error::NoCertificate("matrix is not positive definite".into()))?;
        let theta = chol.l().transpose();
        Ok(Self { p, theta })
    }

    pub fn theta_inv(&self) -> DMatrix<f64> {
        // θ is upper triangular with a positive diagonal.
        self.theta.clone().try_inverse().expect("Cholesky factor of an SPD matrix is invertible")
    }

    /// Scale `P` by `c > 0` (and θ by √c).
    pub fn scaled(&self, c: f64) -> Self {
        Self { p: &self.p * c, theta: &self.theta * c.sqrt() }
    }
}

/// Solve `AᵀP + PA = −Q` for `P` by the Kronecker-product linear system.
///
/// `A` must be Hurwitz; the error names the offending eigenvalue otherwise.
pub fn solve_lyapunov_rhs(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square_finite(a, "A")?;
    ensure_square_finite(q, "Q")?;
    let n = a.nrows();
    if q.nrows() != n {
        return Err(invalid("A and Q dimensions differ"));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(bad) = a.complex_eigenvalues().iter().find(|l| l.re >= 0.0) {
        return Err(Error::NoCertificate(format!(
            "matrix is not Hurwitz: eigenvalue {:.6e}{:+.6e}i has nonnegative real part",
            bad.re, bad.im
        )));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let lu = k.clone().lu();
    let mut x = lu.solve(&rhs).ok_or_else(|| Error::NoCertificate("Lyapunov operator is singular".into()))?;
    // One step of iterative refinement.
    let r = &rhs - &k * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok(symmetrize(&p))
}

/// Solve `AᵀP + PA = −I` and factor the solution.
pub fn solve_lyapunov(a: &DMatrix<f64>) -> Result<SpdFactor> {
    let n = a.nrows();
    let p = solve_lyapunov_rhs(a, &DMatrix::identity(n, n))?;
    SpdFactor::from_spd(&p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Eigendecomposition of a symmetric matrix, ordered by decreasing
/// eigenvalue, with orthonormal eigenvectors.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<Vec<EigenPair>> {
    ensure_square_finite(m, "matrix")?;
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * m.norm() {
        return Err(invalid(format!("matrix is not symmetric (‖M − Mᵀ‖_F = {asym:.3e})")));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut pairs: Vec<EigenPair> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&value, v)| EigenPair { value, vector: v.into_owned() })
        .collect();
    pairs.sort_by(|a, b| b.value.total_cmp(&a.value));
    Ok(pairs)
}
