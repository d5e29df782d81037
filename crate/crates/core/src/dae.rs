//! Quadratic semi-explicit index-1 DAE models.
//!
//! A model stacks the differential right-hand side `f` (first `n` rows) over
//! the algebraic constraints `g` (last `m` rows) as a single map
//!
//! ```text
//! h_i(z) = c_i + L_i z + zᵀ Q_i z,     z = (x, y)
//! ```
//!
//! so the Jacobian `J(z)` is affine in `z`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linops::sigma_min;

/// Residual bound a stored equilibrium must satisfy.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;
/// Default `σ_min(D)` threshold below which a point is outside the regular domain.
pub const REGULARITY_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub singular_threshold: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_iterations: 50, max_halvings: 30, singular_threshold: REGULARITY_THRESHOLD }
    }
}

/// Upper-triangle storage of one symmetric quadratic coefficient matrix.
/// Entry `(j, k)` with `j <= k` holds `Q[j][k]` (equal to `Q[k][j]`).
type SymTerms = BTreeMap<(usize, usize), f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticDae {
    n: usize,
    m: usize,
    constant: DVector<f64>,
    linear: DMatrix<f64>,
    quad: Vec<SymTerms>,
    z_star: Option<DVector<f64>>,
    labels: Vec<String>,
}

/// `A = ∂f/∂x`, `B = ∂f/∂y`, `C = ∂g/∂x`, `D = ∂g/∂y` at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianBlocks {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl JacobianBlocks {
    pub fn from_full(j: &DMatrix<f64>, n: usize) -> Self {
        let m = j.nrows() - n;
        Self {
            a: j.view((0, 0), (n, n)).into_owned(),
            b: j.view((0, n), (n, m)).into_owned(),
            c: j.view((n, 0), (m, n)).into_owned(),
            d: j.view((n, n), (m, m)).into_owned(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.d.nrows()
    }

    pub fn full(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut j = DMatrix::zeros(n + m, n + m);
        j.view_mut((0, 0), (n, n)).copy_from(&self.a);
        j.view_mut((0, n), (n, m)).copy_from(&self.b);
        j.view_mut((n, 0), (m, n)).copy_from(&self.c);
        j.view_mut((n, n), (m, m)).copy_from(&self.d);
        j
    }

    pub fn d_sigma_min(&self) -> f64 {
        sigma_min(&self.d)
    }

    /// `D⁻¹`, or a singular-manifold error when `σ_min(D) <= threshold`.
    pub fn d_inverse(&self, threshold: f64) -> Result<DMatrix<f64>> {
        let s = self.d_sigma_min();
        if s <= threshold {
            return Err(Error::SingularManifold { sigma_min: s });
        }
        self.d.clone().try_inverse().ok_or(Error::SingularManifold { sigma_min: s })
    }

    /// The reduced Jacobian `A − B D⁻¹ C` of `ẋ = f(x, Y(x))`.
    pub fn reduced(&self) -> Result<DMatrix<f64>> {
        let dinv = self.d_inverse(REGULARITY_THRESHOLD)?;
        Ok(&self.a - &self.b * dinv * &self.c)
    }
}

/// `J(z★ + δz) = J★ + Σ_k δz_k J_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDecomposition {
    pub j_star: DMatrix<f64>,
    pub j_k: Vec<DMatrix<f64>>,
    /// `true` where `J_k` has at least one nonzero entry.
    pub nonzero: Vec<bool>,
}

impl CoefficientDecomposition {
    pub fn jacobian_at_offset(&self, dz: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.j_star.clone();
        for (k, jk) in self.j_k.iter().enumerate() {
            if self.nonzero[k] && dz[k] != 0.0 {
                j += jk * dz[k];
            }
        }
        j
    }

    pub fn active_coordinates(&self) -> Vec<usize> {
        (0..self.nonzero.len()).filter(|&k| self.nonzero[k]).collect()
    }
}

/// One `(eq, j, k, coeff)` entry of the model file: the term
/// `coeff · z_j · z_k` in equation `eq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerm {
    pub eq: usize,
    pub j: usize,
    pub k: usize,
    pub coeff: f64,
}

/// On-disk model schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    pub constant: Vec<f64>,
    pub linear: Vec<Vec<f64>>,
    #[serde(default)]
    pub quadratic: Vec<QuadraticTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equilibrium: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl QuadraticDae {
    /// Build a model from dense constant/linear parts and sparse quadratic
    /// terms (each term contributes `coeff · z_j · z_k` to equation `eq`).
    pub fn new(
        n: usize,
        m: usize,
        constant: DVector<f64>,
        linear: DMatrix<f64>,
        terms: &[QuadraticTerm],
    ) -> Result<Self> {
        let dim = n + m;
        if dim == 0 {
            return Err(invalid("model has no coordinates"));
        }
        if constant.len() != dim {
            return Err(invalid(format!("constant has length {}, expected {dim}", constant.len())));
        }
        if linear.shape() != (dim, dim) {
            return Err(invalid(format!("linear is {:?}, expected {dim}x{dim}", linear.shape())));
        }
        if constant.iter().chain(linear.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite coefficient"));
        }
        let mut quad = vec![SymTerms::new(); dim];
        for t in terms {
            if t.eq >= dim || t.j >= dim || t.k >= dim {
                return Err(invalid(format!("quadratic term {t:?} out of range for dimension {dim}")));
            }
            if !t.coeff.is_finite() {
                return Err(invalid(format!("quadratic term {t:?} is not finite")));
            }
            let key = (t.j.min(t.k), t.j.max(t.k));
            // Off-diagonal coefficients are split evenly over (j,k) and (k,j).
            let value = if key.0 == key.1 { t.coeff } else { 0.5 * t.coeff };
            *quad[t.eq].entry(key).or_insert(0.0) += value;
        }
        for terms in &mut quad {
            terms.retain(|_, v| *v != 0.0);
        }
        let labels = (0..dim).map(|i| if i < n { format!("x{i}") } else { format!("y{}", i - n) }).collect();
        Ok(Self { n, m, constant, linear, quad, z_star: None, labels })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(invalid(format!("{} labels for {} coordinates", labels.len(), self.dim())));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Attach an equilibrium after checking its residual.
    pub fn with_equilibrium(mut self, z: DVector<f64>) -> Result<Self> {
        self.set_equilibrium(z)?;
        Ok(self)
    }

    pub fn set_equilibrium(&mut self, z: DVector<f64>) -> Result<()> {
        let r = self.residual(&z)?.amax();
        if !(r <= EQUILIBRIUM_TOL) {
            return Err(Error::State(format!("point is not an equilibrium (residual {r:.3e})")));
        }
        self.z_star = Some(z);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn equilibrium(&self) -> Option<&DVector<f64>> {
        self.z_star.as_ref()
    }

    pub fn require_equilibrium(&self) -> Result<&DVector<f64>> {
        self.z_star.as_ref().ok_or_else(|| Error::State("model has no equilibrium set".into()))
    }

    pub fn constant(&self) -> &DVector<f64> {
        &self.constant
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    /// Dense symmetric `Q_i`.
    pub fn quadratic_matrix(&self, eq: usize) -> DMatrix<f64> {
        let dim = self.dim();
        let mut q = DMatrix::zeros(dim, dim);
        for (&(j, k), &v) in &self.quad[eq] {
            q[(j, k)] = v;
            q[(k, j)] = v;
        }
        q
    }

    /// Equations carrying at least one quadratic term.
    pub fn quadratic_equations(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| !self.quad[i].is_empty()).collect()
    }

    /// Quadratic terms in canonical file form (one per unordered pair).
    pub fn quadratic_terms(&self) -> Vec<QuadraticTerm> {
        let mut out = Vec::new();
        for (eq, terms) in self.quad.iter().enumerate() {
            for (&(j, k), &v) in terms {
                let coeff = if j == k { v } else { 2.0 * v };
                out.push(QuadraticTerm { eq, j, k, coeff });
            }
        }
        out
    }

    fn check_point(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(invalid(format!("point has length {}, expected {}", z.len(), self.dim())));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("point has non-finite entries"));
        }
        Ok(())
    }

    /// Full residual `h(z)` (f stacked over g).
    pub fn residual(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(z)?;
        Ok(self.residual_unchecked(z))
    }

    fn residual_unchecked(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut h = &self.constant + &self.linear * z;
        for (i, terms) in self.quad.iter().enumerate() {
            let mut acc = 0.0;
            for (&(j, k), &v) in terms {
                let t = v * z[j] * z[k];
                acc += if j == k { t } else { 2.0 * t };
            }
            h[i] += acc;
        }
        h
    }

    /// `(f, g)` at `z`.
    pub fn eval_residual(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let h = self.residual(z)?;
        Ok((h.rows(0, self.n).into_owned(), h.rows(self.n, self.m).into_owned()))
    }

    /// Full Jacobian; row `i` is `L_i + 2 zᵀ Q_i`.
    pub fn eval_jacobian(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(z)?;
        Ok(self.jacobian_unchecked(z))
    }

    fn jacobian_unchecked(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.linear.clone();
        for (i, terms) in self.quad.iter().enumerate() {
            for (&(a, b), &v) in terms {
                j[(i, a)] += 2.0 * v * z[b];
                if a != b {
                    j[(i, b)] += 2.0 * v * z[a];
                }
            }
        }
        j
    }

    pub fn blocks(&self, z: &DVector<f64>) -> Result<JacobianBlocks> {
        Ok(JacobianBlocks::from_full(&self.eval_jacobian(z)?, self.n))
    }

    /// Blocks at the stored equilibrium.
    pub fn blocks_at_equilibrium(&self) -> Result<JacobianBlocks> {
        let z = self.require_equilibrium()?.clone();
        self.blocks(&z)
    }

    /// Decompose `J` around the stored equilibrium. Row `i` of `J_k` is twice
    /// row `k` of `Q_i`.
    pub fn coefficient_decomposition(&self) -> Result<CoefficientDecomposition> {
        let z = self.require_equilibrium()?;
        let dim = self.dim();
        let mut j_k = vec![DMatrix::zeros(dim, dim); dim];
        for (i, terms) in self.quad.iter().enumerate() {
            for (&(a, b), &v) in terms {
                j_k[b][(i, a)] += 2.0 * v;
                if a != b {
                    j_k[a][(i, b)] += 2.0 * v;
                }
            }
        }
        let nonzero = j_k.iter().map(|m| m.iter().any(|v| *v != 0.0)).collect();
        Ok(CoefficientDecomposition { j_star: self.jacobian_unchecked(z), j_k, nonzero })
    }

    /// `σ_min(∂g/∂y)` at `z`; `+inf` when the model has no algebraic part.
    pub fn regularity(&self, z: &DVector<f64>) -> Result<f64> {
        Ok(self.blocks(z)?.d_sigma_min())
    }

    pub fn is_regular(&self, z: &DVector<f64>, threshold: f64) -> Result<bool> {
        Ok(self.regularity(z)? > threshold)
    }

    pub fn stack(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.dim(), x.iter().chain(y.iter()).copied())
    }

    /// Solve `g(x, y) = 0` for `y` by damped Newton from `y0`.
    pub fn solve_algebraic(&self, x: &DVector<f64>, y0: &DVector<f64>) -> Result<DVector<f64>> {
        self.solve_algebraic_with(x, y0, &NewtonOptions::default())
    }

    pub fn solve_algebraic_with(
        &self,
        x: &DVector<f64>,
        y0: &DVector<f64>,
        opts: &NewtonOptions,
    ) -> Result<DVector<f64>> {
        if x.len() != self.n || y0.len() != self.m {
            return Err(invalid(format!(
                "expected x of length {} and y of length {}, got {} and {}",
                self.n,
                self.m,
                x.len(),
                y0.len()
            )));
        }
        let (n, m) = (self.n, self.m);
        if m == 0 {
            return Ok(DVector::zeros(0));
        }
        let mut z = self.stack(x, y0);
        self.check_point(&z)?;
        let g_of = |z: &DVector<f64>| self.residual_unchecked(z).rows(n, m).into_owned();
        let mut g = g_of(&z);
        let mut norm = g.amax();
        for _ in 0..opts.max_iterations {
            if norm <= opts.tolerance {
                // One extra full step polishes the quadratically converging iterate.
                if let Some(dy) = self.newton_step_y(&z, &g, opts.singular_threshold)? {
                    let mut trial = z.clone();
                    let mut tail = trial.rows_mut(n, m);
                    tail -= &dy;
                    let tg = g_of(&trial);
                    if tg.amax() <= norm {
                        z = trial;
                    }
                }
                return Ok(z.rows(n, m).into_owned());
            }
            let dy = match self.newton_step_y(&z, &g, opts.singular_threshold)? {
                Some(dy) => dy,
                None => break,
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=opts.max_halvings {
                let mut trial = z.clone();
                let mut tail = trial.rows_mut(n, m);
                tail -= &dy * t;
                let tg = g_of(&trial);
                let tn = tg.amax();
                if tn < norm {
                    z = trial;
                    g = tg;
                    norm = tn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if norm <= opts.tolerance {
            return Ok(z.rows(n, m).into_owned());
        }
        Err(Error::NoSolution { iterations: opts.max_iterations, residual: norm })
    }

    fn newton_step_y(&self, z: &DVector<f64>, g: &DVector<f64>, threshold: f64) -> Result<Option<DVector<f64>>> {
        let (n, m) = (self.n, self.m);
        let jac = self.jacobian_unchecked(z);
        let d = jac.view((n, n), (m, m)).into_owned();
        let s = sigma_min(&d);
        if s < threshold {
            return Err(Error::SingularManifold { sigma_min: s });
        }
        Ok(d.lu().solve(g))
    }

    /// Damped Newton on the full system `h(z) = 0`.
    pub fn solve_equilibrium(&self, z0: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(z0)?;
        let mut z = z0.clone();
        let mut h = self.residual_unchecked(&z);
        let mut norm = h.amax();
        let mut trace = vec![norm];
        for _ in 0..100 {
            if norm <= 1e-13 {
                break;
            }
            let step = match self.jacobian_unchecked(&z).lu().solve(&h) {
                Some(s) => s,
                None => break,
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=30 {
                let trial = &z - &step * t;
                let th = self.residual_unchecked(&trial);
                let tn = th.amax();
                if tn < norm {
                    z = trial;
                    h = th;
                    norm = tn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            trace.push(norm);
            if !accepted {
                break;
            }
        }
        if norm <= EQUILIBRIUM_TOL {
            Ok(z)
        } else {
            Err(Error::NoEquilibrium { residual: norm, trace })
        }
    }

    /// Find an equilibrium from `z0` and store it in the model.
    pub fn find_equilibrium(&mut self, z0: &DVector<f64>) -> Result<DVector<f64>> {
        let z = self.solve_equilibrium(z0)?;
        self.z_star = Some(z.clone());
        Ok(z)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            n: self.n,
            m: self.m,
            constant: self.constant.iter().copied().collect(),
            linear: self.linear.row_iter().map(|r| r.iter().copied().collect()).collect(),
            quadratic: self.quadratic_terms(),
            equilibrium: self.z_star.as_ref().map(|z| z.iter().copied().collect()),
            labels: Some(self.labels.clone()),
        }
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        let dim = file.n + file.m;
        if file.linear.len() != dim || file.linear.iter().any(|r| r.len() != dim) {
            return Err(invalid(format!("linear must be {dim}x{dim}")));
        }
        let linear = DMatrix::from_fn(dim, dim, |i, j| file.linear[i][j]);
        let constant = DVector::from_vec(file.constant.clone());
        let mut model = Self::new(file.n, file.m, constant, linear, &file.quadratic)?;
        if let Some(labels) = &file.labels {
            model = model.with_labels(labels.clone())?;
        }
        if let Some(eq) = &file.equilibrium {
            model = model.with_equilibrium(DVector::from_vec(eq.clone()))?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("model serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
