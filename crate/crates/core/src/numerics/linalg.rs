//! Top-k singular vectors by power iteration, and Cholesky-based Gaussian
//! sampling with a bounded diagonal jitter.

use super::matrix::{axpy, dot, norm, Matrix};
use super::rng::RngState;
use crate::error::{arg, Error, Result};

/// Leading right singular vectors (one per row) and singular values
/// in descending order.
#[derive(Debug, Clone)]
pub struct SingularPairs {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

/// Default iteration cap and tolerance used by callers that do not tune them.
pub const DEFAULT_MAX_ITERS: usize = 20_000;
pub const DEFAULT_TOL: f64 = 1e-12;

/// Top-`k` right singular vectors of `m`.
///
/// Runs power iteration on `mᵀm`, re-orthogonalizing against the vectors
/// already found, and stops when the residual `‖Av − λv‖` drops below
/// `tol * λ₁`. Directions whose eigenvalue collapses to zero are still
/// returned (as an orthogonal completion) with value 0. Each vector has its
/// first nonzero coordinate made positive.
pub fn top_singular_vectors(m: &Matrix, k: usize, max_iters: usize, tol: f64) -> Result<SingularPairs> {
    if k == 0 || k > m.rows().min(m.cols()) {
        return arg(format!(
            "k = {k} must be in 1..={} for a {}x{} matrix",
            m.rows().min(m.cols()),
            m.rows(),
            m.cols()
        ));
    }
    if !(tol > 0.0) {
        return arg("tolerance must be positive");
    }
    let gram = m.gram();
    symmetric_top_eigen(&gram, k, max_iters, tol).map(|(vectors, eigvals)| SingularPairs {
        vectors,
        values: eigvals.into_iter().map(|l| l.max(0.0).sqrt()).collect(),
    })
}

/// Top-`k` eigenpairs of a symmetric positive semi-definite matrix.
fn symmetric_top_eigen(a: &Matrix, k: usize, max_iters: usize, tol: f64) -> Result<(Matrix, Vec<f64>)> {
    let n = a.rows();
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values = Vec::with_capacity(k);
    // deterministic start vectors, independent of any caller stream
    let mut start_rng = RngState::new(0x5EED_0F_5EC7_0125);
    let mut scale = 0.0_f64;

    for _ in 0..k {
        let mut v = start_rng.normal_vec(n);
        orthogonalize(&mut v, &found);
        if !renormalize(&mut v) {
            v = completion_vector(n, &found);
        }
        let mut lambda = 0.0;
        let mut converged = false;
        let mut residual = f64::INFINITY;

        for _ in 0..max_iters.max(1) {
            let mut w = a.matvec(&v)?;
            orthogonalize(&mut w, &found);
            lambda = dot(&v, &w);
            let r: f64 = w
                .iter()
                .zip(&v)
                .map(|(wi, vi)| (wi - lambda * vi).powi(2))
                .sum::<f64>()
                .sqrt();
            residual = r;
            let reference = if found.is_empty() { lambda.abs() } else { scale };
            if r <= tol * reference.max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
            let wn = norm(&w);
            if wn <= tol * scale {
                // deflated spectrum is numerically zero
                lambda = 0.0;
                converged = true;
                break;
            }
            if wn == 0.0 {
                lambda = 0.0;
                converged = true;
                break;
            }
            w.iter_mut().for_each(|x| *x /= wn);
            v = w;
        }
        if !converged {
            return Err(Error::Convergence {
                iterations: max_iters,
                residual,
            });
        }
        orthogonalize(&mut v, &found);
        if !renormalize(&mut v) {
            v = completion_vector(n, &found);
        }
        fix_sign(&mut v);
        if found.is_empty() {
            scale = lambda.abs();
        }
        found.push(v);
        values.push(lambda.max(0.0));
    }

    // power iteration with deflation can swap nearly equal eigenvalues
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let vectors = Matrix::from_rows(&order.iter().map(|&i| found[i].clone()).collect::<Vec<_>>())?;
    let values = order.iter().map(|&i| values[i]).collect();
    Ok((vectors, values))
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // two passes of classical Gram-Schmidt keep orthogonality at 1e-15
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            axpy(-c, b, v);
        }
    }
}

fn renormalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n < 1e-300 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Canonical basis vector with the smallest overlap with `basis`, orthogonalized.
fn completion_vector(n: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut best = vec![0.0; n];
    let mut best_norm = -1.0;
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        orthogonalize(&mut e, basis);
        let en = norm(&e);
        if en > best_norm + 1e-12 {
            best_norm = en;
            best = e;
        }
    }
    renormalize(&mut best);
    best
}

/// Flips `v` so its first coordinate that is not numerically zero is positive.
pub fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = cov (+ jitter)`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
    jitter: f64,
}

/// Number of jitter attempts before giving up on a covariance.
pub const JITTER_ATTEMPTS: usize = 3;

impl Cholesky {
    /// Factorizes a symmetric PSD matrix. Zero pivots are accepted when the
    /// rest of their column vanishes, so rank-deficient covariances still
    /// factor. Otherwise `δ = 1e-10 · trace/dim` (or `1e-10` for a zero trace)
    /// is added to the diagonal, up to three times.
    pub fn decompose(cov: &Matrix) -> Result<Self> {
        Self::decompose_inner(cov, false)
    }

    /// Like [`Cholesky::decompose`] but insists on strictly positive pivots,
    /// as needed for densities.
    pub fn decompose_definite(cov: &Matrix) -> Result<Self> {
        Self::decompose_inner(cov, true)
    }

    fn decompose_inner(cov: &Matrix, definite: bool) -> Result<Self> {
        let n = cov.rows();
        if cov.cols() != n {
            return arg("covariance must be square");
        }
        if !cov.is_symmetric(1e-9) {
            return arg("covariance must be symmetric");
        }
        let trace = cov.trace();
        let step = if trace > 0.0 { 1e-10 * trace / n.max(1) as f64 } else { 1e-10 };
        let mut last = (0, 0.0);
        for attempt in 0..=JITTER_ATTEMPTS {
            let jitter = step * attempt as f64;
            match factor(cov, jitter, definite) {
                Ok(lower) => return Ok(Self { lower, jitter }),
                Err(fail) => last = fail,
            }
        }
        Err(Error::Decomposition {
            index: last.0,
            pivot: last.1,
        })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    /// `log det(L Lᵀ)`; `-inf` for a singular factor.
    pub fn log_det(&self) -> f64 {
        (0..self.dim()).map(|i| 2.0 * self.lower.get(i, i).ln()).sum()
    }

    /// Solves `L y = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = self.lower.row(i);
            let s = b[i] - dot(&row[..i], &y[..i]);
            let d = row[i];
            y[i] = if d > 0.0 { s / d } else { 0.0 };
        }
        y
    }

    /// `(x − μ)ᵀ Σ⁻¹ (x − μ)` for a definite factor.
    pub fn mahalanobis_sq(&self, x: &[f64], mean: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
        let y = self.solve_lower(&diff);
        dot(&y, &y)
    }

    /// Gaussian log-density of `x` under `N(mean, L Lᵀ)`.
    pub fn gaussian_log_density(&self, x: &[f64], mean: &[f64]) -> f64 {
        let d = self.dim() as f64;
        -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det() + self.mahalanobis_sq(x, mean))
    }

    /// `mean + L z` for a standard normal `z` drawn from `rng`.
    pub fn sample_into(&self, mean: &[f64], rng: &mut RngState, out: &mut [f64]) {
        let n = self.dim();
        let z = rng.normal_vec(n);
        for i in 0..n {
            let row = self.lower.row(i);
            out[i] = mean[i] + dot(&row[..=i], &z[..=i]);
        }
    }
}

fn factor(cov: &Matrix, jitter: f64, definite: bool) -> std::result::Result<Matrix, (usize, f64)> {
    let n = cov.rows();
    let scale = (0..n).fold(0.0_f64, |m, i| m.max(cov.get(i, i).abs())).max(jitter);
    let zero_tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = cov.get(j, j) + jitter;
        for k in 0..j {
            d -= l.get(j, k).powi(2);
        }
        if d > zero_tol {
            let ljj = d.sqrt();
            l.set(j, j, ljj);
            for i in j + 1..n {
                let mut s = cov.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / ljj);
            }
        } else if !definite && d >= -zero_tol {
            // zero pivot: the remaining column must vanish for PSD input
            for i in j + 1..n {
                let mut s = cov.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if s.abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
                    return Err((j, d));
                }
            }
        } else {
            return Err((j, d));
        }
    }
    Ok(l)
}

/// `n` draws from `N(mean, cov)`, one per row.
pub fn cholesky_sample(mean: &[f64], cov: &Matrix, n: usize, rng: &mut RngState) -> Result<Matrix> {
    if cov.rows() != mean.len() {
        return arg(format!(
            "mean has {} entries but covariance is {}x{}",
            mean.len(),
            cov.rows(),
            cov.cols()
        ));
    }
    let chol = Cholesky::decompose(cov)?;
    let d = mean.len();
    let mut data = vec![0.0; n * d];
    for row in data.chunks_mut(d.max(1)).take(n) {
        chol.sample_into(mean, rng, row);
    }
    Matrix::new(n, d, data)
}
