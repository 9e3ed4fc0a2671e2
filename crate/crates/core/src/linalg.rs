//! Dense linear-algebra helpers: Moore–Penrose pseudoinverse, spectral
//! norm, and a row-compressed sparse operator for Chebyshev recurrences.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 60;
const EIGEN_MAX_ITERS: usize = 10_000;

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} has non-finite entries")))
    }
}

/// Thin SVD `A = U diag(σ) Vᵀ` by one-sided Jacobi rotations.
///
/// Slower than bidiagonalization but accurate on rank-deficient input.
/// Singular values are sorted in decreasing order; columns of `U` whose
/// singular value is zero are left zero.
pub fn jacobi_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    check_finite(m, "SVD input")?;
    if m.nrows() < m.ncols() {
        let (u, s, v) = jacobi_svd(&m.transpose())?;
        return Ok((v, s, u));
    }
    let n = m.ncols();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        converged = true;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut a, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
    }
    if !converged {
        return Err(Error::Numeric("Jacobi SVD did not converge".into()));
    }
    let mut order: Vec<(usize, f64)> = (0..n).map(|j| (j, a.column(j).norm())).collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1));
    let mut u = DMatrix::zeros(m.nrows(), n);
    let mut vs = DMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (k, &(j, s)) in order.iter().enumerate() {
        if s > 0.0 {
            u.set_column(k, &(a.column(j) / s));
        }
        vs.set_column(k, &v.column(j));
        sigma.push(s);
    }
    Ok((u, sigma, vs))
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * x - s * y;
        m[(i, q)] = s * x + c * y;
    }
}

fn symmetric_eigen(m: &DMatrix<f64>) -> Result<nalgebra::SymmetricEigen<f64, nalgebra::Dyn>> {
    m.clone()
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITERS)
        .ok_or_else(|| Error::Numeric("symmetric eigendecomposition did not converge".into()))
}

/// Moore–Penrose pseudoinverse.
///
/// Exactly symmetric input goes through a symmetric eigendecomposition,
/// anything else through [`jacobi_svd`]. Singular values at or below
/// `max(rows, cols) · ε · σ_max` are treated as zero.
pub fn pseudoinverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(m, "pseudoinverse input")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let cutoff = |sigma_max: f64| rows.max(cols) as f64 * f64::EPSILON * sigma_max;
    if rows == cols && *m == m.transpose() {
        let eig = symmetric_eigen(m)?;
        let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, l| a.max(l.abs()));
        let cut = cutoff(lam_max);
        let mut scaled = eig.eigenvectors.clone();
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            scaled.column_mut(k).scale_mut(if l.abs() > cut { 1.0 / l } else { 0.0 });
        }
        let p = scaled * eig.eigenvectors.transpose();
        return Ok((&p + p.transpose()) * 0.5);
    }
    let (u, sigma, v) = jacobi_svd(m)?;
    let cut = cutoff(sigma.first().copied().unwrap_or(0.0));
    let mut v_scaled = v;
    for (k, &s) in sigma.iter().enumerate() {
        v_scaled.column_mut(k).scale_mut(if s > cut { 1.0 / s } else { 0.0 });
    }
    Ok(v_scaled * u.transpose())
}

/// Relative residuals of the four Penrose conditions for `x ≈ a⁺`:
/// `‖axa − a‖/‖a‖`, `‖xax − x‖/‖x‖`, `‖(ax)ᵀ − ax‖/‖ax‖`, `‖(xa)ᵀ − xa‖/‖xa‖`
/// (Frobenius norms, `0/0` read as `0`).
pub fn penrose_residuals(a: &DMatrix<f64>, x: &DMatrix<f64>) -> [f64; 4] {
    let rel = |num: f64, den: f64| if den == 0.0 { num } else { num / den };
    let ax = a * x;
    let xa = x * a;
    [
        rel((&ax * a - a).norm(), a.norm()),
        rel((&xa * x - x).norm(), x.norm()),
        rel((ax.transpose() - &ax).norm(), ax.norm()),
        rel((xa.transpose() - &xa).norm(), xa.norm()),
    ]
}

/// Largest singular value, from the top eigenvalue of the smaller Gram matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m, "spectral norm input")?;
    if m.is_empty() {
        return Ok(0.0);
    }
    let gram = if m.nrows() < m.ncols() { m * m.transpose() } else { m.transpose() * m };
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = symmetric_eigen(&gram)?;
    Ok(eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l)).sqrt())
}

/// Top right singular vector (unit norm) together with σ_max.
pub fn top_right_singular_vector(m: &DMatrix<f64>) -> Result<(f64, nalgebra::DVector<f64>)> {
    check_finite(m, "singular vector input")?;
    if m.is_empty() {
        return Err(Error::Numeric("empty matrix".into()));
    }
    let gram = m.transpose() * m;
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = symmetric_eigen(&gram)?;
    let (k, &l) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty");
    Ok((l.max(0.0).sqrt(), eig.eigenvectors.column(k).into_owned()))
}

/// Row-compressed sparse square matrix.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = m
            .row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self { n: m.nrows(), rows }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `self · x` for a dense `x` with `n` rows.
    pub fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.n, "sparse product shape mismatch");
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            let src = x.column(c);
            let mut dst = out.column_mut(c);
            for (i, row) in self.rows.iter().enumerate() {
                dst[i] = row.iter().map(|&(j, v)| v * src[j]).sum();
            }
        }
        out
    }
}

/// Rectangular matrix of uniform samples in `±bound`.
pub fn uniform_matrix<R: rand::Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}
