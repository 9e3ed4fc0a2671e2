//! Spectral machinery on the normalized Laplacian: Chebyshev recurrences,
//! Bessel-series coefficients, multi-scale wavelet bases with their
//! pseudoinverses, and the orthonormal cosine transform used by pooling.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pseudoinverse, SparseMatrix};

/// Largest |x| accepted by [`bessel_j`].
pub const BESSEL_WINDOW: f64 = 50.0;

/// How wavelet expansion coefficients are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    /// `c_i = 2 e^{-f} J_i(-f)`.
    ClosedForm,
    /// Chebyshev coefficients of the low-pass heat kernel `e^{-fλ}`.
    FittedKernel,
}

impl BasisMode {
    fn code(self) -> u64 {
        match self {
            BasisMode::ClosedForm => 0,
            BasisMode::FittedKernel => 1,
        }
    }

    fn from_code(c: u64) -> Result<Self> {
        match c {
            0 => Ok(BasisMode::ClosedForm),
            1 => Ok(BasisMode::FittedKernel),
            _ => Err(Error::contract(format!("unknown basis mode code {c}"))),
        }
    }
}

/// Wavelet operator at one scale together with its pseudoinverse.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    pub scale: f64,
    pub order: usize,
    pub coefficients: Vec<f64>,
    pub psi: DMatrix<f64>,
    pub psi_pinv: DMatrix<f64>,
    pub mode: BasisMode,
}

/// Orthogonal n×n transform ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTransform {
    pub matrix: DMatrix<f64>,
}

impl SpectralTransform {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::contract(format!("{what} must be square, got {:?}", m.shape())));
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if m[(i, j)] != m[(j, i)] {
                return Err(Error::contract(format!("{what} is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// `L = I − D^{-1/2} A D^{-1/2}`; rows and columns of isolated nodes are zero.
pub fn normalized_laplacian(adjacency: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(adjacency, "adjacency")?;
    let n = adjacency.nrows();
    let inv_sqrt: Vec<f64> = adjacency
        .row_iter()
        .map(|r| {
            let d: f64 = r.sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j && inv_sqrt[i] > 0.0 { 1.0 } else { 0.0 };
        diag - inv_sqrt[i] * adjacency[(i, j)] * inv_sqrt[j]
    }))
}

/// `L − I`: the Laplacian spectrum `[0, 2]` mapped onto `[-1, 1]`. Isolated
/// nodes (zero rows of `L`) sit at `-1`, i.e. `λ = 0`.
fn shifted_laplacian(laplacian: &DMatrix<f64>) -> DMatrix<f64> {
    laplacian - DMatrix::identity(laplacian.nrows(), laplacian.ncols())
}

/// Scalar Chebyshev polynomial `T_i(x)` by the three-term recurrence.
pub fn chebyshev_t(order: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if order == 0 {
        return prev;
    }
    for _ in 1..order {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `[T_0(L)v, …, T_M(L)v]` for a matrix `l_scaled` whose spectrum lies in
/// `[-1, 1]`. Pass the identity as `v` to get the polynomials themselves.
pub fn chebyshev_apply(l_scaled: &DMatrix<f64>, order: usize, v: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    if l_scaled.nrows() != l_scaled.ncols() || v.nrows() != l_scaled.nrows() {
        return Err(Error::contract(format!(
            "chebyshev_apply shapes: operator {:?}, vector {:?}",
            l_scaled.shape(),
            v.shape()
        )));
    }
    let mut out = Vec::with_capacity(order + 1);
    out.push(v.clone());
    if order >= 1 {
        out.push(l_scaled * v);
    }
    for i in 2..=order {
        let next = (l_scaled * &out[i - 1]) * 2.0 - &out[i - 2];
        out.push(next);
    }
    Ok(out)
}

/// Double-double arithmetic for the Bessel series, whose alternating terms
/// grow to ~1e19 before cancelling near |x| = 50.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn new(v: f64) -> Self {
        Self { hi: v, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Self { hi: s, lo: err }
    }

    fn quick_two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        Self { hi: s, lo: b - (s - a) }
    }

    fn two_prod(a: f64, b: f64) -> Self {
        let p = a * b;
        Self {
            hi: p,
            lo: a.mul_add(b, -p),
        }
    }

    fn add(self, o: Self) -> Self {
        let s = Self::two_sum(self.hi, o.hi);
        let t = Self::two_sum(self.lo, o.lo);
        let v = Self::quick_two_sum(s.hi, s.lo + t.hi);
        Self::quick_two_sum(v.hi, v.lo + t.lo)
    }

    fn mul(self, o: Self) -> Self {
        let p = Self::two_prod(self.hi, o.hi);
        Self::quick_two_sum(p.hi, p.lo + (self.hi * o.lo + self.lo * o.hi))
    }

    fn div_f64(self, d: f64) -> Self {
        let q1 = self.hi / d;
        let r = self.add(Self::two_prod(q1, d).neg());
        let q2 = r.hi / d;
        Self::quick_two_sum(q1, q2)
    }

    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

/// Bessel function of the first kind `J_i(x)` from its power series
/// `Σ (−1)^k (x/2)^{2k+i} / (k!(k+i)!)`, summed in double-double precision
/// and truncated once the next term falls below `1e-16` relative to the
/// running sum (absolute once the sum exceeds one).
pub fn bessel_j(order: u32, x: f64) -> Result<f64> {
    if !x.is_finite() || x.abs() > BESSEL_WINDOW {
        return Err(Error::Domain(format!("bessel_j: |x| = {} outside [0, {BESSEL_WINDOW}]", x.abs())));
    }
    let half = x / 2.0;
    // (x/2)^i / i!
    let mut term = Dd::new(1.0);
    for k in 1..=order {
        term = term.mul(Dd::new(half)).div_f64(k as f64);
    }
    let q = Dd::two_prod(half, half).neg();
    let mut sum = term;
    for k in 1..2000u32 {
        term = term.mul(q).div_f64(k as f64 * (k + order) as f64);
        let mag = term.hi.abs();
        sum = sum.add(term);
        // terms shrink monotonically once k(k+i) exceeds (x/2)²
        let past_peak = (k as f64) * ((k + order) as f64) > half * half;
        if past_peak && (mag == 0.0 || mag < 1e-16 * sum.hi.abs().min(1.0)) {
            break;
        }
    }
    Ok(sum.hi + sum.lo)
}

/// Expansion coefficients `c_0..c_M` for the wavelet at scale `f`.
///
/// `FittedKernel` returns Chebyshev coefficients of `g(x) = e^{-f(x+1)}` on
/// `[-1, 1]` from Chebyshev–Gauss quadrature with `4(M+1)` nodes, scaled so
/// that `g ≈ ½c_0 + Σ c_i T_i`.
pub fn wavelet_coefficients(scale: f64, order: usize, mode: BasisMode) -> Result<Vec<f64>> {
    if !(scale >= 0.0) || !scale.is_finite() {
        return Err(Error::contract(format!("wavelet scale must be >= 0, got {scale}")));
    }
    if order < 1 {
        return Err(Error::contract("Chebyshev order must be >= 1"));
    }
    match mode {
        BasisMode::ClosedForm => (0..=order)
            .map(|i| Ok(2.0 * (-scale).exp() * bessel_j(i as u32, -scale)?))
            .collect(),
        BasisMode::FittedKernel => {
            let nodes = 4 * (order + 1);
            let thetas: Vec<f64> = (0..nodes).map(|k| PI * (k as f64 + 0.5) / nodes as f64).collect();
            let g: Vec<f64> = thetas.iter().map(|t| (-scale * (t.cos() + 1.0)).exp()).collect();
            Ok((0..=order)
                .map(|i| {
                    let s: f64 = thetas.iter().zip(&g).map(|(t, gv)| gv * (i as f64 * t).cos()).sum();
                    2.0 * s / nodes as f64
                })
                .collect())
        }
    }
}

/// `Ψ_f = ½c_0 I + Σ_{i≥1} c_i T_i(L − I)` with its pseudoinverse.
pub fn wavelet_basis(laplacian: &DMatrix<f64>, scale: f64, order: usize, mode: BasisMode) -> Result<WaveletBasis> {
    let psi = wavelet_matrix(laplacian, scale, order, mode)?;
    let psi_pinv = pseudoinverse(&psi)?;
    Ok(WaveletBasis {
        scale,
        order,
        coefficients: wavelet_coefficients(scale, order, mode)?,
        psi,
        psi_pinv,
        mode,
    })
}

/// The Ψ_f matrix alone (no pseudoinverse).
pub fn wavelet_matrix(laplacian: &DMatrix<f64>, scale: f64, order: usize, mode: BasisMode) -> Result<DMatrix<f64>> {
    check_symmetric(laplacian, "Laplacian")?;
    let c = wavelet_coefficients(scale, order, mode)?;
    let n = laplacian.nrows();
    let shifted = shifted_laplacian(laplacian);
    let sparse = SparseMatrix::from_dense(&shifted);
    let dense = sparse.nnz() * 8 > n * n;
    let apply = |x: &DMatrix<f64>| if dense { &shifted * x } else { sparse.mul_dense(x) };
    let mut prev = DMatrix::<f64>::identity(n, n);
    let mut cur = apply(&prev);
    let mut psi = &prev * (0.5 * c[0]) + &cur * c[1];
    for &ci in &c[2..] {
        let mut next = apply(&cur);
        next *= 2.0;
        next -= &prev;
        psi += &next * ci;
        prev = cur;
        cur = next;
    }
    // the recurrence rounds asymmetrically; Ψ is a polynomial in a symmetric matrix
    let sym = (&psi + psi.transpose()) * 0.5;
    Ok(sym)
}

/// `U diag(g(f·λ)) Uᵀ` from a full symmetric eigendecomposition.
pub fn exact_wavelet_oracle(laplacian: &DMatrix<f64>, scale: f64, kernel: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    check_symmetric(laplacian, "Laplacian")?;
    if laplacian.nrows() > 500 {
        return Err(Error::contract("exact wavelet oracle limited to n <= 500"));
    }
    let eig = laplacian
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("eigendecomposition did not converge".into()))?;
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        scaled.column_mut(k).scale_mut(kernel(scale * lam));
    }
    Ok(scaled * u.transpose())
}

/// Orthonormal DCT-II matrix `ξ[k, j] = α_k cos(π(2j+1)k / 2n)`.
pub fn cosine_transform(n: usize) -> Result<SpectralTransform> {
    if n == 0 {
        return Err(Error::contract("cosine transform size must be >= 1"));
    }
    let nf = n as f64;
    let matrix = DMatrix::from_fn(n, n, |k, j| {
        let alpha = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        alpha * (PI * (2 * j + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    });
    Ok(SpectralTransform { matrix })
}

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64s(w: &mut impl Write, vals: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for v in vals {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

impl WaveletBasis {
    /// Little-endian dump: header `n, M` (u64), `f` (f64), mode code (u64),
    /// then `M+1` coefficients, Ψ and Ψ⁺ row-major, all 64-bit floats.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_u64(w, self.psi.nrows() as u64)?;
        write_u64(w, self.order as u64)?;
        w.write_all(&self.scale.to_le_bytes())?;
        write_u64(w, self.mode.code())?;
        write_f64s(w, self.coefficients.iter().copied())?;
        write_f64s(w, row_major(&self.psi))?;
        write_f64s(w, row_major(&self.psi_pinv))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e| Error::Numeric(format!("wavelet basis dump truncated: {e}"));
        let n = read_u64(r).map_err(io)? as usize;
        let order = read_u64(r).map_err(io)? as usize;
        let scale = read_f64(r).map_err(io)?;
        let mode = BasisMode::from_code(read_u64(r).map_err(io)?)?;
        let coefficients = (0..=order).map(|_| read_f64(r)).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
        let mut read_mat = || -> std::io::Result<DMatrix<f64>> {
            let vals = (0..n * n).map(|_| read_f64(r)).collect::<std::io::Result<Vec<_>>>()?;
            Ok(DMatrix::from_row_slice(n, n, &vals))
        };
        let psi = read_mat().map_err(io)?;
        let psi_pinv = read_mat().map_err(io)?;
        Ok(Self {
            scale,
            order,
            coefficients,
            psi,
            psi_pinv,
            mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    fn triangle() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0])
    }

    /// Plain 30-term series, independent of the double-double path.
    fn bessel_series_oracle(order: u32, x: f64) -> f64 {
        let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
        (0..30u32)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * (x / 2.0).powi((2 * k + order) as i32) / (fact(k) * fact(k + order))
            })
            .sum()
    }

    #[test]
    fn laplacian_examples() {
        let l = normalized_laplacian(&path2()).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let t = normalized_laplacian(&triangle()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { -0.5 };
                assert!((t[(i, j)] - want).abs() < 1e-15);
            }
        }
        assert_eq!(normalized_laplacian(&DMatrix::zeros(1, 1)).unwrap(), DMatrix::zeros(1, 1));
        let mut bad = path2();
        bad[(1, 0)] = 0.0;
        assert!(matches!(normalized_laplacian(&bad), Err(Error::Contract(_))));
    }

    #[test]
    fn chebyshev_examples() {
        assert!((chebyshev_t(2, 0.5) + 0.5).abs() < 1e-15);
        for i in 0..20 {
            assert_eq!(chebyshev_t(i, 1.0), 1.0);
        }
        let z = DMatrix::<f64>::zeros(3, 3);
        let ts = chebyshev_apply(&z, 2, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!(ts[2], -DMatrix::<f64>::identity(3, 3));
        let scalar = chebyshev_apply(&DMatrix::from_element(1, 1, 0.5), 2, &DMatrix::identity(1, 1)).unwrap();
        assert!((scalar[2][(0, 0)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn bessel_examples() {
        assert_eq!(bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(1, 0.0).unwrap(), 0.0);
        let j01 = bessel_j(0, 1.0).unwrap();
        assert!((j01 - bessel_series_oracle(0, 1.0)).abs() < 1e-15);
        assert!((j01 - 0.7651976866).abs() < 1e-10);
        assert!(matches!(bessel_j(0, 50.5), Err(Error::Domain(_))));
    }

    #[test]
    fn bessel_matches_series_oracle_small_x() {
        for order in 0..8 {
            for &x in &[0.1, 0.5, 1.0, 2.0, 3.5, -2.7] {
                let got = bessel_j(order, x).unwrap();
                assert!((got - bessel_series_oracle(order, x)).abs() < 1e-14, "J_{order}({x})");
            }
        }
    }

    #[test]
    fn bessel_large_argument_reference() {
        // scipy.special.jv reference values
        let cases = [
            (0, 10.0, -0.245_935_764_451_348_3),
            (1, 20.0, 0.066_833_124_175_849_93),
            (0, 50.0, 0.055_812_327_669_251_8),
            (3, -45.0, 0.038_531_851_851_078_71),
        ];
        for (order, x, want) in cases {
            let got = bessel_j(order, x).unwrap();
            assert!((got - want).abs() < 1e-11, "J_{order}({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn bessel_parity_exact() {
        for i in 0..=10u32 {
            for k in 0..=50 {
                let x = k as f64 * 0.1;
                let a = bessel_j(i, -x).unwrap();
                let b = if i % 2 == 0 { 1.0 } else { -1.0 } * bessel_j(i, x).unwrap();
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn closed_form_coefficients() {
        let c0 = wavelet_coefficients(0.0, 5, BasisMode::ClosedForm).unwrap();
        assert_eq!(c0[0], 2.0);
        assert!(c0[1..].iter().all(|&c| c == 0.0));
        let c1 = wavelet_coefficients(1.0, 5, BasisMode::ClosedForm).unwrap();
        let want = 2.0 * (-1.0f64).exp() * bessel_series_oracle(0, -1.0);
        assert!((c1[0] - want).abs() < 1e-15);
        assert!((c1[0] - 0.563_000_994_633_250_5).abs() < 1e-12);
    }

    #[test]
    fn closed_form_coefficients_decay() {
        for &f in &[0.5, 1.0, 2.0] {
            let c = wavelet_coefficients(f, 30, BasisMode::ClosedForm).unwrap();
            let start = (f + 2.0).ceil() as usize;
            for i in start..30 {
                assert!(c[i + 1].abs() <= c[i].abs(), "f={f} i={i}");
            }
        }
    }

    #[test]
    fn fitted_zero_scale_is_identity() {
        let l = normalized_laplacian(&triangle()).unwrap();
        let b = wavelet_basis(&l, 0.0, 10, BasisMode::FittedKernel).unwrap();
        assert!((b.psi - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn two_node_fitted_matches_oracle() {
        let l = normalized_laplacian(&path2()).unwrap();
        let b = wavelet_basis(&l, 1.0, 40, BasisMode::FittedKernel).unwrap();
        let e = (-2.0f64).exp();
        let want = DMatrix::from_row_slice(2, 2, &[(1.0 + e) / 2.0, (1.0 - e) / 2.0, (1.0 - e) / 2.0, (1.0 + e) / 2.0]);
        assert!((&b.psi - &want).abs().max() < 1e-6);
        assert!((b.psi[(0, 0)] - 0.5677).abs() < 1e-4);
        let oracle = exact_wavelet_oracle(&l, 1.0, |x| (-x).exp()).unwrap();
        assert!((oracle - want).abs().max() < 1e-14);
    }

    #[test]
    fn oracle_identity_cases() {
        let l = normalized_laplacian(&triangle()).unwrap();
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((exact_wavelet_oracle(&l, 0.0, |x| (-x).exp()).unwrap() - &id).norm() < 1e-14);
        assert!((exact_wavelet_oracle(&l, 3.0, |_| 1.0).unwrap() - &id).norm() < 1e-14);
    }

    #[test]
    fn isolated_node_is_fixed_point() {
        let mut a = DMatrix::zeros(3, 3);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = 1.0;
        let l = normalized_laplacian(&a).unwrap();
        let psi = wavelet_matrix(&l, 1.0, 30, BasisMode::FittedKernel).unwrap();
        // node 2 has λ = 0 under the zero-row convention, so Ψ keeps it
        assert!((psi[(2, 2)] - 1.0).abs() < 1e-10);
        assert_eq!(psi[(2, 0)], 0.0);
    }

    #[test]
    fn cosine_transform_examples() {
        assert_eq!(cosine_transform(1).unwrap().matrix, DMatrix::from_element(1, 1, 1.0));
        let x = cosine_transform(2).unwrap().matrix;
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((x - DMatrix::from_row_slice(2, 2, &[r, r, r, -r])).abs().max() < 1e-15);
        for n in [3, 7, 64] {
            let xi = cosine_transform(n).unwrap().matrix;
            assert!((&xi * xi.transpose() - DMatrix::<f64>::identity(n, n)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn basis_dump_round_trips() {
        let l = normalized_laplacian(&triangle()).unwrap();
        let b = wavelet_basis(&l, 0.7, 6, BasisMode::ClosedForm).unwrap();
        let mut buf = Vec::new();
        b.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 * (4 + 7 + 2 * 9));
        assert_eq!(WaveletBasis::read_from(&mut buf.as_slice()).unwrap(), b);
        assert!(WaveletBasis::read_from(&mut &buf[..20]).is_err());
    }
}
