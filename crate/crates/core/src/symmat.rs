//! Symmetric matrices stored as a packed upper triangle.
//!
//! Entries are packed row by row: `(0,0), (0,1), .., (0,n-1), (1,1), .., (n-1,n-1)`.
//! The packed vector doubles as the lifted LP variable vector, so a point of
//! the relaxation and the matrix it represents share one buffer layout.

use crate::error::{Error, Result};

/// Relative tolerance used when no explicit eigenvalue tolerance is given.
pub const DEFAULT_EIG_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

/// Length of the packed upper triangle of an `n x n` matrix.
pub const fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed position of entry `(i, j)`; the order of `i` and `j` does not matter.
#[inline]
pub fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    debug_assert!(j < n);
    i * (2 * n - i + 1) / 2 + (j - i)
}

/// Inverse of [`packed_index`]: the `(i, j)` pair with `i <= j` stored at `pos`.
pub fn packed_entry(n: usize, pos: usize) -> (usize, usize) {
    let mut start = 0;
    for i in 0..n {
        let row_len = n - i;
        if pos < start + row_len {
            return (i, i + pos - start);
        }
        start += row_len;
    }
    panic!("packed position {pos} out of range for dimension {n}");
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; packed_len(dim)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Wraps a packed upper triangle.
    pub fn from_packed(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != packed_len(dim) {
            return Err(Error::DimensionMismatch {
                expected: packed_len(dim),
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    /// Builds from dense rows, reading only the upper triangle.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for j in i..n {
                m.set(i, j, row[j]);
            }
        }
        Ok(m)
    }

    /// `v v^T`.
    pub fn outer(v: &[f64]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n);
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                m.data[k] = v[i] * v[j];
                k += 1;
            }
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn into_packed(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = packed_index(self.dim, i, j);
        self.data[k] = v;
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Weight of each packed entry in the Frobenius inner product: 1 on the
    /// diagonal, 2 off it.
    pub fn packed_weights(dim: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(packed_len(dim));
        for i in 0..dim {
            for j in i..dim {
                w.push(if i == j { 1.0 } else { 2.0 });
            }
        }
        w
    }

    /// Coefficients `c` with `<self, X> = c . packed(X)` for every `X`.
    pub fn inner_coeffs(&self) -> Vec<f64> {
        let mut c = self.data.clone();
        let mut k = 0;
        for i in 0..self.dim {
            for j in i..self.dim {
                if i != j {
                    c[k] *= 2.0;
                }
                k += 1;
            }
        }
        c
    }

    pub fn frobenius_inner(&self, other: &SymMatrix) -> Result<f64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(self.inner_unchecked(other))
    }

    pub(crate) fn inner_unchecked(&self, other: &SymMatrix) -> f64 {
        let mut s = 0.0;
        let mut k = 0;
        for i in 0..self.dim {
            s += self.data[k] * other.data[k];
            k += 1;
            for _ in (i + 1)..self.dim {
                s += 2.0 * self.data[k] * other.data[k];
                k += 1;
            }
        }
        s
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner_unchecked(self).max(0.0).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &SymMatrix) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        self.axpy(-1.0, other)
    }

    /// `(X_ii, X_ij, X_jj)` of the principal submatrix on `{i, j}`.
    #[inline]
    pub fn principal_2x2(&self, i: usize, j: usize) -> [f64; 3] {
        [self.get(i, i), self.get(i, j), self.get(j, j)]
    }

    /// `v^T X v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for i in 0..n {
            s += self.get(i, i) * v[i] * v[i];
            for j in (i + 1)..n {
                s += 2.0 * self.get(i, j) * v[i] * v[j];
            }
        }
        s
    }
}

/// Eigenpairs sorted by eigenvalue, largest first.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[k]` pairs with `eigenvalues[k]`.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl SpectralDecomposition {
    /// `sum_k w(k) lambda_k d_k d_k^T` over the eigenpairs selected by `keep`.
    pub fn partial_sum(&self, keep: impl Fn(usize, f64) -> bool) -> SymMatrix {
        let n = self.eigenvalues.len();
        let mut m = SymMatrix::zeros(n);
        for (k, (&lam, d)) in self.eigenvalues.iter().zip(&self.eigenvectors).enumerate() {
            if !keep(k, lam) {
                continue;
            }
            let mut p = 0;
            for i in 0..n {
                for j in i..n {
                    m.data[p] += lam * d[i] * d[j];
                    p += 1;
                }
            }
        }
        m
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.partial_sum(|_, _| true)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Sweeps visit pairs `(p, q)` in row order until the off-diagonal mass drops
/// below machine precision relative to the Frobenius norm. Each eigenvector is
/// signed so that its first component with magnitude above `1e-10` is positive.
pub fn spectral_decompose(x: &SymMatrix) -> Result<SpectralDecomposition> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    let n = x.dim();
    let mut a = x.to_dense();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let norm = x.frobenius_norm();
    let target = f64::EPSILON * norm.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&k| a[k][k]).collect();
    let eigenvectors = order
        .iter()
        .map(|&k| {
            let mut d: Vec<f64> = (0..n).map(|i| v[i][k]).collect();
            if let Some(first) = d.iter().find(|c| c.abs() > 1e-10) {
                if *first < 0.0 {
                    d.iter_mut().for_each(|c| *c = -*c);
                }
            }
            d
        })
        .collect();
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefinitenessClass {
    Zero,
    PositiveDefinite,
    PositiveSemidefinite,
    NegativeDefinite,
    NegativeSemidefinite,
    Indefinite,
}

impl DefinitenessClass {
    pub fn is_psd(self) -> bool {
        matches!(
            self,
            Self::Zero | Self::PositiveDefinite | Self::PositiveSemidefinite
        )
    }

    pub fn is_nsd(self) -> bool {
        matches!(
            self,
            Self::Zero | Self::NegativeDefinite | Self::NegativeSemidefinite
        )
    }
}

/// Classifies from eigenvalue signs; values with `|lambda| <= tol` count as zero.
pub fn classify_eigenvalues(eigenvalues: &[f64], tol: f64) -> DefinitenessClass {
    let pos = eigenvalues.iter().filter(|&&l| l > tol).count();
    let neg = eigenvalues.iter().filter(|&&l| l < -tol).count();
    let zero = eigenvalues.len() - pos - neg;
    match (pos, neg, zero) {
        (0, 0, _) => DefinitenessClass::Zero,
        (_, 0, 0) => DefinitenessClass::PositiveDefinite,
        (_, 0, _) => DefinitenessClass::PositiveSemidefinite,
        (0, _, 0) => DefinitenessClass::NegativeDefinite,
        (0, _, _) => DefinitenessClass::NegativeSemidefinite,
        _ => DefinitenessClass::Indefinite,
    }
}

pub fn classify(x: &SymMatrix, tol: f64) -> Result<DefinitenessClass> {
    let eig = spectral_decompose(x)?;
    Ok(classify_eigenvalues(&eig.eigenvalues, tol))
}

/// Default eigenvalue tolerance for `x`: `1e-9 * max(1, ||x||_F)`.
pub fn default_tol(x: &SymMatrix) -> f64 {
    DEFAULT_EIG_TOL * x.frobenius_norm().max(1.0)
}

/// Whether `x` equals `s s^T` for some vector `s`, up to `tol`.
///
/// Requires the smallest eigenvalue to be at least `-tol * max(1, ||x||_F)`
/// and every 2x2 principal minor to be at most `tol * max(1, ||x||_F^2)` in
/// magnitude. The zero matrix qualifies.
pub fn is_outer_product(x: &SymMatrix, tol: f64) -> Result<bool> {
    let n = x.dim();
    let fro = x.frobenius_norm();
    let minor_tol = tol * (fro * fro).max(1.0);
    for i in 0..n {
        if x.get(i, i) < -tol * fro.max(1.0) {
            return Ok(false);
        }
        for j in (i + 1)..n {
            let [a, b, c] = x.principal_2x2(i, j);
            if (a * c - b * b).abs() > minor_tol {
                return Ok(false);
            }
        }
    }
    let eig = spectral_decompose(x)?;
    Ok(eig.min_eigenvalue() >= -tol * fro.max(1.0))
}

/// Smallest eigenvalue of `[[a, b], [b, c]]`.
#[inline]
pub fn min_eig_2x2(a: f64, b: f64, c: f64) -> f64 {
    let half_tr = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    half_tr - r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_trace_product(a: &SymMatrix, b: &SymMatrix) -> f64 {
        let (a, b) = (a.to_dense(), b.to_dense());
        let n = a.len();
        let mut s = 0.0;
        for i in 0..n {
            for k in 0..n {
                s += a[i][k] * b[k][i];
            }
        }
        s
    }

    #[test]
    fn packed_layout_is_row_major_upper() {
        let n = 4;
        let mut expected = 0;
        for i in 0..n {
            for j in i..n {
                assert_eq!(packed_index(n, i, j), expected);
                assert_eq!(packed_index(n, j, i), expected);
                assert_eq!(packed_entry(n, expected), (i, j));
                expected += 1;
            }
        }
        assert_eq!(expected, packed_len(n));
    }

    #[test]
    fn symmetric_access() {
        let m = SymMatrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j).to_bits(), m.get(j, i).to_bits());
            }
        }
        assert_eq!(m.packed(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn frobenius_inner_examples() {
        let i2 = SymMatrix::identity(2);
        assert_eq!(i2.frobenius_inner(&i2).unwrap(), 2.0);

        let a = SymMatrix::from_rows(&[[1.0, 2.0], [2.0, 0.0]]).unwrap();
        let b = SymMatrix::from_rows(&[[0.0, 1.0], [1.0, 3.0]]).unwrap();
        assert_eq!(dense_trace_product(&a, &b), 4.0);
        assert_eq!(a.frobenius_inner(&b).unwrap(), 4.0);

        let d1 = SymMatrix::from_rows(&[[0.5, -0.5], [-0.5, 0.0]]).unwrap();
        assert_eq!(i2.frobenius_inner(&d1).unwrap(), 0.5);
    }

    #[test]
    fn frobenius_inner_dimension_mismatch() {
        let err = SymMatrix::identity(2)
            .frobenius_inner(&SymMatrix::identity(3))
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn inner_coeffs_match_inner_product() {
        let a = SymMatrix::from_rows(&[[1.0, -2.0, 0.5], [-2.0, 3.0, 4.0], [0.5, 4.0, -1.0]]).unwrap();
        let x = SymMatrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, -1.0, 7.0], [0.0, 7.0, 3.0]]).unwrap();
        let c = a.inner_coeffs();
        let dot: f64 = c.iter().zip(x.packed()).map(|(c, x)| c * x).sum();
        assert!((dot - a.frobenius_inner(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn spectral_identity_and_zero() {
        let eig = spectral_decompose(&SymMatrix::identity(2)).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0, 1.0]);
        let eig = spectral_decompose(&SymMatrix::zeros(3)).unwrap();
        assert!(eig.eigenvalues.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn spectral_rejects_non_finite() {
        let m = SymMatrix::diag(&[1.0, f64::NAN]);
        assert!(matches!(spectral_decompose(&m), Err(Error::NonFinite)));
    }

    #[test]
    fn spectral_sign_convention() {
        let m = SymMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let eig = spectral_decompose(&m).unwrap();
        assert!((eig.eigenvalues[0] - 1.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] + 1.0).abs() < 1e-14);
        for d in &eig.eigenvectors {
            assert!(d[0] > 0.0);
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(
            classify(&SymMatrix::identity(2), 1e-9).unwrap(),
            DefinitenessClass::PositiveDefinite
        );
        assert_eq!(
            classify(&SymMatrix::diag(&[1.0, -1.0]), 1e-9).unwrap(),
            DefinitenessClass::Indefinite
        );
        let ones = SymMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(
            classify(&ones, 1e-9).unwrap(),
            DefinitenessClass::PositiveSemidefinite
        );
        assert_eq!(classify(&SymMatrix::zeros(2), 1e-9).unwrap(), DefinitenessClass::Zero);
        assert_eq!(
            classify(&SymMatrix::diag(&[-1.0, 0.0]), 1e-9).unwrap(),
            DefinitenessClass::NegativeSemidefinite
        );
    }

    #[test]
    fn outer_product_examples() {
        assert!(is_outer_product(&SymMatrix::diag(&[2.0, 0.0]), 1e-9).unwrap());
        assert!(!is_outer_product(&SymMatrix::identity(2), 1e-9).unwrap());
        let m = SymMatrix::from_rows(&[[4.0, 6.0], [6.0, 9.0]]).unwrap();
        assert!(is_outer_product(&m, 1e-9).unwrap());
        assert!(is_outer_product(&SymMatrix::zeros(3), 1e-9).unwrap());
        // zero minors but not PSD
        let m = SymMatrix::from_rows(&[[1.0, 1.0, 1.0], [1.0, 1.0, -1.0], [1.0, -1.0, 1.0]]).unwrap();
        assert!(!is_outer_product(&m, 1e-9).unwrap());
        assert!(!is_outer_product(&SymMatrix::diag(&[-1.0, 0.0]), 1e-9).unwrap());
    }

    #[test]
    fn min_eig_2x2_matches_jacobi() {
        let m = SymMatrix::from_rows(&[[2.0, 1.0], [1.0, -3.0]]).unwrap();
        let eig = spectral_decompose(&m).unwrap();
        assert!((min_eig_2x2(2.0, 1.0, -3.0) - eig.min_eigenvalue()).abs() < 1e-12);
    }
}
