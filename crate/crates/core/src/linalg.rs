//! Small dense helpers: per-node `(d+1) x (d+1)` solves and the symmetric
//! generalized inverse of the reduced system.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Inverse of a symmetric positive definite `p x p` matrix (row-major) by
/// Cholesky. `None` if a pivot is not positive.
pub fn spd_inverse(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; p * p];
    let mut work = vec![0.0; 2 * p * p];
    spd_inverse_into(a, p, &mut inv, &mut work).then_some(inv)
}

/// [`spd_inverse`] writing into `out`, with `work` of length `2 p^2`.
/// Returns `false` (leaving `out` unspecified) if a pivot is not positive.
pub fn spd_inverse_into(a: &[f64], p: usize, out: &mut [f64], work: &mut [f64]) -> bool {
    let (l, linv) = work.split_at_mut(p * p);
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i * p + j];
            for k in 0..j {
                sum -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return false;
                }
                l[i * p + i] = sum.sqrt();
            } else {
                l[i * p + j] = sum / l[j * p + j];
            }
        }
    }
    // invert L, then form L^-T L^-1
    for i in 0..p {
        linv[i * p + i] = 1.0 / l[i * p + i];
        for j in 0..i {
            let mut sum = 0.0;
            for k in j..i {
                sum -= l[i * p + k] * linv[k * p + j];
            }
            linv[i * p + j] = sum / l[i * p + i];
        }
    }
    for i in 0..p {
        for j in 0..=i {
            let mut sum = 0.0;
            for k in i..p {
                sum += linv[k * p + i] * linv[k * p + j];
            }
            out[i * p + j] = sum;
            out[j * p + i] = sum;
        }
    }
    true
}

/// Moore-Penrose inverse of a small symmetric PSD matrix, dropping
/// eigenvalues below `cutoff * λ_max`.
pub fn sym_pinv(a: &[f64], p: usize, cutoff: f64) -> Vec<f64> {
    let lmax = sym_max_eigenvalue(a, p);
    if lmax <= 0.0 {
        return vec![0.0; p * p];
    }
    pinv_above(a, p, cutoff * lmax)
}

fn pinv_above(a: &[f64], p: usize, floor: f64) -> Vec<f64> {
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(p, p, a));
    let mut out = vec![0.0; p * p];
    for (e, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= floor {
            continue;
        }
        let v = eig.eigenvectors.column(e);
        for i in 0..p {
            for j in 0..p {
                out[i * p + j] += v[i] * v[j] / lam;
            }
        }
    }
    out
}

/// Generalized inverse of a local moment matrix `[[s00, bᵀ], [b, C]]` that
/// returns, among all solutions of `S β = L`, the one with the smallest
/// slopes. Equals `S⁻¹` when `S` is nonsingular; on a rank-deficient node the
/// unidentified slopes are zero, so a constant response is reproduced. Zero
/// when `s00 <= cutoff * λ_max`.
pub fn local_pinv(a: &[f64], p: usize, cutoff: f64) -> Vec<f64> {
    let lmax = sym_max_eigenvalue(a, p);
    let s00 = a[0];
    let mut out = vec![0.0; p * p];
    if lmax <= 0.0 || s00 <= cutoff * lmax {
        return out;
    }
    let q = p - 1;
    let b: Vec<f64> = (1..p).map(|i| a[i * p]).collect();
    let mut schur = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            schur[i * q + j] = a[(i + 1) * p + j + 1] - b[i] * b[j] / s00;
        }
    }
    let pinv = pinv_above(&schur, q, cutoff * lmax);
    let mut pb = vec![0.0; q];
    mat_vec(&pinv, &b, &mut pb);
    let bpb: f64 = b.iter().zip(&pb).map(|(x, y)| x * y).sum();
    out[0] = 1.0 / s00 + bpb / (s00 * s00);
    for i in 0..q {
        out[i + 1] = -pb[i] / s00;
        out[(i + 1) * p] = -pb[i] / s00;
        for j in 0..q {
            out[(i + 1) * p + j + 1] = pinv[i * q + j];
        }
    }
    out
}

pub fn sym_max_eigenvalue(a: &[f64], p: usize) -> f64 {
    let m = DMatrix::from_row_slice(p, p, a);
    m.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max)
}

/// `y = A x` for a row-major `p x p` block.
#[inline]
pub fn mat_vec(a: &[f64], x: &[f64], y: &mut [f64]) {
    let p = x.len();
    for i in 0..p {
        y[i] = (0..p).map(|k| a[i * p + k] * x[k]).sum();
    }
}

/// `C = A B` for row-major `p x p` blocks.
pub fn mat_mul(a: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * p];
    for i in 0..p {
        for k in 0..p {
            let aik = a[i * p + k];
            for j in 0..p {
                c[i * p + j] += aik * b[k * p + j];
            }
        }
    }
    c
}

/// Factorization of the symmetric reduced system.
///
/// Cholesky is used when the matrix is safely positive definite; otherwise
/// an eigendecomposition pseudo-inverse.
#[derive(Debug, Clone)]
pub enum SymFactor {
    Cholesky(Cholesky<f64, nalgebra::Dyn>),
    Eigen {
        vectors: DMatrix<f64>,
        inv_values: DVector<f64>,
        rank: usize,
    },
}

impl SymFactor {
    pub fn new(a: DMatrix<f64>, cutoff: f64) -> Result<Self> {
        let n = a.nrows();
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
        if max_diag > 0.0 {
            if let Some(ch) = Cholesky::new(a.clone()) {
                let l = ch.l_dirty();
                let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
                if min_pivot >= cutoff.sqrt() * max_diag {
                    return Ok(SymFactor::Cholesky(ch));
                }
            }
        }
        let eig = SymmetricEigen::new(a);
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if lmax <= 0.0 || lmin < -cutoff.sqrt() * lmax {
            return Err(Error::DegenerateFit {
                eigenvalue: lmin,
                largest: lmax,
            });
        }
        let mut rank = 0;
        let inv_values = eig.eigenvalues.map(|lam| {
            if lam > cutoff * lmax {
                rank += 1;
                1.0 / lam
            } else {
                0.0
            }
        });
        Ok(SymFactor::Eigen {
            vectors: eig.eigenvectors,
            inv_values,
            rank,
        })
    }

    pub fn is_cholesky(&self) -> bool {
        matches!(self, SymFactor::Cholesky(_))
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(b);
        match self {
            SymFactor::Cholesky(ch) => ch.solve(&b).as_slice().to_vec(),
            SymFactor::Eigen {
                vectors,
                inv_values,
                ..
            } => {
                let coeff = vectors.tr_mul(&b).component_mul(inv_values);
                (vectors * coeff).as_slice().to_vec()
            }
        }
    }

    /// Explicit (generalized) inverse.
    pub fn inverse(&self) -> DMatrix<f64> {
        match self {
            SymFactor::Cholesky(ch) => {
                // L^-T L^-1, with L^-1 built column by column from the rows of L
                let n = ch.l_dirty().nrows();
                let lt = ch.l().transpose();
                let lt = lt.as_slice();
                let mut li = DMatrix::<f64>::zeros(n, n);
                let buf = li.as_mut_slice();
                for j in 0..n {
                    buf[j * n + j] = 1.0 / lt[j * n + j];
                    for i in j + 1..n {
                        let s: f64 = lt[i * n + j..i * n + i]
                            .iter()
                            .zip(&buf[j * n + j..j * n + i])
                            .map(|(x, y)| x * y)
                            .sum();
                        buf[j * n + i] = -s / lt[i * n + i];
                    }
                }
                li.transpose() * li
            }
            SymFactor::Eigen {
                vectors,
                inv_values,
                ..
            } => {
                let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
                    vectors[(i, j)] * inv_values[j]
                });
                scaled * vectors.transpose()
            }
        }
    }
}
