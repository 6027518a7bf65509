//! Top of the spectrum of dense symmetric matrices.
//!
//! Two kinds of question are asked of a Nyström matrix `M`. Its largest
//! eigenpairs come from a full dense solve for small matrices and from
//! Lanczos with full reorthogonalization above [`DENSE_LIMIT`]. Counting the
//! eigenvalues of `α·M` above one needs only a factorization of `I − α M`,
//! which is several times cheaper.

use faer::{Col, Mat, MatRef, Side};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest dimension handled by a full dense eigendecomposition.
pub const DENSE_LIMIT: usize = 1500;

/// Relative residual every returned eigenpair must meet.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EigenError {
    #[error("requested {wanted} eigenpairs of a {n}x{n} matrix")]
    TooMany { wanted: usize, n: usize },
    #[error("dense eigensolver failed to converge")]
    Dense,
    #[error("Lanczos did not converge after {iterations} iterations (worst residual {residual:e})")]
    Lanczos { iterations: usize, residual: f64 },
    #[error("eigenpair {index} has residual {residual:e}, above the {bound:e} contract")]
    Residual { index: usize, residual: f64, bound: f64 },
}

/// An eigenvalue with its unit eigenvector (Euclidean norm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Largest `count` eigenpairs of the symmetric matrix `m`, in descending
/// order, each with `‖Mv − ηv‖ ≤ 1e−10‖M‖`.
pub fn top_eigenpairs(m: MatRef<'_, f64>, count: usize) -> Result<Vec<EigenPair>, EigenError> {
    let n = m.nrows();
    if count > n {
        return Err(EigenError::TooMany { wanted: count, n });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let pairs = if n <= DENSE_LIMIT {
        dense_top(m, count)?
    } else {
        lanczos_top(m, count)?
    };
    check_residuals(m, &pairs)?;
    Ok(pairs)
}

/// All eigenvalues in descending order.
pub fn eigenvalues_desc(m: MatRef<'_, f64>) -> Result<Vec<f64>, EigenError> {
    let mut values = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| EigenError::Dense)?;
    values.reverse();
    Ok(values)
}

fn dense_top(m: MatRef<'_, f64>, count: usize) -> Result<Vec<EigenPair>, EigenError> {
    let n = m.nrows();
    let evd = m.self_adjoint_eigen(Side::Lower).map_err(|_| EigenError::Dense)?;
    let s = evd.S().column_vector();
    let u = evd.U();
    Ok((0..count)
        .map(|k| {
            let j = n - 1 - k;
            EigenPair {
                value: s[j],
                vector: (0..n).map(|i| u[(i, j)]).collect(),
            }
        })
        .collect())
}

// Frobenius norm, an upper bound for the spectral norm.
fn frobenius(m: MatRef<'_, f64>) -> f64 {
    m.norm_l2()
}

fn check_residuals(m: MatRef<'_, f64>, pairs: &[EigenPair]) -> Result<(), EigenError> {
    let bound = RESIDUAL_TOL * frobenius(m).max(f64::MIN_POSITIVE);
    for (index, p) in pairs.iter().enumerate() {
        let residual = residual(m, p);
        if residual > bound {
            return Err(EigenError::Residual {
                index,
                residual,
                bound,
            });
        }
    }
    Ok(())
}

/// `‖Mv − ηv‖` for a unit vector `v`.
pub fn residual(m: MatRef<'_, f64>, pair: &EigenPair) -> f64 {
    let v = Col::from_fn(pair.vector.len(), |i| pair.vector[i]);
    let mv = m * &v;
    (0..v.nrows())
        .map(|i| (mv[i] - pair.value * v[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn lanczos_top(m: MatRef<'_, f64>, count: usize) -> Result<Vec<EigenPair>, EigenError> {
    let n = m.nrows();
    let max_basis = (count + 300).min(n);
    let bound = 0.1 * RESIDUAL_TOL * frobenius(m);
    // Deterministic, generic start vector.
    let mut start: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    let mut total = 0;
    let mut worst = f64::INFINITY;

    for _restart in 0..30 {
        normalize(&mut start);
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();

        let ritz = loop {
            let k = basis.len() - 1;
            let q = Col::from_fn(n, |i| basis[k][i]);
            let w_col = m * &q;
            let mut w: Vec<f64> = (0..n).map(|i| w_col[i]).collect();
            let a = dot(&w, &basis[k]);
            alpha.push(a);
            // Two passes of classical Gram–Schmidt against the whole basis.
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&w, b);
                    axpy(-c, b, &mut w);
                }
            }
            let b = norm(&w);
            total += 1;
            let size = alpha.len();
            let done = size == max_basis || b <= 1e-14 * frobenius(m);
            if size >= count && (size % 20 == 0 || done) {
                let ritz = ritz_pairs(&alpha, &beta, count);
                worst = ritz
                    .iter()
                    .map(|(_, y)| (b * y[size - 1]).abs())
                    .fold(0.0, f64::max);
                if worst <= bound || done {
                    break ritz;
                }
            }
            beta.push(b);
            w.iter_mut().for_each(|x| *x /= b);
            basis.push(w);
        };

        let pairs: Vec<EigenPair> = ritz
            .iter()
            .map(|(value, y)| {
                let mut v = vec![0.0; n];
                for (c, b) in y.iter().zip(&basis) {
                    axpy(*c, b, &mut v);
                }
                normalize(&mut v);
                EigenPair { value: *value, vector: v }
            })
            .collect();
        let residuals: Vec<f64> = pairs.iter().map(|p| residual(m, p)).collect();
        worst = residuals.iter().copied().fold(0.0, f64::max);
        if worst <= 10.0 * bound {
            return Ok(pairs);
        }
        // Restart from the sum of the wanted Ritz vectors.
        start = vec![0.0; n];
        for p in &pairs {
            axpy(1.0, &p.vector, &mut start);
        }
    }
    Err(EigenError::Lanczos {
        iterations: total,
        residual: worst,
    })
}

// Top `count` eigenpairs of the Lanczos tridiagonal matrix.
fn ritz_pairs(alpha: &[f64], beta: &[f64], count: usize) -> Vec<(f64, Vec<f64>)> {
    let k = alpha.len();
    let t = Mat::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let evd = t.self_adjoint_eigen(Side::Lower).expect("tridiagonal eigensolve");
    let s = evd.S().column_vector();
    let u = evd.U();
    (0..count.min(k))
        .map(|c| {
            let j = k - 1 - c;
            (s[j], (0..k).map(|i| u[(i, j)]).collect())
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) {
    let n = norm(a);
    a.iter_mut().for_each(|x| *x /= n);
}

fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += c * x);
}

fn shifted(m: MatRef<'_, f64>, alpha: f64) -> Mat<f64> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| {
        let v = -alpha * m[(i, j)];
        if i == j {
            1.0 + v
        } else {
            v
        }
    })
}

/// Whether every eigenvalue of `α·M` is below one, decided by attempting a
/// Cholesky factorization of `I − α M`.
pub fn all_below_one(m: MatRef<'_, f64>, alpha: f64) -> bool {
    shifted(m, alpha).llt(Side::Lower).is_ok()
}

/// Number of eigenvalues of `α·M` above one: the negative inertia of
/// `I − α M`, read off its `LBLᵀ` factorization (Sylvester's law).
pub fn count_above_one(m: MatRef<'_, f64>, alpha: f64) -> usize {
    let f = shifted(m, alpha).lblt(Side::Lower);
    let d = f.B_diag().column_vector();
    let e = f.B_subdiag().column_vector();
    let n = d.nrows();
    let mut negative = 0;
    let mut k = 0;
    while k < n {
        if k + 1 < n && e[k] != 0.0 {
            let (a, b, c) = (d[k], e[k], d[k + 1]);
            let det = a * c - b * b;
            if det < 0.0 {
                negative += 1;
            } else if a + c < 0.0 {
                negative += 2;
            }
            k += 2;
        } else {
            if d[k] < 0.0 {
                negative += 1;
            }
            k += 1;
        }
    }
    negative
}
