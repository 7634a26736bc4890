use super::Matrix;
use crate::error::{Error, Result};

/// Relative singular-value cutoff used for every generalized inverse unless
/// the caller overrides it.
pub const DEFAULT_RTOL: f64 = 1e-10;

pub fn ensure_finite(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::input(format!("{what}: empty matrix")));
    }
    if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % a.nrows(), pos / a.nrows());
        return Err(Error::input(format!("{what}: non-finite entry at ({r}, {c})")));
    }
    Ok(())
}

fn check_rtol(rtol: f64) -> Result<()> {
    if !(rtol > 0.0 && rtol < 1.0) {
        return Err(Error::input(format!("rtol must lie in (0, 1), got {rtol}")));
    }
    Ok(())
}

/// Moore–Penrose inverse by truncated SVD. Singular values below
/// `rtol * sigma_max` are treated as zero.
pub fn pinv_truncated(a: &Matrix, rtol: f64) -> Result<Matrix> {
    pinv_with_rank(a, rtol).map(|(p, _)| p)
}

fn to_faer(a: &Matrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    to_faer(a)
        .singular_values()
        .map_err(|e| Error::numerical(format!("SVD failed: {e:?}")))
}

/// Like [`pinv_truncated`] but also returns the number of retained singular
/// values.
pub fn pinv_with_rank(a: &Matrix, rtol: f64) -> Result<(Matrix, usize)> {
    ensure_finite(a, "pinv")?;
    check_rtol(rtol)?;
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| Error::numerical(format!("SVD failed: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let sv: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let sigma_max = sv.iter().cloned().fold(0.0, f64::max);
    let cutoff = rtol * sigma_max;
    let mut out = Matrix::zeros(a.ncols(), a.nrows());
    let mut rank = 0;
    for (i, &s) in sv.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let inv = 1.0 / s;
            for c in 0..a.nrows() {
                let f = u[(c, i)] * inv;
                if f == 0.0 {
                    continue;
                }
                for r in 0..a.ncols() {
                    out[(r, c)] += v[(r, i)] * f;
                }
            }
        }
    }
    Ok((out, rank))
}

/// Number of singular values above `rtol * sigma_max`.
pub fn numerical_rank(a: &Matrix, rtol: f64) -> Result<usize> {
    ensure_finite(a, "rank")?;
    check_rtol(rtol)?;
    let sv = singular_values(a)?;
    let cutoff = rtol * sv.iter().cloned().fold(0.0, f64::max);
    Ok(sv.iter().filter(|&&s| s > cutoff && s > 0.0).count())
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub fn condition_number(a: &Matrix) -> Result<f64> {
    ensure_finite(a, "condition number")?;
    let sv = singular_values(a)?;
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// Eigenvalues (ascending) and eigenvectors of a symmetric matrix.
fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let eig = to_faer(&symmetrize(a))
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::numerical(format!("eigendecomposition failed: {e:?}")))?;
    let vals: Vec<f64> = eig.S().column_vector().iter().copied().collect();
    let u = eig.U();
    Ok((vals, Matrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)])))
}

fn check_symmetric(a: &Matrix, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::input(format!(
            "{what}: matrix is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::input(format!(
            "{what}: asymmetry {asym:e} exceeds 1e-10 relative"
        )));
    }
    Ok(())
}

/// Exact symmetrization `(A + Aᵀ)/2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    let mut s = a.clone();
    let n = s.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extremes(a: &Matrix) -> Result<(f64, f64)> {
    ensure_finite(a, "sym_eig_extremes")?;
    check_symmetric(a, "sym_eig_extremes")?;
    let (vals, _) = sym_eigen(a)?;
    Ok((vals[0], vals[vals.len() - 1]))
}

/// Smallest singular value; for an `m x n` matrix this is the
/// `min(m, n)`-th singular value.
pub fn min_singular(a: &Matrix) -> Result<f64> {
    ensure_finite(a, "min_singular")?;
    Ok(singular_values(a)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Generalized inverse square root of a symmetric PSD matrix: eigenvalues
/// below `rtol * lambda_max` are dropped. Returns the matrix and the rank
/// kept.
pub fn sym_inv_sqrt(a: &Matrix, rtol: f64) -> Result<(Matrix, usize)> {
    ensure_finite(a, "sym_inv_sqrt")?;
    check_symmetric(a, "sym_inv_sqrt")?;
    check_rtol(rtol)?;
    let (vals, vecs) = sym_eigen(a)?;
    let lmax = vals[vals.len() - 1];
    let cutoff = rtol * lmax;
    let n = a.nrows();
    let mut out = Matrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let l = vals[k];
        if l > cutoff && l > 0.0 {
            rank += 1;
            let f = 1.0 / l.sqrt();
            let v = vecs.column(k);
            for j in 0..n {
                let vj = v[j] * f;
                for i in 0..n {
                    out[(i, j)] += v[i] * vj;
                }
            }
        }
    }
    Ok((out, rank))
}
