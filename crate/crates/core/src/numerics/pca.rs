//! Two-component PCA by power iteration with deflation.

use super::matrix::{dot, Matrix, Op};
use crate::error::{invalid, Result};

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 10_000;

/// Result of [`pca_top2_detailed`].
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    /// Centered rows projected on the two leading directions (`T x 2`).
    pub projection: Matrix,
    /// Leading directions as orthonormal columns (`m x 2`).
    pub components: Matrix,
    /// Sample variance along each direction, descending.
    pub explained_variance: [f64; 2],
}

/// Projects the rows of `m` (`T x cols`) onto their top two principal directions.
pub fn pca_top2(m: &Matrix) -> Result<Matrix> {
    Ok(pca_top2_detailed(m)?.projection)
}

pub fn pca_top2_detailed(m: &Matrix) -> Result<Pca2> {
    let (t, cols) = m.shape();
    if t < 3 || cols < 2 {
        return Err(invalid(format!("PCA needs at least 3 rows and 2 columns, got {t}x{cols}")));
    }
    let mean = m.column_means();
    let mut centered = m.clone();
    for row in centered.as_mut_slice().chunks_exact_mut(cols) {
        row.iter_mut().zip(&mean).for_each(|(v, mu)| *v -= mu);
    }
    let denom = (t - 1) as f64;

    // Work with whichever covariance is smaller.
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(2);
    if cols <= t {
        let mut cov = Matrix::matmul(&centered, Op::T, &centered, Op::N)?;
        cov.as_mut_slice().iter_mut().for_each(|v| *v /= denom);
        for _ in 0..2 {
            dirs.push(leading_eigvec(&cov, &dirs).unwrap_or_else(|| vec![0.0; cols]));
        }
    } else {
        let mut gram = Matrix::matmul(&centered, Op::N, &centered, Op::T)?;
        gram.as_mut_slice().iter_mut().for_each(|v| *v /= denom);
        let mut us: Vec<Vec<f64>> = Vec::with_capacity(2);
        for _ in 0..2 {
            let u = leading_eigvec(&gram, &us);
            let mut dir = vec![0.0; cols];
            if let Some(u) = &u {
                // v = Xc^T u, orthonormalized against earlier directions
                for (row, &ui) in centered.row_iter().zip(u) {
                    dir.iter_mut().zip(row).for_each(|(d, x)| *d += ui * x);
                }
                for prev in &dirs {
                    let c = dot(prev, &dir);
                    dir.iter_mut().zip(prev).for_each(|(d, p)| *d -= c * p);
                }
                let norm = dot(&dir, &dir).sqrt();
                if norm > 0.0 {
                    dir.iter_mut().for_each(|d| *d /= norm);
                } else {
                    dir.iter_mut().for_each(|d| *d = 0.0);
                }
            }
            us.push(u.unwrap_or_else(|| vec![0.0; t]));
            dirs.push(dir);
        }
    }

    let mut components = Matrix::zeros(cols, 2);
    for (k, dir) in dirs.iter().enumerate() {
        for (i, &v) in dir.iter().enumerate() {
            components[(i, k)] = v;
        }
    }
    let mut projection = Matrix::matmul(&centered, Op::N, &components, Op::N)?;
    let mut explained_variance = [0.0; 2];
    for k in 0..2 {
        // sign convention: largest-magnitude score is positive
        let col = projection.column(k);
        let pivot = col.iter().cloned().fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            for i in 0..t {
                projection[(i, k)] = -projection[(i, k)];
            }
            for i in 0..cols {
                components[(i, k)] = -components[(i, k)];
            }
        }
        explained_variance[k] = col.iter().map(|v| v * v).sum::<f64>() / denom;
    }
    Ok(Pca2 {
        projection,
        components,
        explained_variance,
    })
}

/// Leading eigenvector of symmetric PSD `a` restricted to the orthogonal
/// complement of `found`. `None` when that restriction is numerically zero.
fn leading_eigvec(a: &Matrix, found: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.rows();
    let scale = a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let deflate = |v: &mut Vec<f64>| {
        for prev in found {
            let c = dot(prev, v);
            v.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
        }
    };
    let apply = |v: &[f64]| -> Vec<f64> { a.row_iter().map(|r| dot(r, v)).collect() };

    // Start from the deflated column of largest norm, which lies in the range.
    let mut best: Option<(f64, Vec<f64>)> = None;
    for j in 0..n {
        let mut c = a.column(j);
        deflate(&mut c);
        let norm = dot(&c, &c).sqrt();
        if best.as_ref().is_none_or(|(b, _)| norm > *b) {
            best = Some((norm, c));
        }
    }
    let (norm, mut v) = best?;
    if norm <= scale * 1e-12 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);

    for _ in 0..MAX_ITER {
        let mut w = apply(&v);
        deflate(&mut w);
        let norm = dot(&w, &w).sqrt();
        if norm <= scale * 1e-14 {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let diff: f64 = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = w;
        if diff < TOL {
            break;
        }
    }
    Some(v)
}
