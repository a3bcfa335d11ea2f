//! Dense kernels for the small (n <= a few dozen) matrices this crate works
//! with: Haar-distributed orthonormal samples, symmetric eigenvalues via
//! cyclic Jacobi, Gauss-Jordan inversion, LU determinants, and norms.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::rng::normal_matrix;

/// Sample an n x k matrix with orthonormal columns whose span is uniform over
/// k-dimensional subspaces (and whose frame is Haar on the Stiefel manifold).
///
/// Implementation: modified Gram-Schmidt on a standard Gaussian matrix with a
/// second orthogonalization pass. MGS normalizers are positive, so this is
/// the unique QR factor with a positive R diagonal, which is exactly the
/// Haar-correct sign convention.
pub fn random_orthonormal_basis<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<Array2<f64>> {
    if n == 0 || k == 0 {
        return Err(Error::invalid(format!(
            "orthonormal basis needs n >= 1 and k >= 1, got n={n}, k={k}"
        )));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "orthonormal basis needs k <= n, got k={k} > n={n}"
        )));
    }
    let g = normal_matrix(rng, n, k);
    orthonormalize_columns(g)
}

/// Sample an n x n Haar-distributed orthogonal matrix (both determinant signs
/// occur with probability 1/2).
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Result<Array2<f64>> {
    random_orthonormal_basis(n, n, rng)
}

fn orthonormalize_columns(mut q: Array2<f64>) -> Result<Array2<f64>> {
    let (n, k) = q.dim();
    for j in 0..k {
        // Two MGS passes keep ||Q^T Q - I|| at rounding level.
        for _pass in 0..2 {
            for i in 0..j {
                let mut dot = 0.0;
                for r in 0..n {
                    dot += q[(r, i)] * q[(r, j)];
                }
                for r in 0..n {
                    q[(r, j)] -= dot * q[(r, i)];
                }
            }
        }
        let mut norm_sq = 0.0;
        for r in 0..n {
            norm_sq += q[(r, j)] * q[(r, j)];
        }
        let norm = norm_sq.sqrt();
        if norm < 1e-150 {
            return Err(Error::Singular(
                "degenerate Gaussian draw during orthonormalization".to_string(),
            ));
        }
        for r in 0..n {
            q[(r, j)] /= norm;
        }
    }
    Ok(q)
}

/// Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
pub fn sym_eigvals(a: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::dims(format!("sym_eigvals on {n}x{m} matrix")));
    }
    ensure_finite_2d("sym_eigvals input", a)?;
    let scale = a.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-8 * scale.max(1.0) {
                return Err(Error::invalid(format!(
                    "sym_eigvals needs a symmetric matrix; entry ({i},{j}) differs"
                )));
            }
        }
    }

    let mut m = a.to_owned();
    // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }

    let off = |m: &Array2<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    let tol = 1e-14 * (frobenius(a) + 1.0);
    for _sweep in 0..100 {
        if off(&m) <= tol {
            let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
            eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
            return Ok(eig);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let mrp = m[(r, p)];
                    let mrq = m[(r, q)];
                    m[(r, p)] = c * mrp - s * mrq;
                    m[(r, q)] = s * mrp + c * mrq;
                }
                for r in 0..n {
                    let mpr = m[(p, r)];
                    let mqr = m[(q, r)];
                    m[(p, r)] = c * mpr - s * mqr;
                    m[(q, r)] = s * mpr + c * mqr;
                }
            }
        }
    }
    Err(Error::NoConvergence("Jacobi eigenvalue sweeps".to_string()))
}

/// Operator (2-)norm of a symmetric matrix: max |eigenvalue|.
pub fn sym_op_norm(a: ArrayView2<'_, f64>) -> Result<f64> {
    let eig = sym_eigvals(a)?;
    Ok(eig.iter().fold(0.0f64, |acc, &x| acc.max(x.abs())))
}

/// Largest singular value of a general square or rectangular matrix.
pub fn spectral_norm(a: ArrayView2<'_, f64>) -> Result<f64> {
    let ata = a.t().dot(&a);
    let eig = sym_eigvals(ata.view())?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// 2-norm condition number via the singular values of A; returns +inf for a
/// numerically singular matrix.
pub fn condition_number(a: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::dims(format!("condition number of {n}x{m} matrix")));
    }
    let ata = a.t().dot(&a);
    let eig = sym_eigvals(ata.view())?;
    let hi = eig.last().copied().unwrap_or(0.0).max(0.0);
    let lo = eig.first().copied().unwrap_or(0.0);
    if lo <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((hi / lo).sqrt())
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::dims(format!("inverse of {n}x{m} matrix")));
    }
    ensure_finite_2d("invert input", a)?;
    let mut work = a.to_owned();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if work[(r, col)].abs() > work[(pivot, col)].abs() {
                pivot = r;
            }
        }
        let p = work[(pivot, col)];
        if p.abs() < 1e-300 {
            return Err(Error::Singular(format!("zero pivot in column {col}")));
        }
        if pivot != col {
            for j in 0..n {
                work.swap((pivot, j), (col, j));
                inv.swap((pivot, j), (col, j));
            }
        }
        let p = work[(col, col)];
        for j in 0..n {
            work[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = work[(r, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                work[(r, j)] -= f * work[(col, j)];
                inv[(r, j)] -= f * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant(a: ArrayView2<'_, f64>) -> Result<f64> {
    let (n, m) = a.dim();
    if n != m {
        return Err(Error::dims(format!("determinant of {n}x{m} matrix")));
    }
    let mut lu = a.to_owned();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if lu[(r, col)].abs() > lu[(pivot, col)].abs() {
                pivot = r;
            }
        }
        if lu[(pivot, col)] == 0.0 {
            return Ok(0.0);
        }
        if pivot != col {
            det = -det;
            for j in 0..n {
                lu.swap((pivot, j), (col, j));
            }
        }
        let p = lu[(col, col)];
        det *= p;
        for r in (col + 1)..n {
            let f = lu[(r, col)] / p;
            for j in col..n {
                lu[(r, j)] -= f * lu[(col, j)];
            }
        }
    }
    Ok(det)
}

pub fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff_1d(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn max_abs_diff_2d(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
}

pub fn ensure_finite_1d(name: &str, a: ArrayView1<'_, f64>) -> Result<()> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

pub fn ensure_finite_2d(name: &str, a: ArrayView2<'_, f64>) -> Result<()> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name.to_string()));
    }
    Ok(())
}

/// Squared Euclidean norm of a vector difference.
pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}
