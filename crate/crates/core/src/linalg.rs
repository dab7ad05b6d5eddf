//! Small dense linear-algebra helpers built on nalgebra.
//!
//! Singular value decompositions go through faer: nalgebra's SVD loses
//! accuracy on exactly rank-deficient tall matrices, which secant bases hit.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Relative singular-value cutoff used when extracting column spaces.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the column space of `m`, as the columns of the result.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = m.nrows();
    let Some(svd) = Svd::new(m) else {
        return DMatrix::zeros(rows, 0);
    };
    let r = svd.rank();
    svd.u.columns(0, r).into_owned()
}

/// Numerical rank with the same cutoff as [`orthonormal_basis`].
pub fn rank(m: &DMatrix<f64>) -> usize {
    Svd::new(m).map_or(0, |s| s.rank())
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Thin SVD `m = u diag(s) vᵀ` with `s` descending.
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    /// `None` for empty matrices.
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        if m.ncols() == 0 || m.nrows() == 0 {
            return None;
        }
        let a = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
        let svd = a.thin_svd().expect("faer SVD converges");
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
        Some(Self {
            u: DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
            s: (0..s.nrows()).map(|i| s[i]).collect(),
            v: DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
        })
    }

    /// Count of singular values above `RANK_TOL` times the largest.
    pub fn rank(&self) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&x| x > RANK_TOL * smax).count()
    }
}

/// Singular values of a real matrix, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv = Svd::new(m).map(|s| s.s).unwrap_or_default();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Largest eigenvalue of a symmetric matrix.
pub fn lambda_max_symmetric(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Real matrix `[Re(a); Im(a)]` so that `‖a z‖ = ‖stack(a) z‖` for real `z`.
pub fn stack_complex(a: &[Vec<Complex64>], cols: usize) -> DMatrix<f64> {
    let rows = a.len();
    DMatrix::from_fn(2 * rows, cols, |r, c| {
        if r < rows {
            a[r][c].re
        } else {
            a[r - rows][c].im
        }
    })
}

pub fn stack_complex_vec(y: &[Complex64]) -> DVector<f64> {
    let n = y.len();
    DVector::from_fn(2 * n, |r, _| if r < n { y[r].re } else { y[r - n].im })
}

/// Solves `min ‖m z − b‖₂` subject to `‖z‖₂ ≤ radius` exactly.
///
/// Returns the minimum-norm unconstrained solution when it lies in the ball,
/// otherwise the boundary solution of the regularized normal equations, with
/// the multiplier found by bisection.
pub fn ball_constrained_lstsq(m: &DMatrix<f64>, b: &DVector<f64>, radius: f64) -> DVector<f64> {
    let k = m.ncols();
    if k == 0 {
        return DVector::zeros(0);
    }
    let Some(svd) = Svd::new(m) else {
        return DVector::zeros(k);
    };
    let (u, v, sv) = (&svd.u, &svd.v, &svd.s);
    let smax = sv.first().copied().unwrap_or(0.0);
    let utb: Vec<f64> = (0..sv.len()).map(|j| u.column(j).dot(b)).collect();
    let solve = |lambda: f64| -> DVector<f64> {
        let mut z = DVector::zeros(k);
        for j in 0..sv.len() {
            let s = sv[j];
            if s <= RANK_TOL * smax {
                continue;
            }
            let coef = s * utb[j] / (s * s + lambda);
            z += v.column(j) * coef;
        }
        z
    };
    let z0 = solve(0.0);
    if z0.norm() <= radius {
        return z0;
    }
    let mtb = m.transpose() * b;
    let mut lo = 0.0;
    let mut hi = (mtb.norm() / radius).max(f64::MIN_POSITIVE);
    while solve(hi).norm() > radius {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if solve(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let z = solve(hi);
    // Guard the constraint against the last ulp.
    let nz = z.norm();
    if nz > radius {
        z * (radius / nz)
    } else {
        z
    }
}
