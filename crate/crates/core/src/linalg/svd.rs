//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! The column-orthogonalization form is slower than Golub–Kahan for large
//! matrices but every singular vector comes out orthogonal to working
//! precision relative to its own singular value, which the subspace metrics
//! downstream depend on.

use super::{LinalgError, Matrix};

/// Sweep cap before [`LinalgError::NoConvergence`].
pub const MAX_SWEEPS: usize = 100;

/// Thin SVD `a = left · diag(svals) · rightᵀ` with `k = min(m, n)` components.
#[derive(Clone, Debug)]
pub struct SvdTriplet {
    pub left: Matrix,
    pub svals: Vec<f64>,
    pub right: Matrix,
}

impl SvdTriplet {
    pub fn rank_count(&self) -> usize {
        self.svals.len()
    }

    /// `σ_i`, 1-based as in the usual notation; zero past the thin rank.
    pub fn sigma(&self, i: usize) -> f64 {
        assert!(i >= 1, "singular values are 1-indexed");
        self.svals.get(i - 1).copied().unwrap_or(0.0)
    }

    pub fn reconstruct(&self) -> Matrix {
        let scaled = Matrix::from_fn(self.left.rows(), self.svals.len(), |i, j| self.left[(i, j)] * self.svals[j]);
        scaled.matmul_tr(&self.right).expect("svd factor shapes")
    }

    /// Left singular vectors `range` (0-based, half-open).
    pub fn left_cols(&self, range: std::ops::Range<usize>) -> Matrix {
        self.left.columns(range)
    }

    pub fn right_cols(&self, range: std::ops::Range<usize>) -> Matrix {
        self.right.columns(range)
    }
}

/// Thin SVD of `a`.
pub fn thin_svd(a: &Matrix) -> Result<SvdTriplet, LinalgError> {
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("thin_svd input"));
    }
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let t = jacobi_tall(&a.transpose())?;
        // a = (aᵀ)ᵀ = R Σ Lᵀ; re-canonicalize signs on the new left factor.
        let mut out = SvdTriplet { left: t.right, svals: t.svals, right: t.left };
        fix_signs(&mut out);
        Ok(out)
    }
}

fn jacobi_tall(a: &Matrix) -> Result<SvdTriplet, LinalgError> {
    let (m, n) = a.shape();
    // Column-major working copies.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (m as f64).sqrt();
    // Columns below this squared norm are numerically zero.
    let fro2: f64 = w.iter().flatten().map(|x| x * x).sum();
    let floor = fro2 * (f64::EPSILON * (m.max(n) as f64)).powi(2);

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for (x, y) in wp.iter().zip(wq) {
                        al += x * x;
                        be += y * y;
                        ga += x * y;
                    }
                    (al, be, ga)
                };
                if alpha <= floor || beta <= floor || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }

    let norms: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties deterministic.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let svals: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let negligible = fro2.sqrt() * f64::EPSILON * (m.max(n) as f64);

    let mut left = Matrix::zeros(m, n);
    let mut right = Matrix::zeros(n, n);
    let mut needs_completion = Vec::new();
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        right.set_col(k, &v[j]);
        if svals[k] > negligible {
            let inv = 1.0 / svals[k];
            let mut u: Vec<f64> = w[j].iter().map(|x| x * inv).collect();
            // Columns near the cutoff carry roundoff; a vector that has
            // lost orthogonality to the earlier ones is completed instead.
            for _ in 0..2 {
                for a in &accepted {
                    let proj: f64 = a.iter().zip(&u).map(|(x, y)| x * y).sum();
                    for (x, y) in u.iter_mut().zip(a) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                u.iter_mut().for_each(|x| *x /= norm);
                left.set_col(k, &u);
                accepted.push(u);
                continue;
            }
        }
        needs_completion.push(k);
    }
    if !needs_completion.is_empty() {
        complete_columns(&mut left, &needs_completion);
    }
    let mut out = SvdTriplet { left, svals, right };
    fix_signs(&mut out);
    Ok(out)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fill the listed columns of `q` with unit vectors orthogonal to every
/// other column. Each is the standard basis vector with the largest
/// residual after projecting out the filled columns.
pub(crate) fn complete_columns(q: &mut Matrix, missing: &[usize]) {
    let m = q.rows();
    let mut filled: Vec<usize> = (0..q.cols()).filter(|j| !missing.contains(j)).collect();
    for &k in missing {
        let cols: Vec<Vec<f64>> = filled.iter().map(|&j| q.col(j)).collect();
        // ‖(I − QQᵀ)e_i‖² = 1 − ‖row i of Q‖², so the best candidate is
        // the row with the least weight on the filled columns.
        let mut candidate = 0;
        let mut least = f64::INFINITY;
        for i in 0..m {
            let w: f64 = cols.iter().map(|c| c[i] * c[i]).sum();
            if w < least {
                least = w;
                candidate = i;
            }
        }
        let mut e = vec![0.0; m];
        e[candidate] = 1.0;
        // Two passes of Gram–Schmidt.
        for _ in 0..2 {
            for col in &cols {
                let proj: f64 = col.iter().zip(&e).map(|(a, b)| a * b).sum();
                for (x, c) in e.iter_mut().zip(col) {
                    *x -= proj * c;
                }
            }
        }
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm > 1e-8, "cannot complete an orthonormal set beyond the ambient dimension");
        let e: Vec<f64> = e.iter().map(|x| x / norm).collect();
        q.set_col(k, &e);
        filled.push(k);
    }
}

/// First entry of each left vector with magnitude above 1e-12 is made
/// nonnegative, flipping the paired right vector with it.
fn fix_signs(svd: &mut SvdTriplet) {
    for k in 0..svd.svals.len() {
        let col = svd.left.col(k);
        let pivot =
            col.iter().find(|x| x.abs() > 1e-12).or_else(|| col.iter().find(|x| **x != 0.0)).copied().unwrap_or(0.0);
        if pivot < 0.0 {
            for i in 0..svd.left.rows() {
                svd.left[(i, k)] = -svd.left[(i, k)];
            }
            for i in 0..svd.right.rows() {
                svd.right[(i, k)] = -svd.right[(i, k)];
            }
        }
    }
}
