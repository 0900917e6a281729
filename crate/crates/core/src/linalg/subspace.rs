//! Orthonormal bases and the angles between the subspaces they span.

use std::f64::consts::FRAC_PI_2;

use super::qr::HouseholderQr;
use super::svd::thin_svd;
use super::{LinalgError, Matrix};

/// Orthonormality tolerance for [`Basis::new`].
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Default singular-value cutoff for [`subspace_intersection`].
pub const DEFAULT_INTERSECTION_TOL: f64 = 1e-8;

/// Matrix with orthonormal columns. May have zero columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    columns: Matrix,
}

impl Basis {
    /// Checks `columnsᵀ·columns = I` within [`ORTHONORMAL_TOL`].
    pub fn new(columns: Matrix) -> Result<Self, LinalgError> {
        let err = orthonormality_error(&columns);
        if err > ORTHONORMAL_TOL {
            return Err(LinalgError::NotOrthonormal(err));
        }
        Ok(Self { columns })
    }

    /// Caller guarantees orthonormal columns.
    pub(crate) fn from_orthonormal(columns: Matrix) -> Self {
        debug_assert!(orthonormality_error(&columns) < 1e-8);
        Self { columns }
    }

    pub fn empty(ambient: usize) -> Self {
        Self { columns: Matrix::zeros(ambient, 0) }
    }

    pub fn ambient(&self) -> usize {
        self.columns.rows()
    }

    pub fn dim(&self) -> usize {
        self.columns.cols()
    }

    pub fn columns(&self) -> &Matrix {
        &self.columns
    }

    pub fn into_matrix(self) -> Matrix {
        self.columns
    }

    /// `‖(I − B Bᵀ) v‖₂`.
    pub fn residual_norm(&self, v: &[f64]) -> f64 {
        let mut r = v.to_vec();
        for j in 0..self.dim() {
            let col = self.columns.col(j);
            let proj: f64 = col.iter().zip(v).map(|(a, b)| a * b).sum();
            for (x, c) in r.iter_mut().zip(&col) {
                *x -= proj * c;
            }
        }
        r.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// `max |QᵀQ − I|`.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    if q.cols() == 0 {
        return 0.0;
    }
    q.tr_matmul(q).expect("square gram").max_abs_diff(&Matrix::identity(q.cols()))
}

fn check_pair(u1: &Basis, u2: &Basis) -> Result<(), LinalgError> {
    if u1.ambient() != u2.ambient() || u1.dim() != u2.dim() {
        return Err(LinalgError::shape_mismatch("principal angles", u1.columns.shape(), u2.columns.shape()));
    }
    Ok(())
}

/// Principal angles in nondecreasing order, radians in `[0, π/2]`.
pub fn principal_angles(u1: &Basis, u2: &Basis) -> Result<Vec<f64>, LinalgError> {
    check_pair(u1, u2)?;
    if u1.dim() == 0 {
        return Ok(Vec::new());
    }
    let cross = u1.columns.tr_matmul(&u2.columns)?;
    let svd = thin_svd(&cross)?;
    // Singular values are nonincreasing, so arccos is nondecreasing.
    Ok(svd.svals.iter().map(|s| s.clamp(-1.0, 1.0).acos().min(FRAC_PI_2)).collect())
}

/// `√(Σ sin²θ_i)`.
///
/// Evaluated as `√(r − ‖U1ᵀU2‖_F²)`, which equals the angle form exactly in
/// real arithmetic and keeps full relative accuracy for nearly aligned
/// subspaces where `sin(arccos(σ))` loses digits.
pub fn sin_theta_norm(u1: &Basis, u2: &Basis) -> Result<f64, LinalgError> {
    check_pair(u1, u2)?;
    if u1.dim() == 0 {
        return Ok(0.0);
    }
    Ok(projection_residual(u1, u2)?.sqrt())
}

/// `‖(I − U2U2ᵀ)U1‖_F²`: squared residual of `u1` outside `span(u2)`.
///
/// For equal dimensions this is `‖sinΘ(U1, U2)‖²`; when `u2` is the larger
/// subspace it is the squared sine norm against the best-matching
/// `dim(u1)`-dimensional part of `u2`.
pub fn projection_residual(u1: &Basis, u2: &Basis) -> Result<f64, LinalgError> {
    if u1.ambient() != u2.ambient() {
        return Err(LinalgError::shape_mismatch("projection residual", u1.columns.shape(), u2.columns.shape()));
    }
    if u1.dim() == 0 {
        return Ok(0.0);
    }
    let proj = u2.columns.tr_matmul(&u1.columns)?;
    let p = u2.columns.matmul(&proj)?;
    Ok(u1.columns.sub(&p)?.frobenius_norm_sq())
}

/// `‖U1U1ᵀ − U2U2ᵀ‖_F`, computed from the projectors directly.
pub fn subspace_dist(u1: &Basis, u2: &Basis) -> Result<f64, LinalgError> {
    check_pair(u1, u2)?;
    let p1 = u1.columns.matmul_tr(&u1.columns)?;
    let p2 = u2.columns.matmul_tr(&u2.columns)?;
    Ok(p1.sub(&p2)?.frobenius_norm())
}

/// Orthonormal basis of `span(u)^⊥` in `R^ambient`.
pub fn orthonormal_complement(u: &Basis, ambient: usize) -> Result<Basis, LinalgError> {
    if u.ambient() != ambient || u.dim() > ambient {
        return Err(LinalgError::Shape(format!("basis {}x{} has no complement in R^{ambient}", u.ambient(), u.dim())));
    }
    let k = u.dim();
    if k == 0 {
        return Ok(Basis::from_orthonormal(Matrix::identity(ambient)));
    }
    let q = HouseholderQr::new(&u.columns).full_q();
    Ok(Basis::from_orthonormal(q.columns(k..ambient)))
}

/// Orthonormal basis of `span(a)`, dropping directions with singular value
/// at or below `tol · σ₁`.
pub fn range_basis(a: &Matrix, tol: f64) -> Result<Basis, LinalgError> {
    if a.cols() == 0 {
        return Ok(Basis::empty(a.rows()));
    }
    let svd = thin_svd(a)?;
    let s1 = svd.sigma(1);
    let rank = svd.svals.iter().filter(|&&s| s > tol * s1 && s > 0.0).count();
    Ok(Basis::from_orthonormal(svd.left.columns(0..rank)))
}

/// Orthonormal basis of `span(b1) ∩ span(b2)`.
///
/// The intersection is the right null space of `[C1ᵀ; C2ᵀ]`, with `C_i` the
/// complement of `b_i`; singular values below `tol` count as null.
pub fn subspace_intersection(b1: &Basis, b2: &Basis, tol: f64) -> Result<Basis, LinalgError> {
    let n = b1.ambient();
    if b2.ambient() != n {
        return Err(LinalgError::shape_mismatch("subspace_intersection", b1.columns.shape(), b2.columns.shape()));
    }
    let c1 = orthonormal_complement(b1, n)?;
    let c2 = orthonormal_complement(b2, n)?;
    let stacked = c1.columns.transpose().vstack(&c2.columns.transpose())?;
    if stacked.rows() == 0 {
        // Both inputs span the whole space.
        return Ok(Basis::from_orthonormal(Matrix::identity(n)));
    }
    let svd = thin_svd(&stacked)?;
    let row_rank = svd.svals.iter().filter(|&&s| s >= tol).count();
    let row_space = Basis::from_orthonormal(svd.right.columns(0..row_rank));
    orthonormal_complement(&row_space, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn e(n: usize, idx: &[usize]) -> Basis {
        Basis::new(Matrix::from_fn(n, idx.len(), |i, j| if i == idx[j] { 1.0 } else { 0.0 })).unwrap()
    }

    #[test]
    fn identical_orthogonal_and_diagonal() {
        let a = e(3, &[0, 1]);
        assert_eq!(principal_angles(&a, &a).unwrap(), vec![0.0, 0.0]);
        assert_eq!(sin_theta_norm(&a, &a).unwrap(), 0.0);

        let x = e(2, &[0]);
        let y = e(2, &[1]);
        assert!((principal_angles(&x, &y).unwrap()[0] - FRAC_PI_2).abs() < 1e-15);
        assert!((subspace_dist(&x, &y).unwrap() - SQRT_2).abs() < 1e-15);

        let diag = Basis::new(Matrix::from_vec(2, 1, vec![1.0 / SQRT_2, 1.0 / SQRT_2]).unwrap()).unwrap();
        assert!((principal_angles(&x, &diag).unwrap()[0] - FRAC_PI_4).abs() < 1e-15);
        assert!((sin_theta_norm(&x, &diag).unwrap() - SQRT_2 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fully_orthogonal_gives_sqrt_r() {
        let a = e(5, &[0, 1]);
        let b = e(5, &[2, 3]);
        assert!((sin_theta_norm(&a, &b).unwrap() - SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn mismatched_shapes() {
        assert!(principal_angles(&e(3, &[0]), &e(3, &[0, 1])).is_err());
        assert!(subspace_dist(&e(3, &[0]), &e(4, &[0])).is_err());
    }

    #[test]
    fn complement_cases() {
        let c = orthonormal_complement(&e(3, &[0]), 3).unwrap();
        assert_eq!(c.dim(), 2);
        assert!(c.columns().tr_matmul(e(3, &[0]).columns()).unwrap().max_abs() < 1e-15);
        let full = orthonormal_complement(&e(3, &[0, 1, 2]), 3).unwrap();
        assert_eq!(full.dim(), 0);
        assert!(orthonormal_complement(&e(3, &[0]), 4).is_err());
    }

    #[test]
    fn intersection_cases() {
        let i = subspace_intersection(&e(3, &[0, 1]), &e(3, &[1, 2]), 1e-8).unwrap();
        assert_eq!(i.dim(), 1);
        assert!((i.columns()[(1, 0)].abs() - 1.0).abs() < 1e-14);
        let none = subspace_intersection(&e(3, &[0]), &e(3, &[1]), 1e-8).unwrap();
        assert_eq!(none.dim(), 0);
    }

    #[test]
    fn rejects_non_orthonormal() {
        assert!(Basis::new(Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap()).is_err());
    }
}
