//! Dense linear algebra: matrices, thin SVD, QR, and subspace geometry.

mod matrix;
pub mod qr;
pub mod subspace;
pub mod svd;

use thiserror::Error;

pub use matrix::Matrix;
pub use subspace::{
    orthonormal_complement, orthonormality_error, principal_angles, projection_residual, range_basis, sin_theta_norm,
    subspace_dist, subspace_intersection, Basis, DEFAULT_INTERSECTION_TOL,
};
pub use svd::{thin_svd, SvdTriplet};

use crate::rng::{self, SeededRng};

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("SVD did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
    #[error("columns are not orthonormal (max |QᵀQ - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("rank deficient: {0}")]
    Rank(String),
    #[error("matrix parse error: {0}")]
    Parse(String),
}

impl LinalgError {
    pub(crate) fn shape_mismatch(op: &str, a: (usize, usize), b: (usize, usize)) -> Self {
        LinalgError::Shape(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
    }
}

/// `m×d` matrix with `WᵀW = ε²I_d`, Haar-distributed: QR of a seeded
/// Gaussian matrix with the diagonal of R made positive.
pub fn random_semi_orthogonal(m: usize, d: usize, eps: f64, seed: u64) -> Result<Matrix, LinalgError> {
    let mut rng = rng::stream(seed, rng::tags::SEMI_ORTHOGONAL);
    semi_orthogonal_from(&mut rng, m, d, eps)
}

/// As [`random_semi_orthogonal`], drawing from an existing stream.
pub fn semi_orthogonal_from(rng: &mut SeededRng, m: usize, d: usize, eps: f64) -> Result<Matrix, LinalgError> {
    if m < d || d == 0 {
        return Err(LinalgError::Shape(format!("semi-orthogonal needs m >= d >= 1, got {m}x{d}")));
    }
    if !(eps > 0.0) {
        return Err(LinalgError::Shape(format!("scale must be positive, got {eps}")));
    }
    let g = rng.gaussian_matrix(m, d);
    let qr = qr::HouseholderQr::new(&g);
    let mut q = qr.q_columns(d);
    for j in 0..d {
        let s = if qr.r()[(j, j)] < 0.0 { -eps } else { eps };
        for i in 0..m {
            q[(i, j)] *= s;
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semi_orthogonal_contract() {
        let w = random_semi_orthogonal(72, 64, 1e-2, 7).unwrap();
        let gram = w.tr_matmul(&w).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(64).scale(1e-4)) < 1e-10);
        assert_eq!(w, random_semi_orthogonal(72, 64, 1e-2, 7).unwrap());
        assert_ne!(w, random_semi_orthogonal(72, 64, 1e-2, 8).unwrap());
        assert!(random_semi_orthogonal(3, 4, 1.0, 0).is_err());
    }
}
