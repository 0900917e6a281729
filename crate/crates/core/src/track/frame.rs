use crate::error::{Error, Result};
use crate::linalg::{
    orthonormal_complement, orthonormality_error, subspace_intersection, thin_svd, Basis, LinalgError, Matrix,
    DEFAULT_INTERSECTION_TOL,
};

/// `‖WᵀW/ε² − I‖_max` allowed for an ε-scaled semi-orthogonal weight.
const SEMI_ORTHOGONAL_TOL: f64 = 1e-6;

/// Slow-moving directions of the first layer: `v2 ⊂ R^d` and
/// `u2 = W_1(0)·v2/ε ⊂ R^m`.
#[derive(Clone, Debug)]
pub struct SmallUpdate {
    pub v2: Basis,
    pub u2: Basis,
}

fn check_semi_orthogonal(w: &Matrix, eps: f64, what: &str) -> Result<()> {
    let err = w.tr_matmul(w)?.scale(1.0 / (eps * eps)).max_abs_diff(&Matrix::identity(w.cols()));
    if err > SEMI_ORTHOGONAL_TOL {
        return Err(Error::Precondition(format!("{what} is not ε-scaled semi-orthogonal (deviation {err:e})")));
    }
    Ok(())
}

/// `R(R_{1,2}(0)) ∩ R^⊥(W_1(0)ᵀ L_{1,1}(0))`, where `L_{1,1}`, `R_{1,1}` are
/// the top-`k` singular vectors of the initial gradient `g0`.
///
/// Errors with [`Error::Degenerate`] if the intersection is not `d − 2k`
/// dimensional.
pub fn small_update_subspace(w0: &Matrix, g0: &Matrix, eps: f64, k: usize) -> Result<SmallUpdate> {
    let (m, d) = w0.shape();
    if g0.shape() != (m, d) {
        return Err(LinalgError::shape_mismatch("small_update_subspace", w0.shape(), g0.shape()).into());
    }
    if 2 * k > d {
        return Err(Error::Range(format!("need 2K <= d, got K={k}, d={d}")));
    }
    check_semi_orthogonal(w0, eps, "W_1(0)")?;
    if g0.max_abs() == 0.0 {
        return Err(Error::Precondition("initial gradient is zero".into()));
    }
    let svd = thin_svd(g0)?;
    let r11 = Basis::new(svd.right.columns(0..k))?;
    let l11 = svd.left.columns(0..k);
    let r12 = orthonormal_complement(&r11, d)?;
    let mapped = w0.tr_matmul(&l11)?.scale(1.0 / eps);
    let mapped = crate::linalg::range_basis(&mapped, 1e-12)?;
    let not_mapped = orthonormal_complement(&mapped, d)?;
    let v2 = subspace_intersection(&r12, &not_mapped, DEFAULT_INTERSECTION_TOL)?;
    if v2.dim() != d - 2 * k {
        return Err(Error::Degenerate { expected: d - 2 * k, actual: v2.dim() });
    }
    let u2 = Basis::new(w0.matmul(v2.columns())?.scale(1.0 / eps))?;
    Ok(SmallUpdate { v2, u2 })
}

/// Orthogonal pair `(U, V)` for one layer, each split as `[big | small]`
/// with the small blocks `p` columns wide.
#[derive(Clone, Debug)]
pub struct LayerFrame {
    u: Matrix,
    v: Matrix,
    p: usize,
}

impl LayerFrame {
    /// Completes `u2`, `v2` to square orthogonal matrices.
    pub fn from_small(u2: &Basis, v2: &Basis) -> Result<Self> {
        if u2.dim() != v2.dim() {
            return Err(Error::Input(format!("small blocks differ in width: {} vs {}", u2.dim(), v2.dim())));
        }
        let u1 = orthonormal_complement(u2, u2.ambient())?;
        let v1 = orthonormal_complement(v2, v2.ambient())?;
        Ok(Self { u: u1.columns().hstack(u2.columns())?, v: v1.columns().hstack(v2.columns())?, p: u2.dim() })
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn u_big(&self) -> Matrix {
        self.u.columns(0..self.u.cols() - self.p)
    }

    pub fn u_small(&self) -> Matrix {
        self.u.columns(self.u.cols() - self.p..self.u.cols())
    }

    pub fn v_big(&self) -> Matrix {
        self.v.columns(0..self.v.cols() - self.p)
    }

    pub fn v_small(&self) -> Matrix {
        self.v.columns(self.v.cols() - self.p..self.v.cols())
    }

    /// Largest deviation of `U` or `V` from orthogonality.
    pub fn orthogonality_error(&self) -> f64 {
        orthonormality_error(&self.u).max(orthonormality_error(&self.v))
    }
}

/// Per-layer frames for every hidden layer, built from the first layer's
/// small block by `V_{l,2} = U_{l−1,2}`, `U_{l,2} = W_l(0)V_{l,2}/ε`.
#[derive(Clone, Debug)]
pub struct SubspaceFrame {
    pub eps: f64,
    pub layers: Vec<LayerFrame>,
}

impl SubspaceFrame {
    pub fn p(&self) -> usize {
        self.layers.first().map_or(0, LayerFrame::p)
    }
}

/// Frames for layers `1..L−1` of `init` (the head is not framed).
pub fn deeper_subspaces(init: &[Matrix], v12: &Basis, eps: f64) -> Result<SubspaceFrame> {
    if init.len() < 2 {
        return Err(Error::Input("need at least one hidden layer and a head".into()));
    }
    let hidden = &init[..init.len() - 1];
    let mut layers = Vec::with_capacity(hidden.len());
    let mut v2 = v12.clone();
    for (l, w) in hidden.iter().enumerate() {
        check_semi_orthogonal(w, eps, &format!("W_{}(0)", l + 1))?;
        if w.cols() != v2.ambient() {
            return Err(LinalgError::shape_mismatch("deeper_subspaces", w.shape(), v2.columns().shape()).into());
        }
        let u2 = Basis::new(w.matmul(v2.columns())?.scale(1.0 / eps))?;
        layers.push(LayerFrame::from_small(&u2, &v2)?);
        v2 = u2;
    }
    Ok(SubspaceFrame { eps, layers })
}

/// `W_{l−1}(0)···W_1(0)·V_{1,2}/ε^{l−1}` (1-based `l`), the non-recursive
/// form of the layer-`l` input small block.
pub fn closed_form_small_block(init: &[Matrix], v12: &Matrix, eps: f64, l: usize) -> Result<Matrix> {
    let mut acc = v12.clone();
    for w in &init[..l - 1] {
        acc = w.matmul(&acc)?;
    }
    Ok(acc.scale(eps.powi(-(l as i32 - 1))))
}

/// The four blocks of `UᵀWV`:
/// `[U₁ᵀWV₁, U₁ᵀWV₂; U₂ᵀWV₁, U₂ᵀWV₂]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDecomp {
    pub blocks: [Matrix; 4],
}

impl BlockDecomp {
    pub fn norms(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|i| self.blocks[i].frobenius_norm())
    }

    /// `‖B_i − other_i‖_F` for each block.
    pub fn diff_norms(&self, other: &BlockDecomp) -> Result<[f64; 4]> {
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = self.blocks[i].sub(&other.blocks[i])?.frobenius_norm();
        }
        Ok(out)
    }

    /// `U·[blocks]·Vᵀ`.
    pub fn reassemble(&self, frame: &LayerFrame) -> Result<Matrix> {
        let top = self.blocks[0].hstack(&self.blocks[1])?;
        let bottom = self.blocks[2].hstack(&self.blocks[3])?;
        let rotated = top.vstack(&bottom)?;
        Ok(frame.u.matmul(&rotated)?.matmul_tr(&frame.v)?)
    }
}

pub fn block_decompose(w: &Matrix, frame: &LayerFrame) -> Result<BlockDecomp> {
    if w.rows() != frame.u.rows() || w.cols() != frame.v.rows() {
        return Err(LinalgError::shape_mismatch("block_decompose", w.shape(), (frame.u.rows(), frame.v.rows())).into());
    }
    let full = frame.u.tr_matmul(w)?.matmul(&frame.v)?;
    let (r, c) = full.shape();
    let (rb, cb) = (r - frame.p, c - frame.p);
    Ok(BlockDecomp {
        blocks: [
            full.submatrix(0, 0, rb, cb),
            full.submatrix(0, cb, rb, frame.p),
            full.submatrix(rb, 0, frame.p, cb),
            full.submatrix(rb, cb, frame.p, frame.p),
        ],
    })
}

/// `√(σ₁²(G)·A²/p + σ²_{K+1}(G))`.
pub fn rho(g: &Matrix, a_t: f64, k: usize, p: usize) -> Result<f64> {
    let svd = thin_svd(g)?;
    rho_from_svals(&svd.svals, a_t, k, p)
}

pub(crate) fn rho_from_svals(svals: &[f64], a_t: f64, k: usize, p: usize) -> Result<f64> {
    if k + 1 > svals.len() {
        return Err(Error::Range(format!("sigma_{} requested from {} singular values", k + 1, svals.len())));
    }
    if p == 0 {
        return Err(Error::Range("p must be positive".into()));
    }
    let s1 = svals[0];
    let sk1 = svals[k];
    Ok((s1 * s1 * a_t * a_t / p as f64 + sk1 * sk1).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_semi_orthogonal;
    use crate::rng::{self, tags};

    #[test]
    fn identity_frame_gives_literal_blocks() {
        let frame = LayerFrame::from_small(
            &Basis::new(Matrix::identity(3).columns(1..3)).unwrap(),
            &Basis::new(Matrix::identity(3).columns(1..3)).unwrap(),
        )
        .unwrap();
        let w = Matrix::from_fn(3, 3, |i, j| (3 * i + j) as f64);
        let b = block_decompose(&w, &frame).unwrap();
        assert_eq!(b.blocks[0], w.submatrix(0, 0, 1, 1));
        assert_eq!(b.blocks[3], w.submatrix(1, 1, 2, 2));
        assert!(b.reassemble(&frame).unwrap().max_abs_diff(&w) < 1e-14);
    }

    #[test]
    fn rho_special_cases() {
        let g = Matrix::diag(&[3.0, 2.0, 0.0]);
        assert_eq!(rho(&g, 0.0, 2, 1).unwrap(), 0.0);
        let g = Matrix::diag(&[3.0, 2.0, 0.5]);
        assert_eq!(rho(&g, 0.0, 2, 1).unwrap(), 0.5);
        assert!(rho(&g, 0.0, 3, 1).is_err());
    }

    #[test]
    fn small_update_dimension_and_anchors() {
        let (m, d, k, eps) = (20, 12, 2, 0.1);
        let w0 = random_semi_orthogonal(m, d, eps, 3).unwrap();
        let g0 = rng::stream(3, tags::TEST).gaussian_matrix(m, d);
        let s = small_update_subspace(&w0, &g0, eps, k).unwrap();
        assert_eq!(s.v2.dim(), d - 2 * k);
        assert!(orthonormality_error(s.u2.columns()) < 1e-8);
        let frame = LayerFrame::from_small(&s.u2, &s.v2).unwrap();
        let b = block_decompose(&w0, &frame).unwrap();
        assert!(b.blocks[1].frobenius_norm() < 1e-12);
        assert!(b.blocks[2].frobenius_norm() < 1e-12);
        let p = (d - 2 * k) as f64;
        assert!((b.blocks[3].frobenius_norm() / p.sqrt() - eps).abs() < 1e-12);
        assert_eq!(b.blocks[0].shape(), (m - (d - 2 * k), 2 * k));
    }

    #[test]
    fn non_semi_orthogonal_rejected() {
        let w = Matrix::from_fn(4, 2, |i, j| (i + j) as f64);
        assert!(small_update_subspace(&w, &w, 1.0, 1).is_err());
        let v = Basis::new(Matrix::identity(2)).unwrap();
        assert!(deeper_subspaces(&[w, Matrix::zeros(1, 4)], &v, 1.0).is_err());
    }
}
