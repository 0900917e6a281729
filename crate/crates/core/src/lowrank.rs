//! Low-rank MLP `W_L φ(Ũ W̃_{L−1} φ(W̃_{L−2} ⋯ φ(W̃_1 ṼᵀX)))` and its
//! initializations.
//!
//! The factors `Ũ`, `Ṽ` are orthonormal at initialization and trained
//! freely afterwards; nothing re-orthonormalizes them.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{orthonormal_complement, semi_orthogonal_from, Basis, LinalgError, Matrix};
use crate::mlp::{chain_backward, chain_forward, Activation, ForwardCache, LossKind, MlpParams, Mode};
use crate::rng::{self, tags};
use crate::track::{closed_form_small_block, small_update_subspace};
use crate::train::Trainable;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Sbig,
    Random,
    Angle,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Sbig => "sbig",
            InitKind::Random => "random",
            InitKind::Angle => "angle",
        })
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sbig" => Ok(InitKind::Sbig),
            "random" => Ok(InitKind::Random),
            "angle" => Ok(InitKind::Angle),
            other => Err(Error::Input(format!("unknown init kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LowRankMlp {
    /// `[Ṽᵀ, W̃_1, …, W̃_{L−1}, Ũ, W_L]`.
    chain: Vec<Matrix>,
    pub activation: Activation,
    pub head_frozen: bool,
    pub init_kind: InitKind,
    /// Degrees; zero unless `init_kind` is [`InitKind::Angle`].
    pub psi: f64,
}

/// Columns of `Ũ`, `Ṽ` before and after rotation by the angle init.
#[derive(Clone, Debug)]
pub struct FactorPair {
    pub u: Matrix,
    pub v: Matrix,
}

/// `cos ψ · big + sin ψ · perp` for both factors, `ψ` in degrees.
pub fn angle_init(big: &FactorPair, perp: &FactorPair, psi_deg: f64) -> Result<FactorPair> {
    if !(0.0..=90.0).contains(&psi_deg) {
        return Err(Error::Range(format!("psi must be in [0, 90] degrees, got {psi_deg}")));
    }
    if big.u.shape() != perp.u.shape() || big.v.shape() != perp.v.shape() {
        return Err(Error::Input("big and perpendicular factors differ in shape".into()));
    }
    for (b, p) in [(&big.u, &perp.u), (&big.v, &perp.v)] {
        let cross = b.tr_matmul(p)?.max_abs();
        if cross > 1e-8 {
            return Err(Error::Precondition(format!("perpendicular block overlaps big block ({cross:e})")));
        }
    }
    let (c, s) = match psi_deg {
        0.0 => (1.0, 0.0),
        90.0 => (0.0, 1.0),
        x => (x.to_radians().cos(), x.to_radians().sin()),
    };
    let mix = |b: &Matrix, p: &Matrix| -> Result<Matrix> {
        let mut out = b.scale(c);
        out.axpy(s, p)?;
        Ok(out)
    };
    Ok(FactorPair { u: mix(&big.u, &perp.u)?, v: mix(&big.v, &perp.v)? })
}

/// `cols` orthonormal columns chosen at random inside `span(basis)`.
fn random_within(basis: &Basis, cols: usize, r: &mut rng::SeededRng) -> Result<Matrix> {
    if cols == 0 {
        return Ok(Matrix::zeros(basis.ambient(), 0));
    }
    if cols > basis.dim() {
        return Err(Error::Range(format!("cannot pick {cols} directions from a {}-dim space", basis.dim())));
    }
    let q = semi_orthogonal_from(r, basis.dim(), cols, 1.0)?;
    Ok(basis.columns().matmul(&q)?)
}

impl LowRankMlp {
    pub fn from_parts(
        vtilde: &Matrix,
        core: Vec<Matrix>,
        utilde: Matrix,
        head: Matrix,
        activation: Activation,
    ) -> Result<Self> {
        if core.is_empty() {
            return Err(Error::Input("low-rank model needs at least one core layer".into()));
        }
        let mut chain = Vec::with_capacity(core.len() + 3);
        chain.push(vtilde.transpose());
        chain.extend(core);
        chain.push(utilde);
        chain.push(head);
        for l in 1..chain.len() {
            if chain[l].cols() != chain[l - 1].rows() {
                return Err(
                    LinalgError::shape_mismatch("low-rank chain", chain[l - 1].shape(), chain[l].shape()).into()
                );
            }
        }
        Ok(Self { chain, activation, head_frozen: false, init_kind: InitKind::Sbig, psi: 0.0 })
    }

    /// Number of layers `L` of the equivalent full network.
    pub fn depth(&self) -> usize {
        self.chain.len() - 2
    }

    pub fn rank(&self) -> usize {
        self.chain[0].rows()
    }

    pub fn vtilde(&self) -> Matrix {
        self.chain[0].transpose()
    }

    pub fn utilde(&self) -> &Matrix {
        &self.chain[self.chain.len() - 2]
    }

    pub fn core(&self) -> &[Matrix] {
        &self.chain[1..self.chain.len() - 2]
    }

    pub fn head(&self) -> &Matrix {
        &self.chain[self.chain.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.chain.iter().map(|w| w.rows() * w.cols()).sum()
    }

    fn act_after(&self) -> Vec<bool> {
        let n = self.chain.len();
        (0..n).map(|i| (2..n - 2).contains(&i) || i == n - 2).collect()
    }

    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<ForwardCache> {
        let refs: Vec<&Matrix> = self.chain.iter().collect();
        chain_forward(&refs, &self.act_after(), self.activation, x, mode)
    }

    /// Gradients in chain order `[Ṽᵀ, W̃_1, …, Ũ, W_L]`.
    pub fn backward(&self, cache: &ForwardCache, y: &Matrix, loss: LossKind) -> Result<Vec<Matrix>> {
        let dout = loss.grad(cache.output(), y)?;
        let refs: Vec<&Matrix> = self.chain.iter().collect();
        chain_backward(&refs, &self.act_after(), self.activation, cache, &dout)
    }

    pub fn loss(&self, x: &Matrix, y: &Matrix, loss: LossKind) -> Result<f64> {
        loss.value(self.forward(x, Mode::Eval)?.output(), y)
    }

    fn core_init(r: usize, count: usize, eps: f64, seed: u64) -> Result<Vec<Matrix>> {
        let mut g = rng::stream(seed, tags::LOWRANK);
        (0..count).map(|_| Ok(semi_orthogonal_from(&mut g, r, r, eps)?)).collect()
    }

    /// Factors spanning the complement of the small-update subspace,
    /// propagated through the hidden layers, plus `r − 2K` seeded columns
    /// from the complements.
    pub fn sbig_factors(full: &MlpParams, g0: &Matrix, eps: f64, r: usize, seed: u64) -> Result<FactorPair> {
        let d = full.input_dim();
        let m = full.width();
        let k = full.output_dim();
        if r < 2 * k || r > d || r > m {
            return Err(Error::Range(format!("rank r={r} must satisfy 2K={} <= r <= min(d, m)={}", 2 * k, d.min(m))));
        }
        let small = small_update_subspace(&full.layers[0], g0, eps, k)?;
        let v_big = orthonormal_complement(&small.v2, d)?;
        let depth = full.depth();
        let u_big = closed_form_small_block(&full.layers, v_big.columns(), eps, depth)?;
        let u_big = Basis::new(u_big)?;
        let mut g = rng::stream(seed, tags::LOWRANK + 100);
        let v_extra = random_within(&small.v2, r - 2 * k, &mut g)?;
        let u_rest = orthonormal_complement(&u_big, m)?;
        let u_extra = random_within(&u_rest, r - 2 * k, &mut g)?;
        Ok(FactorPair { u: u_big.columns().hstack(&u_extra)?, v: v_big.columns().hstack(&v_extra)? })
    }

    /// Seeded orthonormal columns orthogonal to both factors of `big`.
    pub fn perpendicular_factors(big: &FactorPair, seed: u64) -> Result<FactorPair> {
        let r = big.u.cols();
        let mut g = rng::stream(seed, tags::LOWRANK + 200);
        let u_perp = orthonormal_complement(&Basis::new(big.u.clone())?, big.u.rows())?;
        let v_perp = orthonormal_complement(&Basis::new(big.v.clone())?, big.v.rows())?;
        Ok(FactorPair { u: random_within(&u_perp, r, &mut g)?, v: random_within(&v_perp, r, &mut g)? })
    }

    fn assemble(full: &MlpParams, f: FactorPair, eps: f64, seed: u64, kind: InitKind, psi: f64) -> Result<Self> {
        let r = f.u.cols();
        let core = Self::core_init(r, full.depth() - 1, eps, seed)?;
        let head = full.layers[full.depth() - 1].clone();
        let mut out = Self::from_parts(&f.v, core, f.u, head, full.activation)?;
        out.head_frozen = full.frozen[full.depth() - 1];
        out.init_kind = kind;
        out.psi = psi;
        Ok(out)
    }

    /// S_big initialization from a full network and its initial
    /// first-layer gradient.
    pub fn sbig_init(full: &MlpParams, g0: &Matrix, eps: f64, r: usize, seed: u64) -> Result<Self> {
        let f = Self::sbig_factors(full, g0, eps, r, seed)?;
        Self::assemble(full, f, eps, seed, InitKind::Sbig, 0.0)
    }

    /// Haar-random orthonormal factors; the rest as [`Self::sbig_init`].
    pub fn random_init(full: &MlpParams, eps: f64, r: usize, seed: u64) -> Result<Self> {
        let (d, m) = (full.input_dim(), full.width());
        if r > d || r > m || r == 0 {
            return Err(Error::Range(format!("rank r={r} must satisfy 1 <= r <= min(d, m)")));
        }
        let mut g = rng::stream(seed, tags::LOWRANK + 300);
        let v = semi_orthogonal_from(&mut g, d, r, 1.0)?;
        let u = semi_orthogonal_from(&mut g, m, r, 1.0)?;
        Self::assemble(full, FactorPair { u, v }, eps, seed, InitKind::Random, 0.0)
    }

    /// S_big factors rotated `ψ` degrees toward a seeded perpendicular pair.
    pub fn angle_init(full: &MlpParams, g0: &Matrix, eps: f64, r: usize, psi: f64, seed: u64) -> Result<Self> {
        let big = Self::sbig_factors(full, g0, eps, r, seed)?;
        let perp = Self::perpendicular_factors(&big, seed)?;
        let f = angle_init(&big, &perp, psi)?;
        Self::assemble(full, f, eps, seed, InitKind::Angle, psi)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let write = |name: String, m: &Matrix| -> Result<()> {
            m.write_text(BufWriter::new(fs::File::create(dir.join(name))?))?;
            Ok(())
        };
        let depth = self.depth();
        for (l, w) in self.core().iter().enumerate() {
            write(format!("W{}.mat", l + 1), w)?;
        }
        write(format!("W{depth}.mat"), self.head())?;
        write("Utilde.mat".into(), self.utilde())?;
        write("Vtilde.mat".into(), &self.vtilde())?;
        let mut mask = "0".repeat(depth - 1);
        mask.push(if self.head_frozen { '1' } else { '0' });
        fs::write(
            dir.join("meta.txt"),
            format!(
                "{} {} {} {} {} {}\n{} {} {}\n",
                depth,
                self.utilde().rows(),
                self.chain[0].cols(),
                self.head().rows(),
                self.activation,
                mask,
                self.rank(),
                self.psi,
                self.init_kind
            ),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: String| -> Result<Matrix> {
            Ok(Matrix::read_text(BufReader::new(fs::File::open(dir.join(name))?))?)
        };
        let meta = fs::read_to_string(dir.join("meta.txt"))?;
        let lines: Vec<Vec<&str>> = meta.lines().map(|l| l.split_whitespace().collect()).collect();
        if lines.len() != 2 || lines[0].len() != 6 || lines[1].len() != 3 {
            return Err(Error::Input("bad low-rank metadata".into()));
        }
        let bad = |w: &str| Error::Input(format!("bad {w} in low-rank metadata"));
        let depth: usize = lines[0][0].parse().map_err(|_| bad("depth"))?;
        if depth < 2 {
            return Err(bad("depth"));
        }
        let activation: Activation = lines[0][4].parse()?;
        let core = (1..depth).map(|l| read(format!("W{l}.mat"))).collect::<Result<Vec<_>>>()?;
        let head = read(format!("W{depth}.mat"))?;
        let mut out =
            Self::from_parts(&read("Vtilde.mat".into())?, core, read("Utilde.mat".into())?, head, activation)?;
        out.head_frozen = lines[0][5].ends_with('1');
        out.psi = lines[1][1].parse().map_err(|_| bad("psi"))?;
        out.init_kind = lines[1][2].parse()?;
        if lines[1][0].parse() != Ok(out.rank()) {
            return Err(bad("rank"));
        }
        Ok(out)
    }
}

impl Trainable for LowRankMlp {
    fn weights(&self) -> &[Matrix] {
        &self.chain
    }

    fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.chain
    }

    fn frozen(&self) -> Vec<bool> {
        let mut f = vec![false; self.chain.len()];
        f[self.chain.len() - 1] = self.head_frozen;
        f
    }

    fn activation(&self) -> Activation {
        self.activation
    }

    fn loss_and_grads(&self, x: &Matrix, y: &Matrix, loss: LossKind, mode: Mode) -> Result<(Matrix, Vec<Matrix>)> {
        let cache = self.forward(x, mode)?;
        let grads = self.backward(&cache, y, loss)?;
        Ok((cache.output().clone(), grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_mixture;
    use crate::linalg::{orthonormality_error, principal_angles, sin_theta_norm};

    fn setup(depth: usize) -> (MlpParams, Matrix, crate::data::Dataset) {
        let data = gaussian_mixture(16, 2, 20, 3.0, 1).unwrap().whitened().unwrap();
        let full = MlpParams::init_semi_orthogonal(16, 20, 2, depth, 0.1, Activation::Gelu, 2).unwrap();
        let c = full.forward(&data.x, Mode::Eval).unwrap();
        let g0 = full.backward(&c, &data.y, LossKind::Squared).unwrap().remove(0);
        (full, g0, data)
    }

    #[test]
    fn sbig_is_complement_of_small() {
        let (full, g0, _) = setup(3);
        let lr = LowRankMlp::sbig_init(&full, &g0, 0.1, 4, 3).unwrap();
        let small = small_update_subspace(&full.layers[0], &g0, 0.1, 2).unwrap();
        assert!(lr.vtilde().tr_matmul(small.v2.columns()).unwrap().max_abs() < 1e-8);
        assert!(orthonormality_error(lr.utilde()) < 1e-8);
        assert_eq!(lr.core().len(), 2);
    }

    #[test]
    fn two_layer_utilde_is_mapped_vtilde() {
        let (full, g0, _) = setup(2);
        let lr = LowRankMlp::sbig_init(&full, &g0, 0.1, 4, 3).unwrap();
        let mapped = full.layers[0].matmul(&lr.vtilde()).unwrap().scale(10.0);
        assert!(mapped.max_abs_diff(lr.utilde()) < 1e-10);
    }

    #[test]
    fn extra_columns_stay_orthonormal() {
        let (full, g0, _) = setup(3);
        let lr = LowRankMlp::sbig_init(&full, &g0, 0.1, 8, 3).unwrap();
        assert!(orthonormality_error(&lr.vtilde()) < 1e-8);
        assert!(orthonormality_error(lr.utilde()) < 1e-8);
        assert!(LowRankMlp::sbig_init(&full, &g0, 0.1, 3, 3).is_err());
        assert!(LowRankMlp::sbig_init(&full, &g0, 0.1, 17, 3).is_err());
    }

    #[test]
    fn random_init_seeds_differ() {
        let (full, _, _) = setup(3);
        let a = LowRankMlp::random_init(&full, 0.1, 4, 1).unwrap();
        let b = LowRankMlp::random_init(&full, 0.1, 4, 2).unwrap();
        assert!(orthonormality_error(&a.vtilde()) < 1e-10);
        assert_ne!(a.vtilde(), b.vtilde());
    }

    #[test]
    fn angle_endpoints() {
        let (full, g0, _) = setup(3);
        let big = LowRankMlp::sbig_factors(&full, &g0, 0.1, 4, 1).unwrap();
        let perp = LowRankMlp::perpendicular_factors(&big, 1).unwrap();
        let a0 = angle_init(&big, &perp, 0.0).unwrap();
        assert_eq!(a0.u, big.u);
        let a90 = angle_init(&big, &perp, 90.0).unwrap();
        assert_eq!(a90.v, perp.v);
        let angles =
            principal_angles(&Basis::new(a90.v.clone()).unwrap(), &Basis::new(big.v.clone()).unwrap()).unwrap();
        assert!(angles.iter().all(|a| (a - std::f64::consts::FRAC_PI_2).abs() < 1e-8));
        let a45 = angle_init(&big, &perp, 45.0).unwrap();
        for j in 0..4 {
            let n: f64 = a45.u.col(j).iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-10);
        }
        assert!(angle_init(&big, &perp, 91.0).is_err());
        assert!(angle_init(&big, &perp, -1.0).is_err());
    }

    #[test]
    fn full_rank_identity_factors_match_full_network() {
        let (full, _, data) = setup(2);
        let lr = LowRankMlp::from_parts(
            &Matrix::identity(16),
            vec![full.layers[0].submatrix(0, 0, 16, 16)],
            Matrix::identity(16),
            full.layers[1].submatrix(0, 0, 2, 16),
            full.activation,
        )
        .unwrap();
        let twin = MlpParams::new(
            vec![full.layers[0].submatrix(0, 0, 16, 16), full.layers[1].submatrix(0, 0, 2, 16)],
            full.activation,
            vec![false; 2],
        )
        .unwrap();
        let a = lr.forward(&data.x, Mode::Eval).unwrap();
        let b = twin.forward(&data.x, Mode::Eval).unwrap();
        assert!(a.output().max_abs_diff(b.output()) < 1e-12);
    }

    #[test]
    fn zero_core_gives_zero_output() {
        let (full, g0, data) = setup(3);
        let mut lr = LowRankMlp::sbig_init(&full, &g0, 0.1, 4, 3).unwrap();
        for w in &mut lr.chain[1..3] {
            *w = Matrix::zeros(4, 4);
        }
        assert_eq!(lr.forward(&data.x, Mode::Eval).unwrap().output().max_abs(), 0.0);
    }

    #[test]
    fn fewer_parameters_and_roundtrip() {
        let (full, g0, _) = setup(4);
        let lr = LowRankMlp::angle_init(&full, &g0, 0.1, 4, 30.0, 3).unwrap();
        assert!(lr.param_count() < full.param_count());
        let dir = tempfile::tempdir().unwrap();
        lr.save(dir.path()).unwrap();
        let back = LowRankMlp::load(dir.path()).unwrap();
        assert_eq!(back, lr);
        let s = sin_theta_norm(&Basis::new(back.vtilde()).unwrap(), &Basis::new(lr.vtilde()).unwrap()).unwrap();
        assert!(s < 1e-12);
    }
}
