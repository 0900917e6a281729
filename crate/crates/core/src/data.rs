//! Synthetic Gaussian-mixture classification data.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{thin_svd, LinalgError, Matrix};
use crate::rng::{self, tags};

/// Inputs `X ∈ R^{d×N}` (columns are samples, grouped by class) and one-hot
/// labels `Y ∈ R^{K×N}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub whitened: bool,
    pub classes: usize,
    pub per_class: usize,
    pub variance: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }

    /// Same labels, inputs replaced by their whitened version.
    pub fn whitened(&self) -> Result<Dataset> {
        Ok(Dataset { x: whiten(&self.x)?, whitened: true, ..self.clone() })
    }

    /// Columns `idx` of both inputs and labels.
    pub fn batch(&self, idx: &[usize]) -> (Matrix, Matrix) {
        (self.x.select_columns(idx), self.y.select_columns(idx))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.x.write_text(BufWriter::new(fs::File::create(dir.join("X.mat"))?))?;
        self.y.write_text(BufWriter::new(fs::File::create(dir.join("Y.mat"))?))?;
        fs::write(
            dir.join("meta.txt"),
            format!(
                "{} {} {} {} {} {}\n",
                self.dim(),
                self.classes,
                self.per_class,
                self.variance,
                self.seed,
                self.whitened
            ),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let read =
            |name: &str| -> Result<Matrix> { Ok(Matrix::read_text(BufReader::new(fs::File::open(dir.join(name))?))?) };
        let x = read("X.mat")?;
        let y = read("Y.mat")?;
        let meta = fs::read_to_string(dir.join("meta.txt"))?;
        let f: Vec<&str> = meta.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::Input(format!("bad dataset metadata `{}`", meta.trim())));
        }
        let bad = |what: &str| Error::Input(format!("bad {what} in dataset metadata"));
        let d: usize = f[0].parse().map_err(|_| bad("d"))?;
        let classes: usize = f[1].parse().map_err(|_| bad("K"))?;
        let per_class: usize = f[2].parse().map_err(|_| bad("n"))?;
        let variance: f64 = f[3].parse().map_err(|_| bad("sigma2"))?;
        let seed: u64 = f[4].parse().map_err(|_| bad("seed"))?;
        let whitened: bool = f[5].parse().map_err(|_| bad("whitened"))?;
        if x.rows() != d || y.rows() != classes || x.cols() != classes * per_class || y.cols() != x.cols() {
            return Err(Error::Input("dataset files disagree with metadata".into()));
        }
        Ok(Dataset { x, y, whitened, classes, per_class, variance, seed })
    }
}

/// `K` standard-normal class means in `R^d`, then `n` samples per class at
/// `mean + σ·z`. Columns are ordered class by class and `Y = I_K ⊗ 1_nᵀ`.
pub fn gaussian_mixture(d: usize, classes: usize, per_class: usize, variance: f64, seed: u64) -> Result<Dataset> {
    if d == 0 || classes == 0 || per_class == 0 {
        return Err(Error::Input(format!("mixture needs positive counts, got d={d} K={classes} n={per_class}")));
    }
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::Input(format!("variance must be finite and >= 0, got {variance}")));
    }
    let mut mean_rng = rng::stream(seed, tags::MIXTURE_MEANS);
    let means = mean_rng.gaussian_matrix(classes, d);
    let mut noise = rng::stream(seed, tags::MIXTURE_NOISE);
    let sd = variance.sqrt();
    let n_total = classes * per_class;
    let mut x = Matrix::zeros(d, n_total);
    let mut y = Matrix::zeros(classes, n_total);
    for k in 0..classes {
        for s in 0..per_class {
            let j = k * per_class + s;
            for i in 0..d {
                x[(i, j)] = means[(k, i)] + sd * noise.normal();
            }
            y[(k, j)] = 1.0;
        }
    }
    Ok(Dataset { x, y, whitened: false, classes, per_class, variance, seed })
}

/// Polar whitening: with `x = LΣRᵀ`, returns `LRᵀ` so that `out·outᵀ = I`.
pub fn whiten(x: &Matrix) -> Result<Matrix> {
    let d = x.rows();
    if x.cols() < d {
        return Err(LinalgError::Rank(format!("{}x{} input cannot have rank {d}", d, x.cols())).into());
    }
    let svd = thin_svd(x)?;
    let (s1, sd) = (svd.sigma(1), svd.sigma(d));
    if !(sd >= 1e-12 * s1) || s1 == 0.0 {
        return Err(LinalgError::Rank(format!("sigma_d/sigma_1 = {:e}", sd / s1)).into());
    }
    Ok(svd.left.matmul_tr(&svd.right)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_shapes_and_labels() {
        let ds = gaussian_mixture(32, 4, 500, 3.0, 1).unwrap();
        assert_eq!(ds.x.shape(), (32, 2000));
        assert_eq!(ds.y.shape(), (4, 2000));
        for k in 0..4 {
            let row_sum: f64 = ds.y.row(k).iter().sum();
            assert_eq!(row_sum, 500.0);
        }
        for j in 0..2000 {
            let col = ds.y.col(j);
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(col[j / 500], 1.0);
        }
    }

    #[test]
    fn zero_variance_collapses_to_means() {
        let ds = gaussian_mixture(5, 3, 4, 0.0, 9).unwrap();
        for k in 0..3 {
            let first = ds.x.col(k * 4);
            for s in 1..4 {
                assert_eq!(ds.x.col(k * 4 + s), first);
            }
        }
    }

    #[test]
    fn whiten_scaled_identity_and_idempotent() {
        let x = Matrix::identity(4).scale(2.0);
        let w = whiten(&x).unwrap();
        assert!(w.max_abs_diff(&Matrix::identity(4)) < 1e-14);

        let ds = gaussian_mixture(6, 2, 10, 1.0, 3).unwrap();
        let w1 = whiten(&ds.x).unwrap();
        let w2 = whiten(&w1).unwrap();
        assert!(w1.max_abs_diff(&w2) < 1e-12);
    }

    #[test]
    fn whiten_rejects_rank_deficient() {
        let x = Matrix::from_fn(3, 10, |i, j| if i == 2 { 0.0 } else { (i + j) as f64 });
        assert!(whiten(&x).is_err());
        assert!(whiten(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn invalid_counts() {
        assert!(gaussian_mixture(0, 1, 1, 1.0, 0).is_err());
        assert!(gaussian_mixture(1, 1, 1, -1.0, 0).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gaussian_mixture(4, 2, 3, 3.0, 5).unwrap().whitened().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }
}
