//! Test-side oracles shared by the integration suites.
#![allow(dead_code)]

use lowrankdyn::linalg::{
    random_semi_orthogonal, subspace_dist, subspace_intersection, thin_svd, Basis, DEFAULT_INTERSECTION_TOL,
};
use lowrankdyn::mlp::{Activation, LossKind, MlpParams, Mode};
use lowrankdyn::rng::{derive, stream, tags};
use lowrankdyn::track::{block_decompose, LayerFrame};
use lowrankdyn::Matrix;
use nalgebra::DMatrix;

pub const FD_STEP: f64 = 1e-6;

pub fn to_na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)])
}

pub fn random_basis(n: usize, k: usize, seed: u64) -> Basis {
    Basis::new(random_semi_orthogonal(n, k, 1.0, seed).unwrap()).unwrap()
}

/// Sine norm from the principal-angle cosines, via nalgebra.
pub fn oracle_sin_theta(u1: &Basis, u2: &Basis) -> f64 {
    let c = to_na(u1.columns()).transpose() * to_na(u2.columns());
    c.singular_values().iter().map(|s| 1.0 - s.min(1.0).powi(2)).sum::<f64>().max(0.0).sqrt()
}

/// Relative reconstruction error and the largest singular-value gap to
/// nalgebra, relative to `σ₁`.
pub fn svd_errors(a: &Matrix) -> (f64, f64) {
    let s = thin_svd(a).unwrap();
    let rel = s.reconstruct().sub(a).unwrap().frobenius_norm() / a.frobenius_norm();
    let mut oracle: Vec<f64> = to_na(a).singular_values().iter().copied().collect();
    oracle.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let gap = s.svals.iter().zip(&oracle).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / oracle[0];
    (rel, gap)
}

/// `|dist − √2·sinΘ|` for two random `k`-dimensional subspaces of `R^n`.
pub fn dist_sine_gap(n: usize, k: usize, seed: u64) -> f64 {
    let u1 = random_basis(n, k, seed);
    let u2 = random_basis(n, k, seed.wrapping_add(1));
    (subspace_dist(&u1, &u2).unwrap() - 2f64.sqrt() * oracle_sin_theta(&u1, &u2)).abs()
}

/// Dimension of the intersection of two random `(d−k)`-dimensional subspaces.
pub fn intersection_dim(d: usize, k: usize, seed: u64) -> usize {
    let a = random_basis(d, d - k, 2 * seed);
    let b = random_basis(d, d - k, 2 * seed + 1);
    subspace_intersection(&a, &b, DEFAULT_INTERSECTION_TOL).unwrap().dim()
}

/// Relative error of decomposing a random matrix into four blocks and
/// reassembling it.
pub fn block_reconstruction_error(m: usize, d: usize, p: usize, seed: u64) -> f64 {
    let u2 = random_basis(m, p, seed);
    let v2 = random_basis(d, p, seed ^ 0x5555);
    let frame = LayerFrame::from_small(&u2, &v2).unwrap();
    let w = stream(seed, tags::TEST).gaussian_matrix(m, d);
    let back = block_decompose(&w, &frame).unwrap().reassemble(&frame).unwrap();
    back.sub(&w).unwrap().frobenius_norm() / w.frobenius_norm()
}

pub fn gradient_instance(act: Activation, loss: LossKind, seed: u64) -> (MlpParams, Matrix, Matrix) {
    let (d, m, k, n) = (5, 7, 3, 9);
    let mut r = stream(derive(seed, 17), tags::TEST);
    let layers = vec![
        r.gaussian_matrix(m, d).scale(0.6),
        r.gaussian_matrix(m, m).scale(0.4),
        r.gaussian_matrix(k, m).scale(0.5),
    ];
    let x = r.gaussian_matrix(d, n);
    let y = match loss {
        LossKind::Squared => r.gaussian_matrix(k, n),
        LossKind::CrossEntropy => {
            Matrix::from_fn(k, n, |i, j| if i == (j * 5 + seed as usize) % k { 1.0 } else { 0.0 })
        }
    };
    (MlpParams::new(layers, act, vec![false; 3]).unwrap(), x, y)
}

/// Largest relative error over the layers of one instance, each measured
/// as `‖analytic − fd‖_F / max(‖analytic‖_F, ‖fd‖_F)`.
pub fn gradient_error(act: Activation, loss: LossKind, seed: u64) -> f64 {
    let (net, x, y) = gradient_instance(act, loss, seed);
    let cache = net.forward(&x, Mode::Eval).unwrap();
    let analytic = net.backward(&cache, &y, loss).unwrap();
    let mut worst: f64 = 0.0;
    for (l, g) in analytic.iter().enumerate() {
        let fd = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
            let mut plus = net.clone();
            plus.layers[l][(i, j)] += FD_STEP;
            let mut minus = net.clone();
            minus.layers[l][(i, j)] -= FD_STEP;
            (plus.loss(&x, &y, loss).unwrap() - minus.loss(&x, &y, loss).unwrap()) / (2.0 * FD_STEP)
        });
        let scale = g.frobenius_norm().max(fd.frobenius_norm());
        worst = worst.max(g.sub(&fd).unwrap().frobenius_norm() / scale);
    }
    worst
}

/// `⌈median − 3σ⌉` of `Binomial(n, q)`, from the exact pmf.
pub fn binomial_floor(n: usize, q: f64) -> usize {
    let pmf = |j: usize| -> f64 {
        let mut c = 1.0f64;
        for i in 0..j {
            c *= (n - i) as f64 / (i + 1) as f64;
        }
        c * q.powi(j as i32) * (1.0 - q).powi((n - j) as i32)
    };
    let mut cdf = 0.0;
    let mut median = n;
    for j in 0..=n {
        cdf += pmf(j);
        if cdf >= 0.5 {
            median = j;
            break;
        }
    }
    (median as f64 - 3.0 * (n as f64 * q * (1.0 - q)).sqrt()).ceil() as usize
}
