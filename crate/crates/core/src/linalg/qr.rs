//! Householder QR.

use super::Matrix;

/// Householder reflectors of a QR factorization, kept in compact form.
pub struct HouseholderQr {
    /// Reflector vectors `v_k` (length m, zero above k).
    reflectors: Vec<Vec<f64>>,
    r: Matrix,
    m: usize,
}

impl HouseholderQr {
    pub fn new(a: &Matrix) -> Self {
        let (m, n) = a.shape();
        let mut r = a.clone();
        let mut reflectors = Vec::with_capacity(n.min(m));
        for k in 0..n.min(m) {
            let norm: f64 = (k..m).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
            let mut v = vec![0.0; m];
            if norm == 0.0 {
                reflectors.push(v);
                continue;
            }
            let alpha = if r[(k, k)] >= 0.0 { -norm } else { norm };
            for i in k..m {
                v[i] = r[(i, k)];
            }
            v[k] -= alpha;
            let vnorm_sq: f64 = v[k..].iter().map(|x| x * x).sum();
            if vnorm_sq == 0.0 {
                reflectors.push(vec![0.0; m]);
                continue;
            }
            let scale = 2.0 / vnorm_sq;
            for j in k..n {
                let proj: f64 = (k..m).map(|i| v[i] * r[(i, j)]).sum::<f64>() * scale;
                for i in k..m {
                    r[(i, j)] -= proj * v[i];
                }
            }
            for i in k + 1..m {
                r[(i, k)] = 0.0;
            }
            reflectors.push(v);
        }
        Self { reflectors, r, m }
    }

    /// Upper-triangular factor (m×n).
    pub fn r(&self) -> &Matrix {
        &self.r
    }

    /// First `ncols` columns of the orthogonal factor `Q = H_1 ··· H_k`.
    pub fn q_columns(&self, ncols: usize) -> Matrix {
        let m = self.m;
        let mut q = Matrix::zeros(m, ncols);
        for j in 0..ncols.min(m) {
            q[(j, j)] = 1.0;
        }
        for v in self.reflectors.iter().rev() {
            let vnorm_sq: f64 = v.iter().map(|x| x * x).sum();
            if vnorm_sq == 0.0 {
                continue;
            }
            let scale = 2.0 / vnorm_sq;
            for j in 0..ncols {
                let proj: f64 = (0..m).map(|i| v[i] * q[(i, j)]).sum::<f64>() * scale;
                if proj != 0.0 {
                    for i in 0..m {
                        q[(i, j)] -= proj * v[i];
                    }
                }
            }
        }
        q
    }

    pub fn full_q(&self) -> Matrix {
        self.q_columns(self.m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs() {
        let a = Matrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * j as f64);
        let qr = HouseholderQr::new(&a);
        let q = qr.full_q();
        assert!(q.tr_matmul(&q).unwrap().max_abs_diff(&Matrix::identity(5)) < 1e-14);
        let back = q.matmul(qr.r()).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-13);
    }
}
