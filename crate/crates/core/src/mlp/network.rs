use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use super::Activation;
use crate::error::{Error, Result};
use crate::linalg::{semi_orthogonal_from, LinalgError, Matrix};
use crate::rng::{self, tags};

/// How RReLU slopes are chosen on a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Midpoint slope; identical to the deterministic activation.
    Eval,
    /// Fresh slopes from a seeded stream, one per element.
    Train(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `½‖Z − Y‖_F²`
    Squared,
    /// Mean over columns of `−log softmax(Z)[true class]`.
    CrossEntropy,
}

impl LossKind {
    pub fn value(&self, z: &Matrix, y: &Matrix) -> Result<f64> {
        match self {
            LossKind::Squared => loss_squared(z, y),
            LossKind::CrossEntropy => loss_cross_entropy(z, y),
        }
    }

    /// `∂loss/∂Z`.
    pub fn grad(&self, z: &Matrix, y: &Matrix) -> Result<Matrix> {
        match self {
            LossKind::Squared => Ok(z.sub(y)?),
            LossKind::CrossEntropy => {
                let labels = one_hot_labels(y)?;
                check_same(z, y, "cross-entropy gradient")?;
                let n = z.cols() as f64;
                let mut g = softmax_columns(z);
                for (j, &k) in labels.iter().enumerate() {
                    g[(k, j)] -= 1.0;
                }
                Ok(g.scale(1.0 / n))
            }
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "squared" | "mse" => Ok(LossKind::Squared),
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            other => Err(Error::Input(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Squared => "squared",
            LossKind::CrossEntropy => "cross_entropy",
        })
    }
}

fn check_same(z: &Matrix, y: &Matrix, op: &str) -> Result<()> {
    if z.shape() != y.shape() {
        return Err(LinalgError::shape_mismatch(op, z.shape(), y.shape()).into());
    }
    Ok(())
}

pub fn loss_squared(z: &Matrix, y: &Matrix) -> Result<f64> {
    check_same(z, y, "squared loss")?;
    Ok(0.5 * z.sub(y)?.frobenius_norm_sq())
}

pub fn loss_cross_entropy(z: &Matrix, y: &Matrix) -> Result<f64> {
    check_same(z, y, "cross-entropy")?;
    let labels = one_hot_labels(y)?;
    let mut total = 0.0;
    for (j, &k) in labels.iter().enumerate() {
        let col = z.col(j);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + col.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - col[k];
    }
    Ok(total / z.cols() as f64)
}

/// Index of the single 1 in each column.
fn one_hot_labels(y: &Matrix) -> Result<Vec<usize>> {
    (0..y.cols())
        .map(|j| {
            let col = y.col(j);
            let ones: Vec<usize> = (0..col.len()).filter(|&i| col[i] == 1.0).collect();
            let zeros = col.iter().filter(|&&v| v == 0.0).count();
            if ones.len() == 1 && zeros == col.len() - 1 {
                Ok(ones[0])
            } else {
                Err(Error::Input(format!("label column {j} is not one-hot")))
            }
        })
        .collect()
}

fn softmax_columns(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for j in 0..z.cols() {
        let col = z.col(j);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = col.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / s).collect();
        out.set_col(j, &p);
    }
    out
}

/// Intermediate values of a forward pass through a chain of linear maps.
///
/// `pre[l] = W_l · post[l−1]` (with `post[−1]` the input) and `post[l]` is
/// `φ(pre[l])` for layers followed by an activation, `pre[l]` otherwise.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
    /// RReLU slopes drawn in training mode, per activated layer.
    pub slopes: Vec<Option<Matrix>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }

    fn layer_input(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }
}

pub(crate) fn chain_forward(
    layers: &[&Matrix],
    act_after: &[bool],
    act: Activation,
    x: &Matrix,
    mode: Mode,
) -> Result<ForwardCache> {
    debug_assert_eq!(layers.len(), act_after.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(layers.len());
    let mut slopes = Vec::with_capacity(layers.len());
    for (l, w) in layers.iter().enumerate() {
        let h = if l == 0 { x } else { &post[l - 1] };
        let z = w.matmul(h)?;
        let (out, s) = match (act_after[l], mode, act) {
            (false, _, _) => (z.clone(), None),
            (true, Mode::Train(seed), Activation::Rrelu { .. }) => {
                let layer_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(l as u64);
                let (o, s) = act.apply_rrelu_train(&z, layer_seed);
                (o, Some(s))
            }
            (true, _, _) => (act.apply(&z), None),
        };
        pre.push(z);
        post.push(out);
        slopes.push(s);
    }
    Ok(ForwardCache { input: x.clone(), pre, post, slopes })
}

/// Reverse accumulation from `∂loss/∂output`; one gradient per layer.
pub(crate) fn chain_backward(
    layers: &[&Matrix],
    act_after: &[bool],
    act: Activation,
    cache: &ForwardCache,
    dout: &Matrix,
) -> Result<Vec<Matrix>> {
    if cache.pre.len() != layers.len() {
        return Err(Error::Input(format!("cache has {} layers, network has {}", cache.pre.len(), layers.len())));
    }
    let mut grads = vec![Matrix::zeros(0, 0); layers.len()];
    let mut delta = dout.clone();
    for l in (0..layers.len()).rev() {
        if act_after[l] {
            let z = &cache.pre[l];
            let d = match &cache.slopes[l] {
                Some(s) => Matrix::from_fn(z.rows(), z.cols(), |i, j| if z[(i, j)] >= 0.0 { 1.0 } else { s[(i, j)] }),
                None => act.apply_deriv(z),
            };
            delta = delta.hadamard(&d)?;
        }
        grads[l] = delta.matmul_tr(cache.layer_input(l))?;
        if l > 0 {
            delta = layers[l].tr_matmul(&delta)?;
        }
    }
    Ok(grads)
}

/// Weights `W_1 (m×d), W_2..W_{L−1} (m×m), W_L (K×m)` of
/// `f(X) = W_L φ(W_{L−1} φ(… φ(W_1 X)))`, without biases.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Matrix>,
    pub activation: Activation,
    pub frozen: Vec<bool>,
}

impl MlpParams {
    pub fn new(layers: Vec<Matrix>, activation: Activation, frozen: Vec<bool>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Input("network needs at least one layer".into()));
        }
        if frozen.len() != layers.len() {
            return Err(Error::Input(format!("{} frozen flags for {} layers", frozen.len(), layers.len())));
        }
        for l in 1..layers.len() {
            if layers[l].cols() != layers[l - 1].rows() {
                return Err(LinalgError::shape_mismatch("layer chain", layers[l - 1].shape(), layers[l].shape()).into());
            }
        }
        Ok(Self { layers, activation, frozen })
    }

    /// Hidden layers ε-scaled (semi-)orthogonal, head iid `U(−1, 1)`.
    pub fn init_semi_orthogonal(
        d: usize,
        m: usize,
        k: usize,
        depth: usize,
        eps: f64,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if depth < 2 {
            return Err(Error::Input(format!("depth must be at least 2, got {depth}")));
        }
        let mut r = rng::stream(seed, tags::LAYER_INIT);
        let mut layers = Vec::with_capacity(depth);
        layers.push(semi_orthogonal_from(&mut r, m, d, eps)?);
        for _ in 1..depth - 1 {
            layers.push(semi_orthogonal_from(&mut r, m, m, eps)?);
        }
        layers.push(rng::stream(seed, tags::HEAD_INIT).uniform_matrix(k, m, -1.0, 1.0));
        Self::new(layers, activation, vec![false; depth])
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.depth() - 1].rows()
    }

    pub fn width(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|w| w.rows() * w.cols()).sum()
    }

    fn act_after(&self) -> Vec<bool> {
        (0..self.depth()).map(|l| l + 1 < self.depth()).collect()
    }

    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<ForwardCache> {
        let refs: Vec<&Matrix> = self.layers.iter().collect();
        chain_forward(&refs, &self.act_after(), self.activation, x, mode)
    }

    /// Gradients for every layer, frozen or not.
    pub fn backward(&self, cache: &ForwardCache, y: &Matrix, loss: LossKind) -> Result<Vec<Matrix>> {
        let dout = loss.grad(cache.output(), y)?;
        let refs: Vec<&Matrix> = self.layers.iter().collect();
        chain_backward(&refs, &self.act_after(), self.activation, cache, &dout)
    }

    pub fn loss(&self, x: &Matrix, y: &Matrix, loss: LossKind) -> Result<f64> {
        loss.value(self.forward(x, Mode::Eval)?.output(), y)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (l, w) in self.layers.iter().enumerate() {
            w.write_text(BufWriter::new(fs::File::create(dir.join(format!("W{}.mat", l + 1)))?))?;
        }
        let mask: String = self.frozen.iter().map(|&f| if f { '1' } else { '0' }).collect();
        fs::write(
            dir.join("meta.txt"),
            format!(
                "{} {} {} {} {} {}\n",
                self.depth(),
                self.width(),
                self.input_dim(),
                self.output_dim(),
                self.activation,
                mask
            ),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = fs::read_to_string(dir.join("meta.txt"))?;
        let f: Vec<&str> = meta.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::Input(format!("bad network metadata `{}`", meta.trim())));
        }
        let depth: usize = f[0].parse().map_err(|_| Error::Input("bad depth in metadata".into()))?;
        let activation: Activation = f[4].parse()?;
        let frozen: Vec<bool> = f[5].chars().map(|c| c == '1').collect();
        let layers = (1..=depth)
            .map(|l| -> Result<Matrix> {
                let file = fs::File::open(dir.join(format!("W{l}.mat")))?;
                Ok(Matrix::read_text(BufReader::new(file))?)
            })
            .collect::<Result<Vec<_>>>()?;
        let p = Self::new(layers, activation, frozen)?;
        let dims_ok =
            f[1].parse() == Ok(p.width()) && f[2].parse() == Ok(p.input_dim()) && f[3].parse() == Ok(p.output_dim());
        if !dims_ok {
            return Err(Error::Input("network files disagree with metadata".into()));
        }
        Ok(p)
    }
}

/// `(W_2ᵀ(Z_2 − Y) ⊙ φ'(W_1X))Xᵀ`, the squared-loss first-layer gradient of
/// `W_2 φ(W_1 X)`.
pub fn two_layer_gradient(w1: &Matrix, w2: &Matrix, x: &Matrix, y: &Matrix, act: Activation) -> Result<Matrix> {
    let z1 = w1.matmul(x)?;
    let z2 = w2.matmul(&act.apply(&z1))?;
    let back = w2.tr_matmul(&z2.sub(y)?)?;
    Ok(back.hadamard(&act.apply_deriv(&z1))?.matmul_tr(x)?)
}
