use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;
use crate::linalg::Matrix;
use crate::rng::{self, tags};

/// Elementwise nonlinearity. Every kind satisfies `φ(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Elu {
        alpha: f64,
    },
    Gelu,
    Silu,
    Relu,
    LeakyRelu {
        alpha: f64,
    },
    /// Randomized leaky ReLU: negative slope drawn from `U(lo, hi)` per
    /// element in training, fixed to the midpoint in evaluation.
    Rrelu {
        lo: f64,
        hi: f64,
    },
}

impl Activation {
    pub const ELU: Activation = Activation::Elu { alpha: 1.0 };
    pub const LEAKY_RELU: Activation = Activation::LeakyRelu { alpha: 0.01 };
    pub const RRELU: Activation = Activation::Rrelu { lo: 1.0 / 8.0, hi: 1.0 / 3.0 };

    pub const ALL: [Activation; 6] = [
        Activation::ELU,
        Activation::Gelu,
        Activation::Silu,
        Activation::Relu,
        Activation::LEAKY_RELU,
        Activation::RRELU,
    ];

    pub fn is_smooth(&self) -> bool {
        matches!(self, Activation::Elu { .. } | Activation::Gelu | Activation::Silu)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Elu { .. } => "elu",
            Activation::Gelu => "gelu",
            Activation::Silu => "silu",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Rrelu { .. } => "rrelu",
        }
    }

    /// Negative-side slope used outside training for RReLU.
    fn eval_slope(&self) -> f64 {
        match *self {
            Activation::Rrelu { lo, hi } => 0.5 * (lo + hi),
            Activation::LeakyRelu { alpha } => alpha,
            _ => 0.0,
        }
    }

    /// `φ(x)`. For RReLU this is the evaluation-mode function.
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x.exp_m1()
                }
            }
            Activation::Gelu => x * norm_cdf(x),
            Activation::Silu => x * sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { .. } | Activation::Rrelu { .. } => {
                if x >= 0.0 {
                    x
                } else {
                    self.eval_slope() * x
                }
            }
        }
    }

    /// `φ'(x)`; kinks take the right derivative.
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha * x.exp()
                }
            }
            Activation::Gelu => norm_cdf(x) + x * norm_pdf(x),
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { .. } | Activation::Rrelu { .. } => {
                if x >= 0.0 {
                    1.0
                } else {
                    self.eval_slope()
                }
            }
        }
    }

    /// `φ''(x)` for smooth kinds; zero for piecewise-linear ones.
    pub fn second_deriv(&self, x: f64) -> f64 {
        match *self {
            Activation::Elu { alpha } => {
                if x > 0.0 {
                    0.0
                } else {
                    alpha * x.exp()
                }
            }
            Activation::Gelu => norm_pdf(x) * (2.0 - x * x),
            Activation::Silu => {
                let s = sigmoid(x);
                let ds = s * (1.0 - s);
                ds * (2.0 + x * (1.0 - 2.0 * s))
            }
            _ => 0.0,
        }
    }

    /// Elementwise `φ`, evaluation mode.
    pub fn apply(&self, z: &Matrix) -> Matrix {
        z.map(|x| self.value(x))
    }

    /// Elementwise `φ'`, evaluation mode.
    pub fn apply_deriv(&self, z: &Matrix) -> Matrix {
        z.map(|x| self.deriv(x))
    }

    /// Training-mode RReLU: one slope per element from the seeded stream.
    /// Returns the activations and the slopes used.
    pub fn apply_rrelu_train(&self, z: &Matrix, seed: u64) -> (Matrix, Matrix) {
        let (lo, hi) = match *self {
            Activation::Rrelu { lo, hi } => (lo, hi),
            _ => {
                let s = self.eval_slope();
                (s, s)
            }
        };
        let mut r = rng::stream(seed, tags::RRELU);
        let slopes = r.uniform_matrix(z.rows(), z.cols(), lo, hi);
        let out = Matrix::from_fn(z.rows(), z.cols(), |i, j| {
            let x = z[(i, j)];
            if x >= 0.0 {
                x
            } else {
                slopes[(i, j)] * x
            }
        });
        (out, slopes)
    }

    /// `(β, μ, φ'(0))` from a dense grid on `[−50, 50]` with step `1e-3`.
    pub fn bounds(&self) -> ActivationBounds {
        const LO: f64 = -50.0;
        const STEP: f64 = 1e-3;
        const POINTS: usize = 100_001;
        let mut beta: f64 = 0.0;
        let mut mu: f64 = 0.0;
        for k in 0..POINTS {
            let x = LO + STEP * k as f64;
            beta = beta.max(self.deriv(x).abs());
            if self.is_smooth() {
                let d2 = (self.deriv(x + STEP) - self.deriv(x - STEP)) / (2.0 * STEP);
                mu = mu.max(d2.abs());
            }
        }
        ActivationBounds { beta: beta * (1.0 + 1e-6), mu: self.is_smooth().then_some(mu), dphi0: self.deriv(0.0) }
    }
}

/// Derivative bounds `|φ'| ≤ β`, `|φ''| ≤ μ` and the slope at the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActivationBounds {
    pub beta: f64,
    /// `None` for piecewise-linear kinds.
    pub mu: Option<f64>,
    pub dphi0: f64,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Activation::Elu { alpha } if alpha != 1.0 => write!(f, "elu:{alpha}"),
            Activation::LeakyRelu { alpha } if alpha != 0.01 => write!(f, "leaky_relu:{alpha}"),
            Activation::Rrelu { lo, hi } if (lo, hi) != (1.0 / 8.0, 1.0 / 3.0) => {
                write!(f, "rrelu:{lo}:{hi}")
            }
            _ => f.write_str(self.name()),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// `name` or `name:param[:param]`, case-insensitive.
    fn from_str(s: &str) -> Result<Self, Error> {
        let lower = s.trim().to_ascii_lowercase();
        let mut parts = lower.split(':');
        let name = parts.next().unwrap_or_default();
        let params: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| Error::Input(format!("bad activation parameter in `{s}`"))))
            .collect::<Result<_, _>>()?;
        let act = match (name, params.as_slice()) {
            ("elu", []) => Activation::ELU,
            ("elu", [a]) => Activation::Elu { alpha: *a },
            ("gelu", []) => Activation::Gelu,
            ("silu", []) => Activation::Silu,
            ("relu", []) => Activation::Relu,
            ("leaky_relu" | "leakyrelu", []) => Activation::LEAKY_RELU,
            ("leaky_relu" | "leakyrelu", [a]) => Activation::LeakyRelu { alpha: *a },
            ("rrelu", []) => Activation::RRELU,
            ("rrelu", [lo, hi]) if lo <= hi => Activation::Rrelu { lo: *lo, hi: *hi },
            _ => return Err(Error::Input(format!("unknown activation `{s}`"))),
        };
        Ok(act)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}
