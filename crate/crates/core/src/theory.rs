//! Numerical checks of the low-rank dynamics theory.
//!
//! Hard checks are deterministic inequalities and are collected in a
//! [`Report`]. Quantities that depend on unspecified constants (the decay
//! envelope and the subspace drift `δ(t)`) are fitted from the run and
//! reported as diagnostics only.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{orthonormal_complement, range_basis, thin_svd, Basis, Matrix};
use crate::mlp::{two_layer_gradient, Activation, ActivationBounds};
use crate::rng::{self, tags};
use crate::track::{LayerTrace, TraceRecord};

/// Relative tolerance on the per-step block bound.
pub const STEP_BOUND_TOL: f64 = 1e-8;

pub const REPORT_HEADER: &str = "check_name,epoch,measured,bound,slack,pass";

/// One line of a report. `slack = bound − measured`; for lower bounds the
/// sign is flipped so that a nonnegative slack always means a pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub epoch: Option<usize>,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

impl CheckRow {
    /// `measured ≤ bound`.
    pub fn upper(name: impl Into<String>, epoch: Option<usize>, measured: f64, bound: f64) -> Self {
        let slack = bound - measured;
        Self { name: name.into(), epoch, measured, bound, slack, pass: measured <= bound }
    }

    /// `measured ≥ bound`.
    pub fn lower(name: impl Into<String>, epoch: Option<usize>, measured: f64, bound: f64) -> Self {
        let slack = measured - bound;
        Self { name: name.into(), epoch, measured, bound, slack, pass: measured >= bound }
    }
}

/// Hard checks plus diagnostics that never affect the verdict.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<CheckRow>,
    pub diagnostics: Vec<CheckRow>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, other: Report) {
        self.checks.extend(other.checks);
        self.diagnostics.extend(other.diagnostics);
    }

    /// Prefixes every row name, e.g. with a trial or group label.
    pub fn prefixed(mut self, prefix: &str) -> Self {
        for r in self.checks.iter_mut().chain(self.diagnostics.iter_mut()) {
            r.name = format!("{prefix}/{}", r.name);
        }
        self
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|r| r.pass).count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.checks.iter().filter(|r| !r.pass)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|r| r.pass)
    }

    /// `PASS k/k` or `FAIL j/k` with `j` the number of failed checks.
    pub fn summary(&self) -> String {
        let total = self.checks.len();
        let failed = total - self.passed();
        if failed == 0 {
            format!("PASS {total}/{total}")
        } else {
            format!("FAIL {failed}/{total}")
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_rows(w, &self.checks)
    }

    pub fn write_diagnostics_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_rows(w, &self.diagnostics)
    }
}

fn write_rows<W: Write>(mut w: W, rows: &[CheckRow]) -> std::io::Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        let epoch = r.epoch.map_or_else(String::new, |e| e.to_string());
        writeln!(w, "{},{epoch},{},{},{},{}", r.name, r.measured, r.bound, r.slack, r.pass)?;
    }
    Ok(())
}

/// `r(ε)` together with the condition `r(ε) < φ'(0)·σ_K(W_2ᵀYXᵀ)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct REps {
    pub value: f64,
    /// `φ'(0)·σ_K(W_2ᵀYXᵀ)/2`.
    pub threshold: f64,
    pub holds: bool,
}

/// Radius of the initial singular-value intervals of `G_1(0)`.
///
/// Piecewise-linear kinds have no second-derivative bound; `μ = 0` is used
/// so the value is a lower envelope and the tail intervals are expected to
/// fail for them.
pub fn r_eps(w1_0: &Matrix, w2: &Matrix, x: &Matrix, y: &Matrix, eps: f64, bounds: &ActivationBounds) -> Result<REps> {
    let k = w2.rows();
    let d = x.rows();
    let mu = bounds.mu.unwrap_or(0.0);
    let s1 = thin_svd(w2)?.sigma(1);
    let hidden_max = w1_0.matmul(x)?.max_abs();
    let value = eps * bounds.dphi0 * s1 * s1 * (bounds.dphi0 + mu / 2.0 * eps)
        + mu * hidden_max * s1 * (bounds.beta * s1 * (d as f64).sqrt() * eps + y.frobenius_norm());
    let target = w2.tr_matmul(y)?.matmul_tr(x)?;
    let sk = thin_svd(&target)?.sigma(k);
    let threshold = bounds.dphi0 * sk / 2.0;
    Ok(REps { value, threshold, holds: value < threshold })
}

/// Interval checks on every singular value of `G_1(0)`: within `r` of
/// `φ'(0)·σ_i(W_2ᵀYXᵀ)` for `i ≤ K`, at most `r` beyond.
pub fn check_init_sval_intervals(
    g1_0: &Matrix,
    w2: &Matrix,
    y: &Matrix,
    x: &Matrix,
    r: f64,
    dphi0: f64,
    k: usize,
) -> Result<Vec<CheckRow>> {
    let g = thin_svd(g1_0)?.svals;
    let t = thin_svd(&w2.tr_matmul(y)?.matmul_tr(x)?)?.svals;
    if g.len() < k {
        return Err(Error::Range(format!("need at least {k} singular values, got {}", g.len())));
    }
    let mut rows = Vec::with_capacity(g.len());
    for (i, &s) in g.iter().enumerate() {
        if i < k {
            let centre = dphi0 * t.get(i).copied().unwrap_or(0.0);
            rows.push(CheckRow::upper(format!("init_sval_top_{}", i + 1), Some(0), (s - centre).abs(), r));
        } else {
            rows.push(CheckRow::upper(format!("init_sval_tail_{}", i + 1), Some(0), s, r));
        }
    }
    Ok(rows)
}

/// Local Lipschitz constant `μ·M·‖W_2‖₁ + β²·σ₁²(W_2)` of the first-layer
/// gradient.
pub fn gamma_l(w2: &Matrix, m: f64, bounds: &ActivationBounds) -> Result<f64> {
    let s1 = thin_svd(w2)?.sigma(1);
    Ok(bounds.mu.unwrap_or(0.0) * m * w2.norm_one() + bounds.beta * bounds.beta * s1 * s1)
}

/// Geometric envelope `c·λ^t` of a positive series, fitted by least squares
/// on its logarithm and then raised to dominate every point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Envelope {
    pub c: f64,
    pub lambda: f64,
}

impl Envelope {
    pub fn at(&self, t: f64) -> f64 {
        self.c * self.lambda.powf(t)
    }
}

pub fn fit_envelope(points: &[(f64, f64)]) -> Option<Envelope> {
    let pts: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, v)| v > 0.0 && v.is_finite()).collect();
    if pts.is_empty() {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = if stt > 0.0 { pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum::<f64>() / stt } else { 0.0 };
    let lambda = slope.exp();
    let c = pts.iter().map(|&(t, v)| v / lambda.powf(t)).fold(0.0, f64::max);
    Some(Envelope { c, lambda })
}

/// Fitted constants of the gradient-decay assumption.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientDecay {
    /// Amplitude of the envelope of `‖G_1(t)‖_F/‖G_1(0)‖_F`.
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub envelope: Envelope,
    pub pass: bool,
}

/// Fits `G1`, `G2`, `G3` from the first-layer gradients of a recorded run.
/// `sigma_k_target` is `σ_K(W_2ᵀYXᵀ)`.
pub fn check_gradient_decay(records: &[TraceRecord], k: usize, sigma_k_target: f64) -> Result<GradientDecay> {
    let first = records
        .first()
        .and_then(|r| r.layers.first())
        .ok_or_else(|| Error::Input("no recorded first-layer gradients".into()))?;
    if first.grad_svals.len() < k + 1 {
        return Err(Error::Range(format!("records hold {} gradient singular values", first.grad_svals.len())));
    }
    let n0 = first.gradnorm;
    if n0 <= 0.0 {
        return Err(Error::Precondition("initial gradient is zero".into()));
    }
    let mut ratios = Vec::with_capacity(records.len());
    let mut g2: f64 = 0.0;
    let mut g3 = f64::INFINITY;
    for rec in records {
        let t = &rec.layers[0];
        let norm_ratio = t.gradnorm / n0;
        ratios.push((rec.epoch as f64, norm_ratio));
        if norm_ratio > 0.0 {
            for i in 0..k {
                let s0 = first.grad_svals[i];
                if s0 > 0.0 {
                    g2 = g2.max(t.grad_svals[i] / s0 / norm_ratio);
                }
            }
        }
        g3 = g3.min((sigma_k_target - t.grad_svals[k]) / sigma_k_target);
    }
    let envelope = fit_envelope(&ratios).unwrap_or(Envelope { c: 0.0, lambda: 0.0 });
    Ok(GradientDecay { g1: envelope.c, g2, g3, envelope, pass: g3 > 0.0 && g2.is_finite() })
}

/// Initial block anchors of one framed layer: the off-diagonal blocks
/// vanish and the small block has norm `ε·√p`.
pub fn check_anchors(first: &LayerTrace, epoch: usize, eps: f64, p: usize) -> Vec<CheckRow> {
    let sp = (p as f64).sqrt();
    vec![
        CheckRow::upper("anchor_blk2", Some(epoch), first.block_norms[1], 1e-8),
        CheckRow::upper("anchor_blk3", Some(epoch), first.block_norms[2], 1e-8),
        CheckRow::upper("anchor_blk4", Some(epoch), (first.block_norms[3] / sp - eps).abs(), 1e-6 * eps),
    ]
}

/// Per-step block bound on the first layer and its `t = 0` anchors.
///
/// `lr(epoch)` is the step size used between epoch `t` and `t + 1`. Steps
/// are only checked between consecutive recorded epochs.
pub fn check_theorem_bound(
    records: &[TraceRecord],
    lr: impl Fn(usize) -> f64,
    eps: f64,
    p: usize,
) -> Result<Vec<CheckRow>> {
    let first = records
        .first()
        .and_then(|r| r.layers.first())
        .ok_or_else(|| Error::Input("no recorded first-layer blocks".into()))?;
    if p == 0 {
        return Err(Error::Range("p must be positive".into()));
    }
    let sp = (p as f64).sqrt();
    let mut rows = check_anchors(first, records[0].epoch, eps, p);
    for pair in records.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.epoch != prev.epoch + 1 {
            continue;
        }
        let steps = next.layers[0]
            .step_blocks
            .ok_or_else(|| Error::Input(format!("epoch {} has no block steps", next.epoch)))?;
        let bound = lr(prev.epoch) * prev.layers[0].rho_t * (1.0 + STEP_BOUND_TOL);
        for i in 1..4 {
            rows.push(CheckRow::upper(format!("step_blk{}", i + 1), Some(prev.epoch), steps[i] / sp, bound));
        }
    }
    Ok(rows)
}

/// Inputs to the drift diagnostic that are fixed over a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftInputs {
    pub gamma_l: f64,
    pub beta: f64,
    pub sigma1_w2: f64,
    pub loss0: f64,
    pub dphi0: f64,
    pub sigma_k_target: f64,
    pub r_eps: f64,
    pub lr: f64,
}

/// Absolute allowance for the drift rows; at `t = 0` the measured angle is
/// pure roundoff against `δ(0) = 0`.
pub const DRIFT_ROUNDOFF: f64 = 1e-10;

/// `δ(t)` with the unspecified constants replaced by the fitted gradient
/// envelope, compared with the measured `‖sinΘ(R_{1,1}(t), R_{1,1}(0))‖`.
/// Rows are diagnostics: a negative slack is a finding, not a failure.
pub fn drift_diagnostic(records: &[TraceRecord], inp: &DriftInputs, env: &Envelope) -> Vec<CheckRow> {
    let scale = inp.gamma_l * inp.beta * inp.sigma1_w2 * (2.0 * inp.loss0).sqrt();
    let lam = env.lambda.clamp(0.0, 1.0 - 1e-12);
    let amp = inp.lr * env.c / (1.0 - lam);
    records
        .iter()
        .map(|rec| {
            let t = &rec.layers[0];
            let denom = inp.dphi0 * inp.sigma_k_target - inp.r_eps - t.sigma_k1_g();
            let delta =
                if denom > 0.0 { scale * amp * (1.0 - lam.powf(rec.epoch as f64)) / denom } else { f64::INFINITY };
            CheckRow::upper("drift_delta", Some(rec.epoch), t.sin_grad_right, delta + DRIFT_ROUNDOFF)
        })
        .collect()
}

/// Terms of the tail lower bound on `σ_{d−K}(G_1(0))` for ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct TailBound {
    /// `None` when the radicand is negative.
    pub value: Option<f64>,
    pub radicand: f64,
    pub d_diag: Vec<f64>,
    pub r_prime: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Basis of the null space of `W_2ᵀΔ_2(0)`.
    pub null_basis: Basis,
}

/// Lower bound on `σ_{d−K}(G_1(0))` holding with probability `1 − δ` over
/// a Gaussian `W_1(0)` when `d = N` and `X` is orthogonal.
pub fn relu_tail_bound(w2: &Matrix, delta2_0: &Matrix, delta: f64, k: usize) -> Result<TailBound> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Range(format!("delta must lie in (0, 1), got {delta}")));
    }
    let e = w2.tr_matmul(delta2_0)?;
    let n = e.cols();
    if k >= n {
        return Err(Error::Range(format!("need K < N, got K={k}, N={n}")));
    }
    let row_space = range_basis(&e.transpose(), 1e-12)?;
    let null_basis = orthonormal_complement(&row_space, n)?;
    let d_diag: Vec<f64> = (0..n).map(|j| e.col(j).iter().map(|v| v * v).sum()).collect();
    let r_prime = (0..e.rows()).map(|i| e.row(i).iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
    let v = null_basis.columns();
    let dv = Matrix::from_fn(n, v.cols(), |i, j| d_diag[i] * v[(i, j)]);
    let vdv = v.tr_matmul(&dv)?;
    let eig = thin_svd(&vdv)?.svals;
    let lambda_max = eig.first().copied().unwrap_or(0.0);
    let lambda_min = eig.last().copied().unwrap_or(0.0);
    let dims = null_basis.dim().max(1) as f64;
    let log_term = (2.0 * dims / delta).ln();
    let radicand =
        lambda_min / 4.0 - (r_prime / 6.0 * log_term + (2.0 * log_term * r_prime * lambda_max / 16.0).sqrt());
    let value = (radicand >= 0.0).then(|| radicand.sqrt());
    Ok(TailBound { value, radicand, d_diag, r_prime, lambda_min, lambda_max, null_basis })
}

/// Setting for the ReLU tail Monte-Carlo.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailMcConfig {
    pub d: usize,
    pub k: usize,
    pub m: usize,
    pub eps: f64,
    pub delta: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for TailMcConfig {
    fn default() -> Self {
        Self { d: 16, k: 4, m: 2048, eps: 1e-2, delta: 0.1, draws: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailMcDraw {
    pub measured: f64,
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailMcResult {
    pub draws: Vec<TailMcDraw>,
    pub successes: usize,
    pub vacuous: usize,
    pub threshold: usize,
}

impl TailMcResult {
    pub fn pass(&self) -> bool {
        self.vacuous == 0 && self.successes >= self.threshold
    }
}

/// Median of `Binomial(n, q)` minus three standard deviations, rounded up.
pub fn binomial_threshold(n: usize, q: f64) -> usize {
    let mut cdf = 0.0;
    let mut median = n;
    let mut log_pmf = n as f64 * (1.0 - q).ln();
    for j in 0..=n {
        if j > 0 {
            log_pmf += ((n - j + 1) as f64 / j as f64).ln() + (q / (1.0 - q)).ln();
        }
        cdf += log_pmf.exp();
        if cdf >= 0.5 {
            median = j;
            break;
        }
    }
    let sd = (n as f64 * q * (1.0 - q)).sqrt();
    (median as f64 - 3.0 * sd).ceil().max(0.0) as usize
}

/// Draws `W_1(0)` with iid `N(0, ε²/m)` entries on orthogonal `d = N` data
/// and compares `σ_{d−K}(G_1(0))` with the tail bound on every draw.
pub fn relu_tail_monte_carlo(cfg: &TailMcConfig, parallel: bool) -> Result<TailMcResult> {
    let TailMcConfig { d, k, m, eps, delta, draws, seed } = *cfg;
    if d % k != 0 || k == 0 {
        return Err(Error::Input(format!("d={d} must be a positive multiple of K={k}")));
    }
    let data = crate::data::gaussian_mixture(d, k, d / k, 1.0, seed)?.whitened()?;
    let w2 = rng::stream(seed, tags::HEAD_INIT).uniform_matrix(k, m, -1.0, 1.0);
    let act = Activation::Relu;
    let outcomes = crate::par::map_indexed(draws, parallel, |i| -> Result<TailMcDraw> {
        let mut r = rng::stream(rng::derive(seed, i as u64), tags::GAUSSIAN_INIT);
        let w1 = r.gaussian_matrix(m, d).scale(eps / (m as f64).sqrt());
        let z2 = w2.matmul(&act.apply(&w1.matmul(&data.x)?))?;
        let delta2 = z2.sub(&data.y)?;
        let g = two_layer_gradient(&w1, &w2, &data.x, &data.y, act)?;
        let measured = thin_svd(&g)?.svals[d - k - 1];
        let bound = relu_tail_bound(&w2, &delta2, delta, k)?.value;
        Ok(TailMcDraw { measured, bound })
    });
    let draws = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let successes = draws.iter().filter(|t| t.bound.is_some_and(|b| t.measured >= b)).count();
    let vacuous = draws.iter().filter(|t| t.bound.is_none()).count();
    Ok(TailMcResult { threshold: binomial_threshold(draws.len(), 1.0 - delta), draws, successes, vacuous })
}

/// Mean singular values of `G_1(0)` for one activation and scale.
#[derive(Clone, Debug, PartialEq)]
pub struct SvalScalingRow {
    pub activation: Activation,
    pub eps: f64,
    pub mean_svals: Vec<f64>,
    /// Singular values of every trial, in trial order.
    pub trials: Vec<Vec<f64>>,
}

/// Setting for the initial-gradient scaling study.
#[derive(Clone, Debug, PartialEq)]
pub struct SvalScalingConfig {
    pub d: usize,
    pub k: usize,
    pub per_class: usize,
    pub variance: f64,
    pub m: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SvalScalingConfig {
    fn default() -> Self {
        Self { d: 64, k: 4, per_class: 250, variance: 3.0, m: 72, trials: 10, seed: 0 }
    }
}

/// Initial first-layer gradient of a two-layer net with semi-orthogonal
/// `W_1(0)` and `U(−1, 1)` head on whitened mixture data.
pub fn initial_gradient(cfg: &SvalScalingConfig, act: Activation, eps: f64, trial_seed: u64) -> Result<Matrix> {
    let data = crate::data::gaussian_mixture(cfg.d, cfg.k, cfg.per_class, cfg.variance, trial_seed)?.whitened()?;
    let net = crate::mlp::MlpParams::init_semi_orthogonal(cfg.d, cfg.m, cfg.k, 2, eps, act, trial_seed)?;
    two_layer_gradient(&net.layers[0], &net.layers[1], &data.x, &data.y, act)
}

pub fn sval_scaling_study(
    acts: &[Activation],
    eps_list: &[f64],
    cfg: &SvalScalingConfig,
    parallel: bool,
) -> Result<Vec<SvalScalingRow>> {
    let mut out = Vec::new();
    for &act in acts {
        for &eps in eps_list {
            let per_trial = crate::par::map_indexed(cfg.trials, parallel, |t| -> Result<Vec<f64>> {
                Ok(thin_svd(&initial_gradient(cfg, act, eps, cfg.seed + t as u64)?)?.svals)
            });
            let per_trial = per_trial.into_iter().collect::<Result<Vec<_>>>()?;
            let n = per_trial.first().map_or(0, Vec::len);
            let mean_svals =
                (0..n).map(|i| per_trial.iter().map(|s| s[i]).sum::<f64>() / per_trial.len() as f64).collect();
            out.push(SvalScalingRow { activation: act, eps, mean_svals, trials: per_trial });
        }
    }
    Ok(out)
}

/// `max/min` over the rows of `f(row)`, e.g. `σ_{K+1}/ε` for linear scaling
/// or `σ_{K+1}` for flatness.
pub fn spread(rows: &[&SvalScalingRow], f: impl Fn(&SvalScalingRow) -> f64) -> f64 {
    let vals: Vec<f64> = rows.iter().map(|r| f(r)).collect();
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}
