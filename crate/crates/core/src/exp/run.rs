use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::aggregate::{average_series, average_svals, average_trials, TrialTrace};
use super::config::{Experiment, ExperimentConfig};
use crate::data::{gaussian_mixture, Dataset};
use crate::error::Result;
use crate::linalg::thin_svd;
use crate::lowrank::LowRankMlp;
use crate::mlp::{Activation, LossKind, MlpParams, Mode};
use crate::optim::{Optimizer, OptimizerKind};
use crate::par;
use crate::theory::{self, CheckRow, DriftInputs, Report, SvalScalingConfig, TailMcConfig};
use crate::track::{deeper_subspaces, small_update_subspace, write_svals_csv, write_trace_csv, TraceRecord, Tracker};
use crate::train::{train, TrainConfig, Trainable};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    /// `config.resolved` contents.
    pub config: String,
    pub seeds: Vec<u64>,
    /// Produced files relative to the output directory, sorted.
    pub files: Vec<String>,
    pub wall_clock: Duration,
    pub version: &'static str,
    pub summary: String,
    pub excluded_trials: usize,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = format!(
            "version={}\nwall_clock_seconds={:.3}\nsummary={}\nexcluded_trials={}\nseeds={}\n[config]\n{}[files]\n",
            self.version,
            self.wall_clock.as_secs_f64(),
            self.summary,
            self.excluded_trials,
            seeds.join(","),
            self.config
        );
        for f in &self.files {
            s.push_str(f);
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: Report,
}

/// Output directory that remembers what was written.
struct Sink {
    root: PathBuf,
    files: Vec<String>,
}

impl Sink {
    fn create(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.push(rel.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn text(&mut self, rel: &str, body: &str) -> Result<()> {
        let mut w = self.create(rel)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

fn write_loss<W: Write>(mut w: W, mean: &[f64], std: Option<&[f64]>) -> std::io::Result<()> {
    match std {
        Some(sd) => {
            writeln!(w, "epoch,loss,loss_std")?;
            for (e, (m, s)) in mean.iter().zip(sd).enumerate() {
                writeln!(w, "{e},{m},{s}")?;
            }
        }
        None => {
            writeln!(w, "epoch,loss")?;
            for (e, m) in mean.iter().enumerate() {
                writeln!(w, "{e},{m}")?;
            }
        }
    }
    w.flush()
}

fn trial_dir(t: usize) -> String {
    format!("trial_{t:02}")
}

fn make_data(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let data = gaussian_mixture(cfg.d, cfg.k, cfg.per_class, cfg.variance, seed)?;
    if cfg.whiten {
        data.whitened()
    } else {
        Ok(data)
    }
}

fn train_config(cfg: &ExperimentConfig, opt: OptimizerKind, lr: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        optimizer: cfg.optimizer(opt),
        lr,
        schedule: cfg.schedule(),
        epochs: cfg.epochs,
        batch: (cfg.batch > 0).then_some(cfg.batch),
        loss: cfg.loss,
        weight_decay: cfg.weight_decay,
        track_every: cfg.track_every,
        seed,
    }
}

/// Fitted and computed constants of one two-layer trial.
#[derive(Clone, Debug, PartialEq)]
struct TheoryRow {
    r_eps: f64,
    threshold: f64,
    holds: bool,
    m: f64,
    gamma_l: f64,
    g1: f64,
    g2: f64,
    g3: f64,
    lambda: f64,
}

const THEORY_HEADER: &str = "trial,r_eps,eps_threshold,eps_condition,M,gamma_L,G1,G2,G3,lambda";

struct FullTrial {
    records: Vec<TraceRecord>,
    losses: Vec<f64>,
    report: Report,
    theory: Option<TheoryRow>,
}

impl FullTrial {
    fn error(&self) -> bool {
        self.records.iter().any(|r| r.error)
    }

    fn trace_rows(&self, k: usize) -> Vec<crate::track::TraceRow> {
        self.records.iter().flat_map(|r| r.rows(k)).collect()
    }

    fn svals(&self) -> Vec<(usize, usize, Vec<f64>)> {
        self.records
            .iter()
            .flat_map(|r| r.layers.iter().enumerate().map(move |(l, t)| (r.epoch, l + 1, t.svals.clone())))
            .collect()
    }
}

/// Whether the run is the setting in which the per-step bound is exact:
/// a two-layer net, frozen head, squared loss, full-batch GD.
fn exact_setting(cfg: &ExperimentConfig, act: Activation, opt: OptimizerKind) -> bool {
    cfg.depth == 2
        && cfg.freeze_head
        && cfg.loss == LossKind::Squared
        && opt == OptimizerKind::Gd
        && cfg.batch == 0
        && cfg.weight_decay == 0.0
        && act.is_smooth()
}

fn full_trial(cfg: &ExperimentConfig, act: Activation, lr: f64, opt: OptimizerKind, seed: u64) -> Result<FullTrial> {
    let data = make_data(cfg, seed)?;
    let mut net = MlpParams::init_semi_orthogonal(cfg.d, cfg.width, cfg.k, cfg.depth, cfg.eps, act, seed)?;
    let last = cfg.depth - 1;
    net.frozen[last] = cfg.freeze_head;
    let (_, g0) = net.loss_and_grads(&data.x, &data.y, cfg.loss, Mode::Eval)?;
    let small = small_update_subspace(&net.layers[0], &g0[0], cfg.eps, cfg.k)?;
    let frame = deeper_subspaces(&net.layers, &small.v2, cfg.eps)?;
    let p = frame.p();
    let init = net.clone();
    let mut tracker = Tracker::new(frame, cfg.k);
    let tcfg = train_config(cfg, opt, lr, seed);
    let log = train(&mut net, &data, &tcfg, Some(&mut tracker))?;
    let records = tracker.into_records();

    let mut report = Report::new();
    let first = &records[0];
    for (l, t) in first.layers.iter().enumerate() {
        for row in theory::check_anchors(t, first.epoch, cfg.eps, p) {
            report.checks.push(CheckRow { name: format!("layer{}/{}", l + 1, row.name), ..row });
        }
    }

    let mut theory_row = None;
    if cfg.depth == 2 {
        let (w1, w2) = (&init.layers[0], &init.layers[1]);
        let bounds = act.bounds();
        let r = theory::r_eps(w1, w2, &data.x, &data.y, cfg.eps, &bounds)?;
        let cond = CheckRow::upper("eps_condition", Some(0), r.value, r.threshold);
        if cfg.interval_checks && r.holds {
            let rows = theory::check_init_sval_intervals(&g0[0], w2, &data.y, &data.x, r.value, bounds.dphi0, cfg.k)?;
            report.checks.extend(rows);
        }
        report.diagnostics.push(cond);
        if exact_setting(cfg, act, opt) {
            let schedule = Optimizer::new(tcfg.optimizer, lr, tcfg.schedule);
            report
                .checks
                .extend(theory::check_theorem_bound(&records, |e| schedule.lr_at(e), cfg.eps, p)?.into_iter().skip(3));
            let target = thin_svd(&w2.tr_matmul(&data.y)?.matmul_tr(&data.x)?)?.sigma(cfg.k);
            let decay = theory::check_gradient_decay(&records, cfg.k, target)?;
            report.checks.push(CheckRow { pass: decay.g3 > 0.0, ..CheckRow::lower("grad_decay_g3", None, decay.g3, 0.0) });
            report.checks.push(CheckRow::upper("grad_decay_g2_finite", None, decay.g2, f64::INFINITY));
            report.diagnostics.push(CheckRow::upper("grad_decay_g2", None, decay.g2, 2.0));
            let m = log.max_residual;
            let gamma = theory::gamma_l(w2, m, &bounds)?;
            report.diagnostics.push(CheckRow::upper("descent_step", None, lr, 1.0 / gamma));
            let rise = log.losses.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            report.diagnostics.push(CheckRow::upper("loss_increase", None, rise, 0.0));
            let inputs = DriftInputs {
                gamma_l: gamma,
                beta: bounds.beta,
                sigma1_w2: thin_svd(w2)?.sigma(1),
                loss0: log.losses[0],
                dphi0: bounds.dphi0,
                sigma_k_target: target,
                r_eps: r.value,
                lr,
            };
            report.diagnostics.extend(theory::drift_diagnostic(&records, &inputs, &decay.envelope));
            theory_row = Some(TheoryRow {
                r_eps: r.value,
                threshold: r.threshold,
                holds: r.holds,
                m,
                gamma_l: gamma,
                g1: decay.g1,
                g2: decay.g2,
                g3: decay.g3,
                lambda: decay.envelope.lambda,
            });
        }
    }
    Ok(FullTrial { records, losses: log.losses, report, theory: theory_row })
}

fn group_name(cfg: &ExperimentConfig, act: Activation, opt: OptimizerKind) -> String {
    if cfg.optimizers.len() == 1 {
        act.to_string()
    } else {
        format!("{act}_{opt}")
    }
}

/// Trial outcomes gathered for the whole run.
struct Collected {
    report: Report,
    excluded: usize,
}

fn run_full(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Collected> {
    let mut report = Report::new();
    let mut excluded = 0;
    for (ai, &act) in cfg.activations.iter().enumerate() {
        for &opt in &cfg.optimizers {
            let group = group_name(cfg, act, opt);
            let lr = cfg.lr_for(ai);
            let trials =
                par::map_indexed(cfg.trials, cfg.parallel, |t| full_trial(cfg, act, lr, opt, cfg.seed + t as u64));
            let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
            let mut group_report = Report::new();
            let mut traces = Vec::with_capacity(trials.len());
            let mut svals = Vec::new();
            let mut losses = Vec::new();
            let mut theory_rows = String::from(THEORY_HEADER);
            theory_rows.push('\n');
            for (t, tr) in trials.iter().enumerate() {
                let dir = format!("{group}/{}", trial_dir(t));
                let rows = tr.trace_rows(cfg.k);
                write_trace_csv(sink.create(&format!("{dir}/trace.csv"))?, &rows)?;
                write_svals_csv(sink.create(&format!("{dir}/svals.csv"))?, &tr.svals())?;
                write_loss(sink.create(&format!("{dir}/loss.csv"))?, &tr.losses, None)?;
                traces.push(TrialTrace { rows, error: tr.error() });
                if !tr.error() {
                    svals.push(tr.svals());
                    losses.push(tr.losses.clone());
                }
                if let Some(th) = &tr.theory {
                    theory_rows.push_str(&format!(
                        "{t},{},{},{},{},{},{},{},{},{}\n",
                        th.r_eps, th.threshold, th.holds, th.m, th.gamma_l, th.g1, th.g2, th.g3, th.lambda
                    ));
                }
                group_report.extend(tr.report.clone().prefixed(&trial_dir(t)));
            }
            let avg = average_trials(&traces);
            excluded += avg.excluded;
            write_trace_csv(sink.create(&format!("{group}/trace.csv"))?, &avg.mean)?;
            write_trace_csv(sink.create(&format!("{group}/trace_std.csv"))?, &avg.std)?;
            write_svals_csv(sink.create(&format!("{group}/svals.csv"))?, &average_svals(&svals))?;
            let (lm, ls) = average_series(&losses);
            write_loss(sink.create(&format!("{group}/loss.csv"))?, &lm, Some(&ls))?;
            if trials.iter().any(|t| t.theory.is_some()) {
                sink.text(&format!("{group}/theory.csv"), &theory_rows)?;
            }
            group_report.write_csv(sink.create(&format!("{group}/report.csv"))?)?;
            report.extend(group_report.prefixed(&group));
        }
    }
    Ok(Collected { report, excluded })
}

fn scaling_config(cfg: &ExperimentConfig) -> SvalScalingConfig {
    SvalScalingConfig {
        d: cfg.d,
        k: cfg.k,
        per_class: cfg.per_class,
        variance: cfg.variance,
        m: cfg.width,
        trials: cfg.trials,
        seed: cfg.seed,
    }
}

fn run_sval_scaling(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Collected> {
    let rows = theory::sval_scaling_study(&cfg.activations, &cfg.eps_list, &scaling_config(cfg), cfg.parallel)?;
    let k = cfg.k;
    let mut mean = String::from("activation,eps");
    let mut raw = String::from("activation,eps,trial");
    for i in 1..=cfg.d {
        mean.push_str(&format!(",sv{i}"));
        raw.push_str(&format!(",sv{i}"));
    }
    mean.push('\n');
    raw.push('\n');
    let mut scaling = String::from("activation,eps,sigma_K,sigma_K1,sigma_K1_over_eps\n");
    for r in &rows {
        let cells: Vec<String> = r.mean_svals.iter().map(|v| v.to_string()).collect();
        mean.push_str(&format!("{},{},{}\n", r.activation, r.eps, cells.join(",")));
        for (t, s) in r.trials.iter().enumerate() {
            let cells: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            raw.push_str(&format!("{},{},{t},{}\n", r.activation, r.eps, cells.join(",")));
        }
        let (sk, sk1) = (r.mean_svals[k - 1], r.mean_svals[k]);
        scaling.push_str(&format!("{},{},{sk},{sk1},{}\n", r.activation, r.eps, sk1 / r.eps));
    }
    sink.text("svals.csv", &mean)?;
    sink.text("svals_trials.csv", &raw)?;
    sink.text("scaling.csv", &scaling)?;

    let mut report = Report::new();
    for &act in &cfg.activations {
        let of: Vec<_> = rows.iter().filter(|r| r.activation == act).collect();
        if of.len() < 2 {
            continue;
        }
        if act.is_smooth() {
            let s = theory::spread(&of, |r| r.mean_svals[k] / r.eps);
            report.checks.push(CheckRow::upper(format!("linear_tail_scaling_{act}"), None, s, 2.0));
        } else {
            let s = theory::spread(&of, |r| r.mean_svals[k]);
            report.checks.push(CheckRow::upper(format!("flat_tail_{act}"), None, s, 2.0));
            let ratio = of.iter().map(|r| r.mean_svals[k] / r.mean_svals[k - 1]).fold(f64::INFINITY, f64::min);
            report.checks.push(CheckRow::lower(format!("tail_vs_top_{act}"), None, ratio, 0.1));
        }
    }
    report.write_csv(sink.create("scaling_report.csv")?)?;
    Ok(Collected { report, excluded: 0 })
}

fn run_tail_mc(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Report> {
    let mc = TailMcConfig {
        d: cfg.mc_dim,
        k: cfg.k,
        m: cfg.mc_width,
        eps: cfg.eps,
        delta: cfg.delta,
        draws: cfg.mc_draws,
        seed: cfg.seed,
    };
    let res = theory::relu_tail_monte_carlo(&mc, cfg.parallel)?;
    let mut body = String::from("draw,measured,bound\n");
    for (i, d) in res.draws.iter().enumerate() {
        let b = d.bound.map_or_else(String::new, |b| b.to_string());
        body.push_str(&format!("{i},{},{b}\n", d.measured));
    }
    sink.text("relu_tail/tail_mc.csv", &body)?;
    let mut report = Report::new();
    report.checks.push(CheckRow::upper("relu_tail_vacuous_draws", None, res.vacuous as f64, 0.0));
    report.checks.push(CheckRow::lower("relu_tail_successes", None, res.successes as f64, res.threshold as f64));
    report.write_csv(sink.create("relu_tail/report.csv")?)?;
    Ok(report.prefixed("relu_tail"))
}

/// One of the networks compared in the low-rank experiments.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Model {
    Full,
    Sbig { r: usize },
    Random { r: usize },
    Angle { r: usize, psi: f64 },
}

fn models(cfg: &ExperimentConfig) -> Vec<(String, Model)> {
    let r = cfg.rank();
    let mut out = vec![("full".to_string(), Model::Full)];
    match cfg.experiment {
        Experiment::LowrankCompare => {
            out.push(("sbig".into(), Model::Sbig { r }));
            out.push(("random".into(), Model::Random { r }));
            out.push(("perp".into(), Model::Angle { r, psi: 90.0 }));
        }
        Experiment::AngleAblation => {
            out.extend(cfg.psi.iter().map(|&psi| (format!("psi_{psi}"), Model::Angle { r, psi })));
        }
        _ => {
            out.extend(cfg.ranks().into_iter().map(|r| (format!("r_{r}"), Model::Sbig { r })));
        }
    }
    out
}

/// Loss curves and parameter counts of every model in one trial.
fn lowrank_trial(
    cfg: &ExperimentConfig,
    act: Activation,
    lr: f64,
    models: &[(String, Model)],
    seed: u64,
) -> Result<Vec<(Vec<f64>, usize)>> {
    let data = make_data(cfg, seed)?;
    let mut full = MlpParams::init_semi_orthogonal(cfg.d, cfg.width, cfg.k, cfg.depth, cfg.eps, act, seed)?;
    full.frozen[cfg.depth - 1] = cfg.freeze_head;
    let (_, g0) = full.loss_and_grads(&data.x, &data.y, cfg.loss, Mode::Eval)?;
    let g0 = &g0[0];
    let tcfg = train_config(cfg, cfg.optimizers[0], lr, seed);
    let mut out = Vec::with_capacity(models.len());
    for (_, m) in models {
        let (log, count) = match *m {
            Model::Full => {
                let mut net = full.clone();
                (train(&mut net, &data, &tcfg, None)?, net.param_count())
            }
            other => {
                let mut net = match other {
                    Model::Sbig { r } => LowRankMlp::sbig_init(&full, g0, cfg.eps, r, seed)?,
                    Model::Random { r } => LowRankMlp::random_init(&full, cfg.eps, r, seed)?,
                    Model::Angle { r, psi } => LowRankMlp::angle_init(&full, g0, cfg.eps, r, psi, seed)?,
                    Model::Full => unreachable!("handled above"),
                };
                (train(&mut net, &data, &tcfg, None)?, net.param_count())
            }
        };
        out.push((log.losses, count));
    }
    Ok(out)
}

fn model_rank(m: &Model) -> Option<usize> {
    match *m {
        Model::Full => None,
        Model::Sbig { r } | Model::Random { r } | Model::Angle { r, .. } => Some(r),
    }
}

fn run_lowrank(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<Collected> {
    let models = models(cfg);
    let mut report = Report::new();
    for (ai, &act) in cfg.activations.iter().enumerate() {
        let prefix = if cfg.activations.len() == 1 { String::new() } else { format!("{act}/") };
        let lr = cfg.lr_for(ai);
        let trials =
            par::map_indexed(cfg.trials, cfg.parallel, |t| lowrank_trial(cfg, act, lr, &models, cfg.seed + t as u64));
        let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
        let mut summary = String::from("model,params,initial_loss,final_loss,final_loss_std\n");
        let mut finals = Vec::with_capacity(models.len());
        let full_count = trials[0][0].1;
        for (mi, (name, model)) in models.iter().enumerate() {
            let group = format!("{prefix}{name}");
            let mut curves = Vec::with_capacity(trials.len());
            for (t, tr) in trials.iter().enumerate() {
                write_loss(sink.create(&format!("{group}/{}/loss.csv", trial_dir(t)))?, &tr[mi].0, None)?;
                curves.push(tr[mi].0.clone());
            }
            let (mean, std) = average_series(&curves);
            write_loss(sink.create(&format!("{group}/loss.csv"))?, &mean, Some(&std))?;
            let count = trials[0][mi].1;
            let last = mean.len() - 1;
            summary.push_str(&format!("{name},{count},{},{},{}\n", mean[0], mean[last], std[last]));
            finals.push((name.clone(), mean[0], mean[last]));
            if let Some(r) = model_rank(model) {
                let row = CheckRow::upper(format!("{group}/param_count"), None, count as f64, full_count as f64);
                if 4 * r <= cfg.width {
                    report.checks.push(row);
                } else {
                    report.diagnostics.push(row);
                }
            }
        }
        sink.text(&format!("{prefix}comparison.csv"), &summary)?;
        let find = |n: &str| finals.iter().find(|f| f.0 == n).map(|f| (f.1, f.2));
        if let (Some((_, full)), Some((_, sbig))) = (find("full"), find("sbig")) {
            report.diagnostics.push(CheckRow::upper(
                format!("{prefix}sbig_vs_full_rel"),
                None,
                (sbig - full).abs() / full,
                0.1,
            ));
            if let Some((_, rand)) = find("random") {
                report.diagnostics.push(CheckRow::lower(format!("{prefix}random_over_sbig"), None, rand / sbig, 2.0));
            }
        }
        if let Some((init, fin)) = find("perp").or_else(|| find("psi_90")) {
            report.diagnostics.push(CheckRow::upper(format!("{prefix}perp_decrease"), None, 1.0 - fin / init, 0.01));
        }
    }
    Ok(Collected { report, excluded: 0 })
}

/// Runs the configured experiment and writes every output under
/// `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.out)?;
    let mut sink = Sink { root: cfg.out.clone(), files: Vec::new() };
    let config = cfg.resolved();
    sink.text("config.resolved", &config)?;
    let collected = match cfg.experiment {
        Experiment::SvalScaling => run_sval_scaling(cfg, &mut sink)?,
        e if e.is_lowrank() => run_lowrank(cfg, &mut sink)?,
        Experiment::Assumptions => {
            let mut c = run_full(cfg, &mut sink)?;
            c.report.extend(run_tail_mc(cfg, &mut sink)?);
            c
        }
        _ => run_full(cfg, &mut sink)?,
    };
    let report = collected.report;
    report.write_csv(sink.create("report.csv")?)?;
    report.write_diagnostics_csv(sink.create("diagnostics.csv")?)?;
    let summary = report.summary();
    sink.text("summary.txt", &format!("{summary}\n"))?;
    let mut files = sink.files.clone();
    files.sort();
    let manifest = RunManifest {
        config,
        seeds: (0..cfg.trials as u64).map(|t| cfg.seed + t).collect(),
        files,
        wall_clock: start.elapsed(),
        version: ARTIFACT_VERSION,
        summary,
        excluded_trials: collected.excluded,
    };
    fs::write(cfg.out.join("manifest.txt"), manifest.render())?;
    Ok(RunOutcome { manifest, report })
}

/// Reads a numeric column of a CSV written by a run.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<Option<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let idx = header
        .split(',')
        .position(|h| h == column)
        .ok_or_else(|| crate::Error::Input(format!("no column '{column}' in {}", path.display())))?;
    lines
        .map(|l| {
            let cell = l.split(',').nth(idx).unwrap_or("");
            if cell.is_empty() {
                Ok(None)
            } else {
                cell.parse()
                    .map(Some)
                    .map_err(|_| crate::Error::Input(format!("bad number '{cell}' in {}", path.display())))
            }
        })
        .collect()
}
