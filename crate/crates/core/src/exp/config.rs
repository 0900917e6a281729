use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mlp::{Activation, LossKind};
use crate::optim::{OptimizerKind, Schedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Experiment {
    CaseStudy,
    VerifyTheorem,
    DeepNet,
    OptimizerAblation,
    SvalScaling,
    LowrankCompare,
    AngleAblation,
    WidthAblation,
    Assumptions,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::CaseStudy,
        Experiment::VerifyTheorem,
        Experiment::DeepNet,
        Experiment::OptimizerAblation,
        Experiment::SvalScaling,
        Experiment::LowrankCompare,
        Experiment::AngleAblation,
        Experiment::WidthAblation,
        Experiment::Assumptions,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::CaseStudy => "case-study",
            Experiment::VerifyTheorem => "verify-theorem",
            Experiment::DeepNet => "deep-net",
            Experiment::OptimizerAblation => "optimizer-ablation",
            Experiment::SvalScaling => "sval-scaling",
            Experiment::LowrankCompare => "lowrank-compare",
            Experiment::AngleAblation => "angle-ablation",
            Experiment::WidthAblation => "width-ablation",
            Experiment::Assumptions => "assumptions",
        }
    }

    pub fn is_lowrank(&self) -> bool {
        matches!(self, Experiment::LowrankCompare | Experiment::AngleAblation | Experiment::WidthAblation)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Every setting of a run. Defaults depend on the experiment; see
/// [`KEYS`] for the documented key names.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    pub k: usize,
    pub per_class: usize,
    pub variance: f64,
    pub whiten: bool,
    pub depth: usize,
    pub width: usize,
    pub activations: Vec<Activation>,
    pub eps: f64,
    pub optimizers: Vec<OptimizerKind>,
    pub lr: Vec<f64>,
    pub momentum: f64,
    pub schedule: String,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub freeze_head: bool,
    pub track_every: usize,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub parallel: bool,
    pub rank: usize,
    pub psi: Vec<f64>,
    pub ranks: Vec<usize>,
    pub eps_list: Vec<f64>,
    pub interval_checks: bool,
    pub mc_draws: usize,
    pub mc_width: usize,
    pub mc_dim: usize,
    pub delta: f64,
}

/// Documented keys in the order they are echoed.
pub const KEYS: &[(&str, &str)] = &[
    ("experiment", "experiment name"),
    ("d", "input dimension"),
    ("k", "number of classes K"),
    ("per_class", "samples per class n (N = K·n)"),
    ("variance", "mixture noise variance σ²"),
    ("whiten", "whiten inputs so that XXᵀ = I (true/false)"),
    ("depth", "number of layers L"),
    ("width", "hidden width m"),
    ("activations", "comma list of elu, gelu, silu, relu, leaky_relu, rrelu"),
    ("eps", "initialization scale ε"),
    ("optimizers", "comma list of gd, momentum, adam"),
    ("lr", "learning rate, one value or one per activation"),
    ("momentum", "heavy-ball coefficient for the momentum optimizer"),
    ("schedule", "constant or cosine"),
    ("loss", "squared or cross_entropy"),
    ("epochs", "training epochs"),
    ("batch", "minibatch size, 0 for full batch"),
    ("weight_decay", "decoupled L2 coefficient"),
    ("freeze_head", "keep the last layer fixed (true/false)"),
    ("track_every", "record the trace every this many epochs"),
    ("trials", "independent trials"),
    ("seed", "master seed; trial t uses seed + t"),
    ("out", "output directory"),
    ("parallel", "run trials concurrently (true/false)"),
    ("rank", "low-rank width r, 0 for 2K"),
    ("psi", "comma list of angles in degrees for the angle ablation"),
    ("ranks", "comma list of widths r for the width ablation, empty for 2K,4K,8K,16K"),
    ("eps_list", "comma list of ε values for the scaling study"),
    ("interval_checks", "assert initial singular-value intervals (smooth activations only)"),
    ("mc_draws", "Monte-Carlo draws for the ReLU tail bound"),
    ("mc_width", "hidden width for the ReLU tail Monte-Carlo"),
    ("mc_dim", "d = N for the ReLU tail Monte-Carlo"),
    ("delta", "failure probability δ of the ReLU tail bound"),
];

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("key '{key}': expected true or false, got '{v}'"))),
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Defaults of the named experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            d: 64,
            k: 4,
            per_class: 250,
            variance: 3.0,
            whiten: true,
            depth: 2,
            width: 72,
            activations: vec![Activation::ELU, Activation::Gelu, Activation::Silu],
            eps: 1e-2,
            optimizers: vec![OptimizerKind::Gd],
            lr: vec![1e-2],
            momentum: 0.9,
            schedule: "constant".into(),
            loss: LossKind::Squared,
            epochs: 100,
            batch: 0,
            weight_decay: 0.0,
            freeze_head: false,
            track_every: 1,
            trials: 10,
            seed: 0,
            out: PathBuf::from("runs").join(experiment.name()),
            parallel: false,
            rank: 0,
            psi: vec![0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0],
            ranks: Vec::new(),
            eps_list: vec![1e-3, 1e-2, 1e-1],
            interval_checks: false,
            mc_draws: 200,
            mc_width: 2048,
            mc_dim: 16,
            delta: 0.1,
        };
        match experiment {
            Experiment::CaseStudy => {
                c.d = 32;
                c.per_class = 500;
                c.depth = 4;
                c.width = 32;
                c.eps = 1.0;
                c.activations = Activation::ALL.to_vec();
                c.lr = vec![1e-3];
                c.epochs = 250;
            }
            Experiment::VerifyTheorem => {
                c.freeze_head = true;
                c.interval_checks = true;
            }
            Experiment::DeepNet => {
                c.depth = 4;
                c.eps = 0.1;
                c.activations = vec![Activation::ELU, Activation::Gelu];
                c.lr = vec![1e-3, 5e-3];
                c.epochs = 250;
            }
            Experiment::OptimizerAblation => {
                c.depth = 4;
                c.eps = 0.1;
                c.whiten = false;
                c.activations = vec![Activation::ELU, Activation::Gelu];
                c.optimizers = vec![OptimizerKind::MOMENTUM, OptimizerKind::ADAM];
                c.lr = vec![1e-4, 5e-4];
                c.loss = LossKind::CrossEntropy;
                c.batch = 32;
                c.epochs = 100;
            }
            Experiment::SvalScaling => {
                c.activations = vec![Activation::Gelu, Activation::Relu];
            }
            Experiment::LowrankCompare | Experiment::AngleAblation | Experiment::WidthAblation => {
                c.depth = 4;
                c.width = 64;
                c.eps = 0.1;
                c.whiten = false;
                c.activations = vec![Activation::Gelu];
                c.lr = vec![2e-4];
                c.schedule = "cosine".into();
                c.epochs = 800;
                c.trials = 5;
            }
            Experiment::Assumptions => {
                c.activations = vec![Activation::Gelu];
                c.freeze_head = true;
                c.interval_checks = true;
            }
        }
        c
    }

    /// Applies one `key=value` setting. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "experiment" => self.experiment = v.parse()?,
            "d" => self.d = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "per_class" => self.per_class = parse(key, v)?,
            "variance" => self.variance = parse(key, v)?,
            "whiten" => self.whiten = parse_bool(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "activations" => self.activations = parse_list(key, v)?,
            "eps" => self.eps = parse(key, v)?,
            "optimizers" => self.optimizers = parse_list(key, v)?,
            "lr" => self.lr = parse_list(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "schedule" => {
                if v != "constant" && v != "cosine" {
                    return Err(Error::Config(format!("key 'schedule': expected constant or cosine, got '{v}'")));
                }
                self.schedule = v.to_string();
            }
            "loss" => self.loss = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "freeze_head" => self.freeze_head = parse_bool(key, v)?,
            "track_every" => self.track_every = parse(key, v)?,
            "trials" => self.trials = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "parallel" => self.parallel = parse_bool(key, v)?,
            "rank" => self.rank = parse(key, v)?,
            "psi" => self.psi = parse_list(key, v)?,
            "ranks" => self.ranks = parse_list(key, v)?,
            "eps_list" => self.eps_list = parse_list(key, v)?,
            "interval_checks" => self.interval_checks = parse_bool(key, v)?,
            "mc_draws" => self.mc_draws = parse(key, v)?,
            "mc_width" => self.mc_width = parse(key, v)?,
            "mc_dim" => self.mc_dim = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", no + 1)))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Resolves a configuration: experiment defaults, then the file, then
    /// the `overrides` in order. The experiment is taken from `experiment`
    /// if given, else from the file.
    pub fn resolve(experiment: Option<&str>, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let file_pairs = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse_pairs(&text)?
            }
            None => Vec::new(),
        };
        let name = experiment
            .map(str::to_string)
            .or_else(|| file_pairs.iter().rev().find(|(k, _)| k == "experiment").map(|(_, v)| v.clone()))
            .ok_or_else(|| Error::Config("missing experiment name".into()))?;
        let exp: Experiment = name.parse()?;
        let mut c = Self::defaults(exp);
        for (k, v) in file_pairs.iter().chain(overrides) {
            if k == "experiment" {
                v.parse::<Experiment>()?;
                continue;
            }
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return err("trials must be at least 1".into());
        }
        if self.d == 0 || self.k == 0 || self.per_class == 0 || self.width == 0 {
            return err("d, k, per_class and width must be positive".into());
        }
        if self.depth < 2 {
            return err(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.activations.is_empty() {
            return err("activations must not be empty".into());
        }
        if self.optimizers.is_empty() {
            return err("optimizers must not be empty".into());
        }
        if self.lr.len() != 1 && self.lr.len() != self.activations.len() {
            return err(format!("lr has {} values for {} activations", self.lr.len(), self.activations.len()));
        }
        if self.lr.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return err("learning rates must be positive".into());
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return err(format!("eps must be positive, got {}", self.eps));
        }
        if 2 * self.k > self.d {
            return err(format!("need 2K <= d, got K={} d={}", self.k, self.d));
        }
        if self.depth > 2 && self.width < self.d {
            return err("deep networks need width >= d".into());
        }
        if self.interval_checks {
            if let Some(a) = self.activations.iter().find(|a| !a.is_smooth()) {
                return err(format!(
                    "initial interval checks require smooth activations, got {a}; set interval_checks=false"
                ));
            }
        }
        if self.experiment.is_lowrank() && self.d != self.width {
            return err("low-rank experiments need d = width".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return err(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.psi.iter().any(|p| !(0.0..=90.0).contains(p)) {
            return err("psi values must lie in [0, 90]".into());
        }
        Ok(())
    }

    pub fn lr_for(&self, activation_index: usize) -> f64 {
        if self.lr.len() == 1 {
            self.lr[0]
        } else {
            self.lr[activation_index]
        }
    }

    pub fn schedule(&self) -> Schedule {
        if self.schedule == "cosine" {
            Schedule::Cosine { total: self.epochs }
        } else {
            Schedule::Constant
        }
    }

    /// Low-rank width, `2K` when unset.
    pub fn rank(&self) -> usize {
        if self.rank == 0 {
            2 * self.k
        } else {
            self.rank
        }
    }

    pub fn ranks(&self) -> Vec<usize> {
        if self.ranks.is_empty() {
            [2, 4, 8, 16].iter().map(|f| f * self.k).filter(|&r| r <= self.d.min(self.width)).collect()
        } else {
            self.ranks.clone()
        }
    }

    pub fn optimizer(&self, kind: OptimizerKind) -> OptimizerKind {
        match kind {
            OptimizerKind::Momentum { .. } => OptimizerKind::Momentum { rho: self.momentum },
            other => other,
        }
    }

    pub fn value_of(&self, key: &str) -> Option<String> {
        Some(match key {
            "experiment" => self.experiment.to_string(),
            "d" => self.d.to_string(),
            "k" => self.k.to_string(),
            "per_class" => self.per_class.to_string(),
            "variance" => self.variance.to_string(),
            "whiten" => self.whiten.to_string(),
            "depth" => self.depth.to_string(),
            "width" => self.width.to_string(),
            "activations" => join(&self.activations),
            "eps" => self.eps.to_string(),
            "optimizers" => join(&self.optimizers),
            "lr" => join(&self.lr),
            "momentum" => self.momentum.to_string(),
            "schedule" => self.schedule.clone(),
            "loss" => self.loss.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch" => self.batch.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "freeze_head" => self.freeze_head.to_string(),
            "track_every" => self.track_every.to_string(),
            "trials" => self.trials.to_string(),
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            "parallel" => self.parallel.to_string(),
            "rank" => self.rank.to_string(),
            "psi" => join(&self.psi),
            "ranks" => join(&self.ranks),
            "eps_list" => join(&self.eps_list),
            "interval_checks" => self.interval_checks.to_string(),
            "mc_draws" => self.mc_draws.to_string(),
            "mc_width" => self.mc_width.to_string(),
            "mc_dim" => self.mc_dim.to_string(),
            "delta" => self.delta.to_string(),
            _ => return None,
        })
    }

    /// `key=value` echo of every setting, re-parseable by [`Self::resolve`].
    /// `out` and `parallel` are omitted so that runs differing only in
    /// where or how they execute echo identically.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for (key, _) in KEYS {
            if *key == "out" || *key == "parallel" {
                continue;
            }
            let v = self.value_of(key).expect("every documented key has a value");
            s.push_str(&format!("{key}={v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        for exp in Experiment::ALL {
            let c = ExperimentConfig::defaults(exp);
            let mut d = ExperimentConfig::defaults(Experiment::CaseStudy);
            for (k, _) in KEYS {
                d.set(k, &c.value_of(k).unwrap()).unwrap();
            }
            assert_eq!(c, d, "{exp}");
        }
    }

    #[test]
    fn later_settings_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "# comment\nepochs=50\n").unwrap();
        let c = ExperimentConfig::resolve(Some("deep-net"), Some(&path), &[]).unwrap();
        assert_eq!(c.epochs, 50);
        let c = ExperimentConfig::resolve(Some("deep-net"), Some(&path), &[("epochs".into(), "20".into())]).unwrap();
        assert_eq!(c.epochs, 20);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut c = ExperimentConfig::defaults(Experiment::DeepNet);
        let e = c.set("epcohs", "3").unwrap_err();
        assert!(e.to_string().contains("epcohs"));
        assert!(c.set("epochs", "three").is_err());
    }

    #[test]
    fn experiment_is_required() {
        assert!(ExperimentConfig::resolve(None, None, &[]).is_err());
    }

    #[test]
    fn nonsmooth_interval_checks_are_rejected() {
        let e = ExperimentConfig::resolve(Some("verify-theorem"), None, &[("activations".into(), "relu".into())]);
        assert!(matches!(e, Err(Error::Config(_))));
        let ok = ExperimentConfig::resolve(
            Some("verify-theorem"),
            None,
            &[("activations".into(), "relu".into()), ("interval_checks".into(), "false".into())],
        );
        assert!(ok.is_ok());
    }
}
