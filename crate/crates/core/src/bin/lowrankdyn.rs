use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lowrankdyn::exp::{self, Experiment, ExperimentConfig, KEYS};
use lowrankdyn::Error;

/// Runs one low-rank dynamics experiment and writes its CSV outputs.
///
/// Exit status: 0 on success, 2 on a configuration error, 3 when a hard
/// theory check fails.
#[derive(Debug, Parser)]
#[command(name = "lowrankdyn", version, after_long_help = key_help())]
struct Cli {
    /// Experiment name.
    experiment: String,
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed; trial t uses seed + t.
    #[arg(long)]
    seed: Option<u64>,
    /// Run trials concurrently.
    #[arg(long)]
    parallel: bool,
}

fn key_help() -> String {
    let defaults: Vec<ExperimentConfig> = Experiment::ALL.iter().map(|&e| ExperimentConfig::defaults(e)).collect();
    let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
    let mut s = format!("Experiments: {}\n\nConfiguration keys and defaults:\n", names.join(", "));
    for (key, doc) in KEYS {
        s.push_str(&format!("  {key:<16} {doc}\n"));
        let vals: Vec<String> = defaults.iter().map(|c| c.value_of(key).unwrap_or_default()).collect();
        if *key == "experiment" {
            continue;
        }
        if vals.iter().all(|v| *v == vals[0]) {
            s.push_str(&format!("  {:<16}   default: {}\n", "", vals[0]));
        } else {
            for (n, v) in names.iter().zip(&vals) {
                s.push_str(&format!("  {:<16}   {n}: {v}\n", ""));
            }
        }
    }
    s
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    for s in &cli.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(o) = &cli.out {
        out.push(("out".into(), o.display().to_string()));
    }
    if let Some(t) = cli.trials {
        out.push(("trials".into(), t.to_string()));
    }
    if let Some(s) = cli.seed {
        out.push(("seed".into(), s.to_string()));
    }
    if cli.parallel {
        out.push(("parallel".into(), "true".into()));
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match overrides(&cli)
        .and_then(|o| ExperimentConfig::resolve(Some(&cli.experiment), cli.config.as_deref(), &o))
    {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match exp::run(&cfg) {
        Ok(outcome) => {
            for f in outcome.report.failures().take(20) {
                eprintln!("failed: {} measured {} bound {}", f.name, f.measured, f.bound);
            }
            println!("{}", outcome.manifest.summary);
            println!("outputs in {}", cfg.out.display());
            if outcome.report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
