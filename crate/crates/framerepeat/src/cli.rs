//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{resolve, Resolved};
use crate::driver;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "framerepeat", version, about = "Learn which video frames to repeat for a frozen answering model")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override any setting, e.g. `--set train.lr=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with planted gains.
    Synth(SynthArgs),
    /// Measure repeat gains through an oracle (resumable).
    Scan(ScanArgs),
    /// Train the scorer.
    Train(TrainArgs),
    /// Emit repetition plans.
    Plan(PlanArgs),
    /// Score rankings against true gains.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub key_frames: Option<usize>,
    #[arg(long)]
    pub mixing: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// synthetic, replay or remote.
    #[arg(long)]
    pub oracle: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub token: Option<String>,
    #[arg(long)]
    pub in_flight: Option<usize>,
    #[arg(long)]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Records answered by the replay oracle.
    #[arg(long)]
    pub replay_records: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Record directory; defaults to `<out>/records`.
    #[arg(long)]
    pub records: Option<String>,
    /// Scan every frame of every sample.
    #[arg(long, conflicts_with = "frames")]
    pub all_frames: bool,
    /// Scan this many random frames per sample.
    #[arg(long)]
    pub frames: Option<usize>,
    #[command(flatten)]
    pub oracle: OracleArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Record cache; defaults to `<out>/records`.
    #[arg(long)]
    pub records: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Candidate half-width.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub accumulation: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub prior_weight: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[command(flatten)]
    pub oracle: OracleArgs,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    /// Trained checkpoint; a fresh scorer from `[scorer]` when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Full-frame records used when the dataset has no planted gains.
    #[arg(long)]
    pub records: Option<String>,
    #[arg(long)]
    pub prior_weight: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Default)]
struct Flags(Vec<(String, String)>);

impl Flags {
    fn put<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.0.push((key.to_string(), v.to_string()));
        }
    }

    fn oracle(&mut self, o: &OracleArgs) {
        self.put("oracle.kind", &o.oracle);
        self.put("oracle.endpoint", &o.endpoint);
        self.put("oracle.token", &o.token);
        self.put("oracle.in_flight", &o.in_flight);
        self.put("oracle.timeout_secs", &o.timeout_secs);
        self.put("oracle.retries", &o.retries);
        self.put("oracle.replay_records", &o.replay_records);
    }
}

fn command_flags(cmd: &Command) -> Vec<(String, String)> {
    let mut f = Flags::default();
    match cmd {
        Command::Synth(a) => {
            f.put("synth.n_samples", &a.n_samples);
            f.put("synth.n_frames", &a.frames);
            f.put("synth.dim", &a.dim);
            f.put("synth.n_tokens", &a.tokens);
            f.put("synth.n_key_frames", &a.key_frames);
            f.put("synth.mixing", &a.mixing);
            f.put("synth.seed", &a.seed);
        }
        Command::Scan(a) => {
            f.put("data.dataset", &a.dataset);
            f.put("data.records", &a.records);
            f.put("scan.frames", &if a.all_frames { Some(0) } else { a.frames });
            f.oracle(&a.oracle);
        }
        Command::Train(a) => {
            f.put("data.dataset", &a.dataset);
            f.put("data.records", &a.records);
            f.put("train.lr", &a.lr);
            f.put("train.epochs", &a.epochs);
            f.put("train.k", &a.k);
            f.put("train.accumulation", &a.accumulation);
            f.put("train.seed", &a.seed);
            f.put("train.checkpoint_every", &a.checkpoint_every);
            f.put("scorer.n_heads", &a.heads);
            f.put("scorer.prior_weight", &a.prior_weight);
            f.oracle(&a.oracle);
        }
        Command::Plan(a) => {
            f.put("data.dataset", &a.dataset);
            f.put("plan.k", &a.k);
        }
        Command::Eval(a) => {
            f.put("data.dataset", &a.dataset);
            f.put("data.records", &a.records);
            f.put("eval.k", &a.k);
            f.put("scorer.prior_weight", &a.prior_weight);
        }
    }
    f.0
}

fn parse_set(items: &[String]) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.to_string()))
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {s:?}")))
        })
        .collect()
}

/// Resolves configuration for `cli` against `env`.
pub fn resolve_for(cli: &Cli, env: &BTreeMap<String, String>) -> Result<Resolved> {
    let mut flags = parse_set(&cli.set)?;
    flags.extend(command_flags(&cli.command));
    resolve(cli.config.as_deref(), env, &flags)
}

/// Runs a parsed command, printing the effective configuration to stderr.
pub fn execute(cli: &Cli, env: &BTreeMap<String, String>) -> Result<()> {
    let cfg = resolve_for(cli, env)?;
    eprint!("{}", cfg.render());
    match &cli.command {
        Command::Synth(a) => {
            let ds = driver::run_synth(&cfg, &a.out)?;
            println!("wrote {} samples to {}", ds.len(), a.out.display());
        }
        Command::Scan(a) => {
            let s = driver::run_scan(&cfg, &driver::open_dataset(&cfg)?, &a.out)?;
            println!("{}", serde_json::to_string(&s).expect("summary"));
        }
        Command::Train(a) => {
            let s = driver::run_train(&cfg, &driver::open_dataset(&cfg)?, &a.out)?;
            println!("{}", serde_json::to_string(&s).expect("summary"));
        }
        Command::Plan(a) => {
            let plans = driver::run_plan(&cfg, &driver::open_dataset(&cfg)?, a.checkpoint.as_deref(), &a.out)?;
            println!("wrote {} plans to {}", plans.len(), a.out.join("plans.json").display());
        }
        Command::Eval(a) => {
            let r = driver::run_eval(&cfg, &driver::open_dataset(&cfg)?, a.checkpoint.as_deref(), &a.out)?;
            println!("{}", r.metrics);
        }
    }
    Ok(())
}

/// Parses `args` and runs; returns the process exit status.
pub fn main_with(args: impl IntoIterator<Item = OsString>, env: &BTreeMap<String, String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, env) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
