use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use d2dpower::baselines::BaselineKind;
use d2dpower::checkpoint::PolicyCheckpoint;
use d2dpower::runner::{self, ExperimentConfig, Mode, RunSummary, ScalabilityScenario};

#[derive(Parser)]
#[command(name = "d2dpower", version, about = "Delay-aware power control for D2D interference networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of pairs.
    #[arg(long)]
    pairs: Option<usize>,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',')]
    eval_seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy on the topology of the configured seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint or a baseline on the evaluation seeds.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "baseline")]
        checkpoint: Option<PathBuf>,
        /// max_power, random_power, wmmse, itlinq or exhaustive_oracle.
        #[arg(long)]
        baseline: Option<BaselineKind>,
    },
    /// Evaluate every baseline, plus a checkpoint when given.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on larger, denser or differently shaped networks.
    Scalability {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.pairs {
        cfg.network.pairs = m;
    }
    if let Some(seeds) = &c.eval_seeds {
        cfg.eval.seeds = seeds.clone();
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    Ok((cfg, out))
}

fn print_summary(s: &RunSummary) {
    println!(
        "{:<18} M={:<3} delay {} ms  p95 {} ms  delivered {}  left {}",
        s.method, s.pairs, s.average_delay_ms, s.p95_delay_ms, s.transmitted, s.remaining
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, episodes } => {
            let (mut cfg, out) = load_config(&common)?;
            if let Some(n) = episodes {
                cfg.train.episodes = n;
            }
            cfg.validate()?;
            let res = runner::run_experiment(&cfg, &Mode::Train, Some(&out))?;
            print_summary(&res.summary);
            println!("artifacts in {}", out.display());
        }
        Command::Eval { common, checkpoint, baseline } => {
            let (cfg, out) = load_config(&common)?;
            let mode = match (checkpoint, baseline) {
                (Some(c), None) => Mode::EvalPolicy { checkpoint: c },
                (None, Some(b)) => Mode::EvalBaseline(b),
                _ => bail!("pass exactly one of --checkpoint or --baseline"),
            };
            let res = runner::run_experiment(&cfg, &mode, Some(&out))?;
            print_summary(&res.summary);
        }
        Command::Sweep { common, checkpoint } => {
            let (cfg, out) = load_config(&common)?;
            let actor = match checkpoint {
                Some(p) => Some(PolicyCheckpoint::load(&p)?.restore()?.0),
                None => None,
            };
            let kinds: Vec<_> = BaselineKind::ALL
                .into_iter()
                .filter(|k| *k != BaselineKind::ExhaustiveOracle || cfg.network.pairs <= 3)
                .collect();
            let rows = runner::sweep(&cfg, &kinds, actor.as_ref())?;
            rows.iter().for_each(print_summary);
            std::fs::create_dir_all(&out)?;
            let path = out.join("sweep.json");
            std::fs::write(&path, serde_json::to_string_pretty(&rows)?).with_context(|| path.display().to_string())?;
        }
        Command::Scalability { common, checkpoint } => {
            let (cfg, out) = load_config(&common)?;
            let actor = PolicyCheckpoint::load(&checkpoint)?.restore()?.0;
            let mut scenarios = ScalabilityScenario::same_density();
            scenarios.extend(ScalabilityScenario::higher_density());
            scenarios.extend(ScalabilityScenario::radius_variants());
            let kinds = [BaselineKind::MaxPower, BaselineKind::RandomPower, BaselineKind::Wmmse, BaselineKind::Itlinq];
            let rows = runner::scalability_eval(&cfg, &actor, &scenarios, &kinds)?;
            for r in &rows {
                println!("{:<28} {:<14} {} ms", r.scenario.label, r.method, r.average_delay_ms);
            }
            std::fs::create_dir_all(&out)?;
            runner::write_scalability_csv(&rows, &out.join("scalability.csv"))?;
        }
        Command::Config { common } => {
            let (cfg, _) = load_config(&common)?;
            print!("{}", cfg.to_toml_string()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
