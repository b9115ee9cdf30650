//! `spikefed` command-line entry point.
//!
//! Exit status: 0 success, 1 invalid configuration or arguments, 2 missing
//! or malformed data, 3 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikefed::experiment::{self, ExperimentConfig, ExperimentError, DATA_ROOT_ENV};
use spikefed::models::ModelKind;

#[derive(Parser)]
#[command(name = "spikefed", version, about = "Federated SNN benchmarking on EEG motor imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read EDF recordings, cut trials, split and normalize, write the cache.
    Ingest(Common),
    /// Federated training of one method (or all) from the cache.
    Train {
        #[command(flatten)]
        common: Common,
        /// snn, cnn, lstm, or all; defaults to model.kind.
        #[arg(long)]
        model: Option<String>,
    },
    /// Energy, WSP, and accuracy curves over the trained methods.
    Compare(Common),
    /// Describe an EDF file, a checkpoint, or a split cache.
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Use seeded synthetic recordings (sets dataset.synthetic).
    #[arg(long)]
    synthetic: bool,
    /// Sets federated.rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Sets output_dir.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides any config key, e.g. `--set encoder.steps=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut overrides = Vec::new();
        if self.synthetic {
            overrides.push("dataset.synthetic=true".to_string());
        }
        if let Some(r) = self.rounds {
            overrides.push(format!("federated.rounds={r}"));
        }
        if let Some(o) = &self.output {
            overrides.push(format!("output_dir={:?}", o.display().to_string()));
        }
        overrides.extend(self.sets.iter().cloned());
        let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        ExperimentConfig::load(&self.config, &overrides, root)
    }
}

fn methods(arg: Option<&str>, cfg: &ExperimentConfig) -> Result<Vec<ModelKind>, ExperimentError> {
    match arg {
        None => Ok(vec![cfg.model.kind]),
        Some("all") => Ok(cfg.model.methods.clone()),
        Some(s) => ModelKind::parse(s)
            .map(|k| vec![k])
            .ok_or_else(|| ExperimentError::Config(format!("unknown model `{s}` (snn, cnn, lstm, all)"))),
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Ingest(common) => {
            let cfg = common.load()?;
            let out = experiment::ingest(&cfg)?;
            print!("{}", out.summary);
            println!(
                "train\t{}\ntest\t{}\ndigest\t{}\ncache\t{}",
                out.split.train.len(),
                out.split.test.len(),
                out.digest,
                out.cache_path.display()
            );
        }
        Command::Train { common, model } => {
            let cfg = common.load()?;
            for kind in methods(model.as_deref(), &cfg)? {
                let total = cfg.federated.rounds;
                let out = experiment::train(&cfg, kind, |r| {
                    eprintln!(
                        "{kind} round {}/{total} accuracy {:.4} loss {:.4} ({} ms)",
                        r.round, r.test_accuracy, r.test_loss, r.duration_ms
                    );
                })?;
                println!("{kind}\taccuracy\t{:.4}\t{}", out.eval.accuracy, out.dir.display());
            }
        }
        Command::Compare(common) => {
            let cfg = common.load()?;
            let out = experiment::compare(&cfg)?;
            print!("{}", out.table);
            println!("report\t{}", out.dir.join("report.json").display());
        }
        Command::Inspect { path } => print!("{}", experiment::inspect_path(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
