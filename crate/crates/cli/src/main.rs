//! `troupe` — persona-grounded social simulation, multi-judge evaluation,
//! and fine-tuning dataset export, driven by a single run configuration.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use troupe_core::fixture::FixtureSpec;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "troupe", version, about = "Run persona simulations, judge them, export datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Persona bank path (overrides the config).
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling / simulation seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Repeats per persona for mean±std reporting.
    #[arg(long)]
    repeats: Option<u32>,
    /// Episode-parallelism bound.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Disable early stopping; episodes run to the turn limit.
    #[arg(long)]
    no_early_stop: bool,
    /// Judge roster as a comma-separated list of model ids.
    #[arg(long, value_delimiter = ',')]
    judges: Option<Vec<String>>,
    /// Arbiter model id.
    #[arg(long)]
    arbiter: Option<String>,
    /// Dispute threshold on inter-judge variance.
    #[arg(long)]
    threshold: Option<f64>,
    /// Protagonist model id (overrides the config; lets one config drive
    /// multiple evaluated models).
    #[arg(long)]
    model: Option<String>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        let overrides = Overrides {
            bank: self.bank.clone(),
            out: self.out.clone(),
            seed: self.seed,
            repeats: self.repeats,
            parallelism: self.parallelism,
            no_early_stop: self.no_early_stop,
            judges: self.judges.clone(),
            arbiter: self.arbiter.clone(),
            threshold: self.threshold,
            model: self.model.clone(),
        };
        overrides.apply(&mut config);
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample personas and run scripted or live episodes.
    Simulate(CommonArgs),
    /// Score completed trajectories with the judge panel.
    Evaluate(CommonArgs),
    /// Export behavior-level SFT instances from top-ranked trajectories.
    ExportSft {
        #[command(flatten)]
        common: CommonArgs,
        /// How many top-ranked trajectories to decompose.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Export step-aligned preference pairs across protagonist models.
    ExportDpo {
        #[command(flatten)]
        common: CommonArgs,
        /// How many top-gap trajectory pairs to decompose.
        #[arg(long)]
        top_n: Option<usize>,
    },
    /// Re-render the summary grid from existing reports.
    Report(CommonArgs),
    /// Generate a fully scripted offline demo (bank, scripts, configs).
    GenDemo {
        /// Directory to write the demo into.
        #[arg(long, default_value = "demo")]
        out: PathBuf,
        /// Bank size.
        #[arg(long, default_value_t = 25)]
        personas: usize,
        /// Personas sampled per run.
        #[arg(long, default_value_t = 10)]
        sample: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        /// Protagonist models to script, strongest first.
        #[arg(long, value_delimiter = ',', default_values_t = [
            "model-alpha".to_string(), "model-beta".to_string()
        ])]
        models: Vec<String>,
    },
}

fn run() -> Result<bool> {
    match Cli::parse().command {
        Command::Simulate(common) => runner::cmd_simulate(&common.load()?),
        Command::Evaluate(common) => runner::cmd_evaluate(&common.load()?),
        Command::ExportSft { common, top_k } => runner::cmd_export_sft(&common.load()?, top_k),
        Command::ExportDpo { common, top_n } => runner::cmd_export_dpo(&common.load()?, top_n),
        Command::Report(common) => runner::cmd_report(&common.load()?),
        Command::GenDemo { out, personas, sample, seed, repeats, models } => {
            let spec = FixtureSpec {
                bank_size: personas,
                sample_n: sample,
                seed,
                repeats,
                models,
                ..FixtureSpec::default()
            };
            runner::cmd_gen_demo(&out, &spec)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
