//! `propnet`: ingest, train, evaluate, ablate, rank users, generate data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use propnet_core::Error;

use crate::commands::Baseline;
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "propnet", version, about = "Topic propagation classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, clean and label the datasets.
    Ingest(Common),
    /// Train the sentiment encoder and the sequence model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the saved training state.
        #[arg(long)]
        resume: bool,
    },
    /// Score the test split with the trained model or a baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Restrict evaluation to one topic.
        #[arg(long)]
        topic: Option<String>,
    },
    /// Retrain with each feature family zeroed in turn.
    Ablate(Common),
    /// Write the user influence ranking.
    RankUsers {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write a synthetic dataset from the config's `synth` section.
    Generate(Common),
    /// Print the run-config JSON schema.
    Schema,
}

/// Stable process status for each error family.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Schema { .. } | Error::Parse(_) | Error::Domain(_)) => 2,
        Some(Error::Io { .. }) => 3,
        Some(Error::Convergence { .. }) => 4,
        Some(Error::Training(_) | Error::Numeric(_) | Error::Dimension(_)) => 5,
        Some(Error::Checkpoint(_)) => 6,
        None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (common, command) = match &cli.command {
        Command::Schema => {
            commands::emit(config::SCHEMA);
            return Ok(());
        }
        Command::Ingest(c) | Command::Ablate(c) | Command::Generate(c) => (c, &cli.command),
        Command::Train { common, .. } | Command::Evaluate { common, .. } | Command::RankUsers { common, .. } => {
            (common, &cli.command)
        }
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
    };
    let cfg = config::load_with_context(&common.config, &overrides)?;
    if common.dry_run {
        commands::emit(&format!("{}\n", cfg.to_json()));
        return Ok(());
    }
    dispatch(command, &cfg)
}

fn dispatch(command: &Command, cfg: &RunConfig) -> anyhow::Result<()> {
    match command {
        Command::Ingest(_) => commands::ingest(cfg),
        Command::Train { resume, .. } => commands::train(cfg, *resume),
        Command::Evaluate { baseline, topic, .. } => commands::evaluate(cfg, *baseline, topic.as_deref()),
        Command::Ablate(_) => commands::ablate(cfg),
        Command::RankUsers { top_k, .. } => commands::rank_users(cfg, *top_k),
        Command::Generate(_) => commands::generate(cfg),
        Command::Schema => unreachable!("handled before config loading"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PROPNET_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_family() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::Schema { missing: vec!["text".into()] }), 2);
        assert_eq!(
            code(Error::Io {
                path: "p".into(),
                source: std::io::Error::other("x")
            }),
            3
        );
        assert_eq!(code(Error::Convergence { iterations: 1, residual: 1.0 }), 4);
        assert_eq!(code(Error::Training("x".into())), 5);
        assert_eq!(code(Error::Checkpoint("x".into())), 6);
        let wrapped = anyhow::Error::from(Error::Checkpoint("x".into())).context("loading");
        assert_eq!(exit_code(&wrapped), 6);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}
