use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use hiro::config::PipelineConfig;
use hiro::pipeline::{Pipeline, Stage};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "hiro", version, about = "Hierarchical indexing and attributable summarization of entity reviews")]
struct Cli {
    /// Pipeline configuration (JSON). Relative paths inside it resolve
    /// against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override one configuration value, e.g. `--set quantizer.steps=0`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Log more (-v: debug, -vv: trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read reviews, split sentences and embed them.
    Ingest,
    /// Mine entailment-filtered positive pairs.
    MinePairs,
    /// Train the quantizer.
    Train,
    /// Encode every sentence into a code path.
    Index,
    /// Select the top-k clusters per entity.
    Retrieve,
    /// Write summaries from the selected clusters.
    Summarize {
        /// Number of summary samples per entity.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Score summaries and clusters.
    Evaluate,
    /// Render the evaluation report as markdown.
    Report,
    /// Run every stage in order.
    Run,
    /// Print the resolved configuration.
    ShowConfig,
}

fn load_config(cli: &Cli) -> anyhow::Result<(PipelineConfig, PathBuf)> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Command::Summarize { samples: Some(n) } = cli.command {
        overrides.push(format!("generation.samples={n}"));
    }
    let config = PipelineConfig::load(cli.config.as_deref(), &overrides)
        .with_context(|| match &cli.config {
            Some(p) => format!("loading {}", p.display()),
            None => "building default configuration".into(),
        })?;
    let base = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok((config, base))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (config, base) = load_config(&cli)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", config.to_json()?);
        return Ok(());
    }
    let pipeline = Pipeline::new(config, base)?;
    let stages: Vec<Stage> = match cli.command {
        Command::Ingest => vec![Stage::Ingest],
        Command::MinePairs => vec![Stage::MinePairs],
        Command::Train => vec![Stage::Train],
        Command::Index => vec![Stage::Index],
        Command::Retrieve => vec![Stage::Retrieve],
        Command::Summarize { .. } => vec![Stage::Summarize],
        Command::Evaluate => vec![Stage::Evaluate],
        Command::Report => vec![Stage::Report],
        Command::Run => Stage::ALL.to_vec(),
        Command::ShowConfig => unreachable!("handled above"),
    };
    for stage in stages {
        let outcome = pipeline.run(stage)?;
        for o in &outcome.outputs {
            eprintln!("{stage}: wrote {}", pipeline.artifact(o).display());
        }
        if let Some(msg) = outcome.message {
            print!("{msg}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(format!("hiro={level}"))))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
