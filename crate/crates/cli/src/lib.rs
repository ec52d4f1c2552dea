//! Command-line runner and HTTP query service over pipeline artifacts.

pub mod service;

use std::path::PathBuf;

use clap::Parser;
use conceptcause::bn::EffectVariant;
use conceptcause::pipeline::{Pipeline, PipelineConfig, Stage, StageArgs};
use conceptcause::Error;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MISSING_ARTIFACT: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "conceptcause", version, about = "Concept-level causal explanations for a small CNN")]
pub struct Cli {
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Stage to run, or `all` for every build stage.
    #[arg(long)]
    pub stage: String,

    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Artifact directory; overrides the configured one.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, default_value_t = 8080)]
    pub port: u16,

    /// Instance id for `explain-instance` and `nn`.
    #[arg(long)]
    pub instance: Option<usize>,

    #[arg(long)]
    pub level: Option<usize>,

    #[arg(long)]
    pub channel: Option<usize>,

    /// Result count for `explain-instance` and `nn`.
    #[arg(long)]
    pub k: Option<usize>,

    /// Ranking score: expected_abs, signed or max.
    #[arg(long)]
    pub variant: Option<String>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::MissingArtifact(_) => EXIT_MISSING_ARTIFACT,
        Error::Validation(_) | Error::InvalidArgument(_) | Error::UnknownNode(_) | Error::NoActiveConcepts => EXIT_VALIDATION,
        _ => EXIT_FAILURE,
    }
}

pub fn build_pipeline(cli: &Cli) -> Result<Pipeline, Error> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Pipeline::new(config, cli.out.clone())
}

pub fn stage_args(cli: &Cli) -> Result<StageArgs, Error> {
    Ok(StageArgs {
        instance: cli.instance,
        level: cli.level,
        channel: cli.channel,
        k: cli.k,
        variant: cli.variant.as_deref().map(str::parse::<EffectVariant>).transpose()?,
    })
}

/// Runs the requested batch stage(s), printing each summary.
pub fn run_batch(cli: &Cli) -> Result<(), Error> {
    let pipeline = build_pipeline(cli)?;
    let args = stage_args(cli)?;
    let stages: Vec<Stage> = if cli.stage == "all" {
        Stage::BUILD.to_vec()
    } else {
        vec![cli.stage.parse()?]
    };
    for stage in stages {
        let outcome = pipeline.run_stage(stage, &args)?;
        println!("[{}] {}", stage, outcome.summary.trim_end());
    }
    Ok(())
}
