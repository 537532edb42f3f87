use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgcir::pipeline::{configure_threads, run_stage, PipelineError, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "kgcir", version, about = "Knowledge-graph completion by retrieval and reading")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build query/positive/negative training pairs
    BuildCorpus(Common),
    /// Pre-train the dual encoder
    Pretrain(Common),
    /// Embed every document with the pre-trained encoder
    EmbedIndex(Common),
    /// Jointly fine-tune the query encoder and reader
    Finetune(Common),
    /// Write ranked predictions for the validation and test queries
    Predict(Common),
    /// Score test predictions
    Eval(Common),
    /// Train the embedding baseline and rank with it
    TrainKge(Common),
    /// Choose a model per relation on validation and combine test predictions
    Ensemble(Common),
    /// Generate a synthetic dataset and corpus
    MakeFixture(Common),
    /// Run every training and evaluation stage in order
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides of configuration entries
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, PipelineError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| PipelineError::Config(format!("expected --key, got {arg:?}")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.replace('-', "_"), v.to_string()));
            continue;
        }
        let value = it.next().ok_or_else(|| PipelineError::Config(format!("--{key} needs a value")))?;
        out.push((key.replace('-', "_"), value.clone()));
    }
    Ok(out)
}

fn load_config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let overrides = parse_overrides(&common.overrides)?;
    cfg.apply_overrides(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), PipelineError> {
    configure_threads()?;
    let (stages, common): (Vec<Stage>, Common) = match command {
        Command::BuildCorpus(c) => (vec![Stage::BuildCorpus], c),
        Command::Pretrain(c) => (vec![Stage::Pretrain], c),
        Command::EmbedIndex(c) => (vec![Stage::EmbedIndex], c),
        Command::Finetune(c) => (vec![Stage::Finetune], c),
        Command::Predict(c) => (vec![Stage::Predict], c),
        Command::Eval(c) => (vec![Stage::Eval], c),
        Command::TrainKge(c) => (vec![Stage::TrainKge], c),
        Command::Ensemble(c) => (vec![Stage::Ensemble], c),
        Command::MakeFixture(c) => (vec![Stage::MakeFixture], c),
        Command::Run(c) => (Stage::RUN.to_vec(), c),
    };
    let cfg = load_config(&common)?;
    for stage in stages {
        print!("{}", run_stage(stage, &cfg)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("error\t{}\t{message}", e.kind());
            ExitCode::FAILURE
        }
    }
}
