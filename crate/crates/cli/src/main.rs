use std::path::PathBuf;
use std::process::ExitCode;

use biomech_cli::commands::{self, *};
use biomech_cli::Workspace;
use clap::{Parser, Subcommand};

/// Synthetic-gait motion tokenization, dataset building and baselines.
///
/// Artifacts live under the workspace directory:
///   cohort/      synthetic participants and trial files (synth)
///   models/      tokenizer, participant split, baselines
///   tokens/      token corpus (tokenize)
///   datasets/    prompt/answer dataset and fine-tune manifest
///   reports/     evaluation and ablation reports
#[derive(Debug, Parser)]
#[command(name = "biomech", version, verbatim_doc_comment)]
struct Cli {
    #[arg(long, short = 'w', global = true, default_value = "workspace")]
    workspace: PathBuf,
    /// More log output (repeatable).
    #[arg(long, short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a synthetic cohort and write its trials.
    Synth(SynthArgs),
    /// Split participants and train the motion tokenizer.
    TrainTokenizer(TrainTokenizerArgs),
    /// Tokenize every trial of the cohort.
    Tokenize,
    /// Render prompt/answer samples from tokens and ground truth.
    BuildDataset(BuildDatasetArgs),
    /// Train token-histogram gradient-boosted baselines.
    TrainBaselines(TrainBaselinesArgs),
    /// Score the baselines on the test split.
    Eval(EvalArgs),
    /// Compare datasets restricted to task subsets.
    Ablate(AblateArgs),
    /// Serve trials and chat over HTTP.
    Serve(ServeArgs),
    /// Write the fine-tuning hyperparameter manifest.
    ExportManifest(ExportManifestArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ws = Workspace::new(cli.workspace);
    match cli.command {
        Command::Synth(a) => commands::synth(&ws, &a),
        Command::TrainTokenizer(a) => commands::train_tokenizer(&ws, &a).map(|_| ()),
        Command::Tokenize => commands::tokenize(&ws).map(|_| ()),
        Command::BuildDataset(a) => commands::build_dataset(&ws, &a).map(|_| ()),
        Command::TrainBaselines(a) => commands::train_baselines(&ws, &a),
        Command::Eval(a) => commands::eval(&ws, &a).map(|_| ()),
        Command::Ablate(a) => commands::ablate(&ws, &a).map(|_| ()),
        Command::Serve(a) => commands::serve(&ws, &a),
        Command::ExportManifest(a) => commands::export_manifest(&ws, &a).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}
