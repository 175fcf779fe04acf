use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod failure;
mod manifest;
mod sweep;

use commands::Run;
use config::RunConfig;

/// Subword tokenization and language modelling pipeline.
#[derive(Debug, Parser)]
#[command(name = "sublm", version)]
struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Work directory (default: $SUBLM_WORK_DIR, then ./work).
    #[arg(long, global = true, value_name = "DIR")]
    work_dir: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Count, build the vocabulary, deduplicate, replace OOVs, apply the case transform.
    Preprocess,
    /// Train the unigram subword model on the preprocessed corpus.
    TrainTokenizer,
    /// Encode sentences into subword pieces.
    Encode {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Apply OOV replacement and the case transform first.
        #[arg(long)]
        raw: bool,
    },
    /// Decode subword pieces back into sentences.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Undo the case transform.
        #[arg(long)]
        restore_case: bool,
    },
    /// Train a language model on the encoded corpus.
    TrainLm {
        /// ngram or lstm; overrides `lm_kind`.
        #[arg(long)]
        kind: Option<String>,
    },
    /// Word-level perplexity of the trained model on a test set.
    Eval {
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        kind: Option<String>,
    },
    /// Vocabulary size by layer count grid of LSTM perplexities.
    Sweep,
    #[command(hide = true)]
    SweepCell {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        layers: usize,
    },
    /// Sentences, tokens and OOV rate per corpus file.
    Stats { files: Vec<PathBuf> },
    /// Write a synthetic corpus sampled from a word-frequency list.
    Generate {
        #[arg(long, value_name = "TSV")]
        word_list: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        tokens: usize,
        #[arg(long)]
        output: PathBuf,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let run = Run {
        config,
        work: config::work_dir(cli.work_dir.as_deref()),
    };
    match cli.command {
        Cmd::Preprocess => commands::preprocess(&run),
        Cmd::TrainTokenizer => commands::train_tokenizer(&run),
        Cmd::Encode { input, output, raw } => commands::encode(&run, input.as_deref(), output.as_deref(), raw),
        Cmd::Decode {
            input,
            output,
            restore_case,
        } => commands::decode(&run, &input, &output, restore_case),
        Cmd::TrainLm { kind } => commands::train_lm(&run, kind.as_deref()),
        Cmd::Eval { test, kind } => commands::eval(&run, test.as_deref(), kind.as_deref()),
        Cmd::Sweep => sweep::sweep(&run),
        Cmd::SweepCell { size, layers } => sweep::sweep_cell(&run, size, layers),
        Cmd::Stats { files } => commands::stats(&run, &files),
        Cmd::Generate {
            word_list,
            tokens,
            output,
        } => commands::generate(&run, &word_list, tokens, &output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { failure::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(failure::exit_code(&e))
        }
    }
}
