//! `topic-kg`: preprocess a corpus, train, predict, evaluate, inspect topics.

mod commands;
mod config;
mod error;
mod io;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "topic-kg", version, about = "Topic-aware keyphrase generation for social media posts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    English,
    /// Whitespace-segmented Chinese.
    Chinese,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean raw JSON-lines posts and write train/dev/test splits, the
    /// vocabulary and corpus statistics.
    Preprocess {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::English)]
        profile: Profile,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator vocabulary size; defaults per profile.
        #[arg(long, value_parser = clap::value_parser!(u64).range(5..))]
        seq_size: Option<u64>,
    },
    /// Pretrain and jointly train a model on a preprocessed directory.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Root seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Decoder attention without topics.
        #[arg(long)]
        no_topic_attn: bool,
        /// Decoder state without topics.
        #[arg(long)]
        no_topic_state: bool,
        /// Freeze the topic model after pretraining.
        #[arg(long)]
        separate_train: bool,
        /// Plain copy-enabled seq2seq, no topic model.
        #[arg(long)]
        no_topics: bool,
        #[arg(long, value_name = "DIR", default_value = "runs")]
        runs_dir: PathBuf,
        /// Run name; derived from the config, flags and seed if absent.
        #[arg(long)]
        name: Option<String>,
    },
    /// Generate ranked keyphrases with beam search.
    Predict {
        #[arg(long, value_name = "DIR")]
        ckpt: PathBuf,
        /// Post JSON-lines file, or a preprocessed directory (its test split).
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        beam: u64,
        #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u64).range(1..))]
        max_len: u64,
        /// Keep attention weights and write a trace file alongside.
        #[arg(long)]
        attn_trace: bool,
        /// Output file; defaults to the run's predictions directory when the
        /// checkpoint belongs to a run, standard output otherwise.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Score predictions against gold keyphrases.
    Eval {
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        /// Post JSON-lines file, or a preprocessed directory (its test split).
        #[arg(long, value_name = "PATH")]
        gold: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5", value_parser = clap::value_parser!(u64).range(1..))]
        k: Vec<u64>,
        /// Report file; defaults to the run's reports directory, or next to
        /// the predictions.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Row label in the printed table.
        #[arg(long)]
        label: Option<String>,
    },
    /// Print the top words of every latent topic.
    Topics {
        #[arg(long, value_name = "DIR")]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
