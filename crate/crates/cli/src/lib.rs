//! Command-line companion to `stforge-core`: file formats, run
//! directories, and the subcommands that chain the pieces into a
//! speech-translation pipeline.

use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod rundir;
pub mod synth;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "stforge",
    version,
    about = "End-to-end speech translation at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a synthetic corpus, optionally with planted cleaning
    /// failures.
    Synth(commands::SynthArgs),
    /// Drop utterances whose transcription words did not all align.
    CleanAlign(commands::CleanAlignArgs),
    /// Drop utterances outside the dominant frames/character ratio band.
    CleanRatio(commands::CleanRatioArgs),
    /// Split a manifest into training and development parts.
    Split(commands::SplitArgs),
    /// Build the character vocabulary from a manifest's translations.
    Vocab(commands::VocabArgs),
    /// Train a model from scratch.
    Train(commands::TrainArgs),
    /// Continue training from a checkpoint.
    Finetune(commands::FinetuneArgs),
    /// Average a checkpoint series into one model.
    AvgCkpt(commands::AvgCkptArgs),
    /// Decode a manifest with one checkpoint or an ensemble.
    Translate(commands::TranslateArgs),
    /// Score hypotheses against a manifest's references.
    Score(commands::ScoreArgs),
    /// Run the full cascade: clean, split, train each stage, average,
    /// decode, score.
    Pipeline(commands::PipelineArgs),
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Synth(a) => commands::synth(a),
        Cmd::CleanAlign(a) => commands::clean_align(a),
        Cmd::CleanRatio(a) => commands::clean_ratio(a),
        Cmd::Split(a) => commands::split(a),
        Cmd::Vocab(a) => commands::vocab(a),
        Cmd::Train(a) => commands::train(a),
        Cmd::Finetune(a) => commands::finetune(a),
        Cmd::AvgCkpt(a) => commands::avg_ckpt(a),
        Cmd::Translate(a) => commands::translate(a),
        Cmd::Score(a) => commands::score(a),
        Cmd::Pipeline(a) => commands::pipeline(a),
    }
}
