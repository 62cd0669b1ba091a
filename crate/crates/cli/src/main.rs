//! `semparse`: canonicalize, sample, synthesize, train, decode, and evaluate
//! TOP-style semantic-parsing experiments from the command line.

mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "semparse",
    version,
    about = "Low-resource semantic parsing experiments: canonicalization, prompt tuning, trie-constrained decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fill the canonical field of a dataset under a canonicalization scheme
    Canonicalize(commands::CanonicalizeArgs),
    /// Draw low-resource train/val/test splits (n-shot or SPIS)
    Sample(commands::SampleArgs),
    /// Generate a synthetic dataset from the template grammar
    Synth(commands::SynthArgs),
    /// Build the decoding prefix tree over a dataset's targets
    BuildTrie(commands::BuildTrieArgs),
    /// Train a model (prompt tuning or fine-tuning) with early stopping
    Train(commands::TrainArgs),
    /// Decode inputs with a trained model, optionally trie-constrained
    Decode(commands::DecodeArgs),
    /// Exact-match evaluation of predictions against gold targets
    Eval(commands::EvalArgs),
    /// Run the full multi-seed pipeline from a JSON config
    Experiment(commands::ExperimentArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(commands::GradcheckArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Canonicalize(args) => commands::canonicalize(args),
        Command::Sample(args) => commands::sample(args),
        Command::Synth(args) => commands::synth(args),
        Command::BuildTrie(args) => commands::build_trie(args),
        Command::Train(args) => commands::train(args),
        Command::Decode(args) => commands::decode(args),
        Command::Eval(args) => commands::eval(args),
        Command::Experiment(args) => commands::experiment(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
    };
    if let Err(e) = result {
        // Single-line machine-parseable failure prefix.
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
