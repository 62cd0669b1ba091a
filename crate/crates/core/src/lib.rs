//! Desk-scale semantic-parsing experimentation toolkit.
//!
//! The pieces: TOP-style bracketed meaning representations ([`tree`]),
//! canonicalization schemes over them ([`canon`]), a whitespace-word
//! tokenizer with atomic label tokens ([`vocab`]), prefix-trie constrained
//! beam search ([`trie`], [`beam`]), a prompt-tunable toy encoder-decoder
//! with built-in reverse-mode differentiation ([`model`], [`train`]),
//! dataset handling with low-resource sampling and a synthetic grammar
//! ([`data`]), exact-match evaluation ([`eval`]), and an end-to-end
//! experiment pipeline ([`experiment`]).

pub mod autodiff;
pub mod beam;
pub mod canon;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod train;
pub mod tree;
pub mod trie;
pub mod vocab;

pub use beam::{constrained_beam_search, unconstrained_beam_search, Beam, DecodeError, Scorer};
pub use canon::{
    apply_scheme, build_label_table, decanonicalize, simplify, CanonError, CanonScheme,
    CanonVariant, LabelTable,
};
pub use data::{
    gen_synthetic, load_jsonl, load_top_tsv, random_split, save_jsonl, save_top_tsv, spis_sample,
    DataError, Dataset, Example, SplitMetadata, SynthGrammarConfig,
};
pub use eval::{
    aggregate, exact_match, write_aggregate_csv, write_runs_csv, AggregateRow, EvalError,
    GroupField, MatchOutcome, RunResult,
};
pub use experiment::{run_experiment, DecodingMode, ExperimentConfig, ExperimentError};
pub use model::{
    grad_check, init_model, GradCheckReport, GradPartition, Model, ModelConfig, ModelError,
    ModelScorer, Partition,
};
pub use train::{train, EpochStats, TrainConfig, TrainOutcome, TuneMode};
pub use tree::{normalize_ws, parse_top, Namespace, Node, OntologyLabel, ParseError, ParseTree};
pub use trie::{Trie, TrieError};
pub use vocab::{TokenId, VocabError, Vocabulary, BOS, EOS, PAD, UNK};
