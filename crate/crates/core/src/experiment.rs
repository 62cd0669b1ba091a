//! End-to-end experiment pipeline: sample, canonicalize, build vocabulary
//! and trie, train, decode, evaluate, aggregate.
//!
//! A run is a pure function of its JSON config: every stage is seeded and
//! artifacts (splits, label table, vocabulary, trie, checkpoint, history,
//! predictions, result CSVs) are persisted under the output directory so any
//! stage can be rerun in isolation. Rerunning an identical config produces a
//! byte-identical output tree.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beam::{constrained_beam_search, unconstrained_beam_search};
use crate::canon::{apply_scheme, build_label_table, CanonScheme, LabelTable};
use crate::data::{
    gen_synthetic, random_split, save_jsonl, spis_split, Dataset, SynthGrammarConfig,
};
use crate::eval::{
    aggregate, exact_match, write_aggregate_csv, write_runs_csv, GroupField, RunResult,
};
use crate::model::{init_model, Model, ModelConfig, ModelScorer};
use crate::train::{train, Pair, TrainConfig, TuneMode};
use crate::tree::parse_top;
use crate::trie::Trie;
use crate::vocab::Vocabulary;

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct ExperimentError {
    pub stage: &'static str,
    pub message: String,
}

impl ExperimentError {
    fn new(stage: &'static str, message: impl std::fmt::Display) -> ExperimentError {
        ExperimentError {
            stage,
            message: message.to_string(),
        }
    }
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> ExperimentError {
    move |e| ExperimentError {
        stage,
        message: e.to_string(),
    }
}

/// Where the raw data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// JSONL (`.jsonl`/`.json`) or TOP TSV (anything else) by extension.
    Path { path: PathBuf },
    Synthetic {
        grammar: SynthGrammarConfig,
        n: usize,
        #[serde(default)]
        gen_seed: u64,
    },
}

/// How the low-resource training set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    /// Fixed-size uniform training sample; `val_frac` of the remainder
    /// validates, the rest tests.
    Shot { n_train: usize, val_frac: f64 },
    /// Samples-per-intent-and-slot training set; the skipped remainder is
    /// partitioned by `val_frac`.
    Spis { k: usize, val_frac: f64 },
}

/// Which decodings of the test set to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingMode {
    Constrained,
    Unconstrained,
    Both,
}

impl DecodingMode {
    fn wants_constrained(self) -> bool {
        matches!(self, DecodingMode::Constrained | DecodingMode::Both)
    }

    fn wants_unconstrained(self) -> bool {
        matches!(self, DecodingMode::Unconstrained | DecodingMode::Both)
    }
}

/// Which dataset field is the decoding target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetField {
    #[default]
    Meaning,
    /// Precomputed canonical strings (treated as opaque text).
    Canonical,
}

/// Which splits feed the decoding trie. The default covers every split,
/// i.e. all target representations in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrieSplits {
    #[default]
    All,
    Train,
}

/// Model shape knobs, without the vocabulary size (derived) or the seed
/// (one per run).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub max_seq_len: usize,
    pub prompt_len: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let desk = ModelConfig::desk(0, 0);
        ModelSettings {
            d_model: desk.d_model,
            n_heads: desk.n_heads,
            n_encoder_layers: desk.n_encoder_layers,
            n_decoder_layers: desk.n_decoder_layers,
            max_seq_len: desk.max_seq_len,
            prompt_len: desk.prompt_len,
        }
    }
}

impl ModelSettings {
    fn to_config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_encoder_layers: self.n_encoder_layers,
            n_decoder_layers: self.n_decoder_layers,
            max_seq_len: self.max_seq_len,
            vocab_size,
            prompt_len: self.prompt_len,
            seed,
        }
    }
}

/// Training knobs, without the mode (a config axis) or the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_interval: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let base = TrainConfig::new(TuneMode::FineTune);
        TrainSettings {
            learning_rate: None,
            batch_size: base.batch_size,
            max_epochs: base.max_epochs,
            patience: base.patience,
            eval_interval: base.eval_interval,
        }
    }
}

impl TrainSettings {
    fn to_config(&self, mode: TuneMode, seed: u64) -> TrainConfig {
        TrainConfig {
            mode,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            eval_interval: self.eval_interval,
            seed,
        }
    }
}

fn default_beam_width() -> usize {
    10
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Full experiment description; one run per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub sampling: SamplingMethod,
    pub scheme: CanonScheme,
    /// Optional ablation sweep: run every listed scheme (overrides
    /// `scheme`); artifacts then nest under one directory per scheme.
    #[serde(default)]
    pub schemes: Option<Vec<CanonScheme>>,
    pub tuning: TuneMode,
    #[serde(default)]
    pub target: TargetField,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "DecodingMode::default_both")]
    pub decoding: DecodingMode,
    #[serde(default = "default_beam_width")]
    pub beam_width: usize,
    #[serde(default)]
    pub trie_splits: TrieSplits,
    /// Cap on decoded target length; defaults to the longest trie entry.
    #[serde(default)]
    pub max_decode_len: Option<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Row label for result CSVs; defaults to the data's domain tag.
    #[serde(default)]
    pub domain: Option<String>,
    /// Where artifacts land; the CLI resolves this from flags or the
    /// output-root environment variable when absent.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl DecodingMode {
    fn default_both() -> DecodingMode {
        DecodingMode::Both
    }
}

/// Per-seed details kept in memory for callers (everything is also on
/// disk).
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub scheme: String,
    pub seed: u64,
    pub best_val_exact_match: f64,
    pub best_epoch: usize,
    pub constrained_accuracy: Option<f64>,
    pub unconstrained_accuracy: Option<f64>,
    /// Every constrained top-1 decode was a trie member (checked on ids).
    pub constrained_outputs_in_trie: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub results: Vec<RunResult>,
    pub seed_outcomes: Vec<SeedOutcome>,
    pub output_dir: PathBuf,
}

/// Fills the `canonical` field of every example by applying the scheme to
/// its parsed meaning; builds the label table from the whole dataset's
/// ontology when the scheme substitutes labels.
pub fn canonicalize_dataset(
    dataset: &Dataset,
    scheme: &CanonScheme,
) -> Result<(Dataset, Option<LabelTable>), ExperimentError> {
    const STAGE: &str = "canonicalize";
    let mut labels = std::collections::BTreeSet::new();
    let mut trees = Vec::with_capacity(dataset.len());
    for (i, example) in dataset.examples.iter().enumerate() {
        let tree = parse_top(&example.meaning)
            .map_err(|e| ExperimentError::new(STAGE, format!("example {i}: {e}")))?;
        labels.extend(tree.ontology_labels());
        trees.push(tree);
    }
    let table = if scheme.requires_table() {
        Some(build_label_table(&labels, scheme).map_err(|e| ExperimentError::new(STAGE, e))?)
    } else {
        None
    };
    let mut out = dataset.clone();
    for (example, tree) in out.examples.iter_mut().zip(&trees) {
        example.canonical = Some(
            apply_scheme(tree, scheme, table.as_ref())
                .map_err(|e| ExperimentError::new(STAGE, e))?,
        );
    }
    Ok((out, table))
}

fn load_source(source: &DatasetSource) -> Result<Dataset, ExperimentError> {
    let err = stage("load");
    match source {
        DatasetSource::Path { path } => crate::data::load_auto(path).map_err(&err),
        DatasetSource::Synthetic {
            grammar,
            n,
            gen_seed,
        } => gen_synthetic(grammar, *n, *gen_seed).map_err(&err),
    }
}

fn target_of(
    example: &crate::data::Example,
    target: TargetField,
) -> Result<String, ExperimentError> {
    match target {
        TargetField::Meaning => Ok(example.meaning.clone()),
        TargetField::Canonical => example
            .canonical
            .clone()
            .ok_or_else(|| stage("targets")("example lacks a canonical form")),
    }
}

/// Encoded (source, target) pairs for one split. The stored `canonical`
/// field holds the scheme-transformed target.
fn encode_pairs(vocab: &Vocabulary, split: &Dataset) -> Vec<Pair> {
    split
        .examples
        .iter()
        .map(|e| {
            let target = e.canonical.as_deref().unwrap_or(&e.meaning);
            (vocab.encode(&e.utterance), vocab.encode(target))
        })
        .collect()
}

fn greedy_em(
    model: &Model,
    vocab: &Vocabulary,
    scheme: &CanonScheme,
    table: Option<&LabelTable>,
    split: &Dataset,
    golds: &[String],
    max_len: usize,
) -> f64 {
    let scorer = ModelScorer::new(model);
    let mut predictions = Vec::with_capacity(split.len());
    for example in &split.examples {
        let source = vocab.encode(&example.utterance);
        let decoded = unconstrained_beam_search(&scorer, &source, 1, max_len)
            .ok()
            .and_then(|beams| beams.into_iter().next())
            .map(|(ids, _)| vocab.decode(&ids).unwrap_or_default())
            .unwrap_or_default();
        predictions.push(decoded);
    }
    exact_match(&predictions, golds, scheme, table)
        .map(|o| o.accuracy())
        .unwrap_or(0.0)
}

fn write_history(history: &[crate::train::EpochStats], path: &Path) -> std::io::Result<()> {
    let mut out = String::from("epoch,train_loss,val_exact_match\n");
    for h in history {
        let em = h
            .val_exact_match
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default();
        out.push_str(&format!("{},{:.6},{}\n", h.epoch, h.train_loss, em));
    }
    fs::write(path, out)
}

/// Runs the full pipeline for every seed and writes `runs.csv` plus
/// `aggregate.csv` under the output directory. Fails fast with the stage
/// name; artifacts from completed stages are retained.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    if config.seeds.is_empty() {
        return Err(ExperimentError {
            stage: "config",
            message: "seeds must be non-empty".into(),
        });
    }
    let schemes = config
        .schemes
        .clone()
        .unwrap_or_else(|| vec![config.scheme]);
    if schemes.is_empty() {
        return Err(ExperimentError {
            stage: "config",
            message: "schemes must be non-empty".into(),
        });
    }
    if config.target == TargetField::Canonical && schemes.iter().any(|s| s.requires_table()) {
        return Err(ExperimentError {
            stage: "config",
            message: "label-substituting schemes apply to meaning targets only".into(),
        });
    }
    let output_dir = config.output_dir.clone().ok_or(ExperimentError {
        stage: "config",
        message: "output_dir is required".to_string(),
    })?;
    fs::create_dir_all(&output_dir).map_err(stage("output"))?;
    let dataset = load_source(&config.dataset)?;
    if dataset.is_empty() {
        return Err(ExperimentError {
            stage: "load",
            message: "dataset is empty".into(),
        });
    }
    let domain = config.domain.clone().unwrap_or_else(|| {
        let tag = &dataset.examples[0].domain;
        if tag.is_empty() {
            "default".to_string()
        } else {
            tag.clone()
        }
    });

    let mut results = Vec::new();
    let mut seed_outcomes = Vec::new();
    for scheme in &schemes {
        let scheme_dir = if schemes.len() > 1 {
            output_dir.join(scheme.to_string())
        } else {
            output_dir.clone()
        };
        for &seed in &config.seeds {
            let outcome =
                run_seed(config, scheme, &scheme_dir, &dataset, &domain, seed, &mut results)?;
            seed_outcomes.push(outcome);
        }
    }

    write_runs_csv(&results, &output_dir.join("runs.csv")).map_err(stage("results"))?;
    let group_by = [
        GroupField::Domain,
        GroupField::Scheme,
        GroupField::Tuning,
        GroupField::Decoding,
    ];
    let rows = aggregate(&results, &group_by).map_err(stage("aggregate"))?;
    write_aggregate_csv(&rows, &group_by, &output_dir.join("aggregate.csv"))
        .map_err(stage("aggregate"))?;

    Ok(ExperimentOutcome {
        results,
        seed_outcomes,
        output_dir,
    })
}

fn run_seed(
    config: &ExperimentConfig,
    scheme: &CanonScheme,
    output_dir: &Path,
    dataset: &Dataset,
    domain: &str,
    seed: u64,
    results: &mut Vec<RunResult>,
) -> Result<SeedOutcome, ExperimentError> {
    let run_dir = output_dir.join(format!("seed_{seed}"));
    fs::create_dir_all(&run_dir).map_err(stage("output"))?;

    // Sample the low-resource splits.
    let (train_split, val_split, test_split) = match config.sampling {
        SamplingMethod::Shot { n_train, val_frac } => {
            random_split(dataset, n_train, val_frac, seed).map_err(stage("sample"))?
        }
        SamplingMethod::Spis { k, val_frac } => {
            spis_split(dataset, k, val_frac, seed).map_err(stage("sample"))?
        }
    };

    // Canonicalize targets. Meaning targets get the scheme applied, with
    // one label table built over the whole dataset ontology so validation
    // and test labels decanonicalize too; opaque canonical targets are
    // taken as-is from the dataset.
    let (train_split, val_split, test_split, table) = match config.target {
        TargetField::Meaning => {
            const STAGE: &str = "canonicalize";
            let mut labels = std::collections::BTreeSet::new();
            for (i, example) in dataset.examples.iter().enumerate() {
                let tree = parse_top(&example.meaning)
                    .map_err(|e| ExperimentError::new(STAGE, format!("example {i}: {e}")))?;
                labels.extend(tree.ontology_labels());
            }
            let table = if scheme.requires_table() {
                Some(
                    build_label_table(&labels, scheme)
                        .map_err(|e| ExperimentError::new(STAGE, e))?,
                )
            } else {
                None
            };
            let recanon = |split: &Dataset| -> Result<Dataset, ExperimentError> {
                let mut out = split.clone();
                for example in out.examples.iter_mut() {
                    let tree =
                        parse_top(&example.meaning).map_err(|e| ExperimentError::new(STAGE, e))?;
                    example.canonical = Some(
                        apply_scheme(&tree, scheme, table.as_ref())
                            .map_err(|e| ExperimentError::new(STAGE, e))?,
                    );
                }
                Ok(out)
            };
            (
                recanon(&train_split)?,
                recanon(&val_split)?,
                recanon(&test_split)?,
                table,
            )
        }
        TargetField::Canonical => {
            for (i, e) in dataset.examples.iter().enumerate() {
                if e.canonical.is_none() {
                    return Err(stage("targets")(format!(
                        "example {i} lacks a canonical form"
                    )));
                }
            }
            (train_split, val_split, test_split, None)
        }
    };

    save_jsonl(&train_split, &run_dir.join("train.jsonl")).map_err(stage("artifacts"))?;
    save_jsonl(&val_split, &run_dir.join("val.jsonl")).map_err(stage("artifacts"))?;
    save_jsonl(&test_split, &run_dir.join("test.jsonl")).map_err(stage("artifacts"))?;
    if let Some(table) = &table {
        table
            .save_tsv(&run_dir.join("labels.tsv"))
            .map_err(stage("artifacts"))?;
    }

    // Vocabulary over training utterances and targets; out-of-vocab label
    // surfaces enter as atomic tokens.
    let atomic_surfaces: Vec<String> = table
        .as_ref()
        .map(|t| t.atomic_surfaces())
        .unwrap_or_default();
    let corpus: Vec<String> = train_split
        .examples
        .iter()
        .flat_map(|e| {
            [
                e.utterance.clone(),
                e.canonical.clone().unwrap_or_else(|| e.meaning.clone()),
            ]
        })
        .collect();
    let vocab =
        Vocabulary::build_with_atomics(&corpus, &atomic_surfaces).map_err(stage("vocab"))?;
    vocab
        .save(&run_dir.join("vocab.txt"))
        .map_err(stage("artifacts"))?;

    // Decoding trie over the targets of the configured splits.
    let trie_sources: Vec<&Dataset> = match config.trie_splits {
        TrieSplits::All => vec![&train_split, &val_split, &test_split],
        TrieSplits::Train => vec![&train_split],
    };
    let mut sequences = Vec::new();
    for split in trie_sources {
        for example in &split.examples {
            let target = example.canonical.as_deref().unwrap_or(&example.meaning);
            sequences.push(vocab.encode(target));
        }
    }
    let trie = Trie::build(&sequences).map_err(stage("trie"))?;
    trie.save(&run_dir.join("trie.txt"))
        .map_err(stage("artifacts"))?;

    // Model and training.
    let model_config = config.model.to_config(vocab.len(), seed);
    let mut model = init_model(model_config, &vocab).map_err(stage("model"))?;
    let train_pairs = encode_pairs(&vocab, &train_split);
    let val_pairs = encode_pairs(&vocab, &val_split);
    let val_golds: Vec<String> = val_split
        .examples
        .iter()
        .map(|e| target_of(e, config.target))
        .collect::<Result<_, _>>()?;
    let decode_len = config
        .max_decode_len
        .unwrap_or_else(|| trie.max_seq_len())
        .min(model.config().max_target_len());
    let train_config = config.train.to_config(config.tuning, seed);
    let scheme = *scheme;
    let vocab_ref = &vocab;
    let golds_ref = &val_golds;
    let val_split_ref = &val_split;
    let table_ref = table.as_ref();
    let mut eval_fn = move |m: &Model, _pairs: &[Pair]| {
        greedy_em(
            m,
            vocab_ref,
            &scheme,
            table_ref,
            val_split_ref,
            golds_ref,
            decode_len,
        )
    };
    let outcome = train(
        &mut model,
        &train_pairs,
        &val_pairs,
        &train_config,
        &mut eval_fn,
    )
    .map_err(stage("train"))?;
    write_history(&outcome.history, &run_dir.join("history.csv")).map_err(stage("artifacts"))?;
    let best = outcome.best_model;
    best.save(&run_dir.join("model.ckpt"))
        .map_err(stage("artifacts"))?;

    // Decode and evaluate the test set with the selected modes.
    let test_golds: Vec<String> = test_split
        .examples
        .iter()
        .map(|e| target_of(e, config.target))
        .collect::<Result<_, _>>()?;
    let scorer = ModelScorer::new(&best);
    let mut constrained_accuracy = None;
    let mut unconstrained_accuracy = None;
    let mut constrained_outputs_in_trie = true;

    if config.decoding.wants_constrained() {
        let mut predictions = Vec::with_capacity(test_split.len());
        for example in &test_split.examples {
            let source = vocab.encode(&example.utterance);
            let beams =
                constrained_beam_search(&scorer, &trie, &source, config.beam_width, decode_len)
                    .map_err(stage("decode"))?;
            let (ids, _) = &beams[0];
            constrained_outputs_in_trie &= trie.contains(ids);
            predictions.push(vocab.decode(ids).map_err(stage("decode"))?);
        }
        fs::write(
            run_dir.join("preds_constrained.txt"),
            predictions.join("\n") + "\n",
        )
        .map_err(stage("artifacts"))?;
        let outcome = exact_match(&predictions, &test_golds, &scheme, table.as_ref())
            .map_err(stage("eval"))?;
        constrained_accuracy = Some(outcome.accuracy());
        results.push(RunResult {
            domain: domain.to_string(),
            scheme: scheme.to_string(),
            tuning: config.tuning.to_string(),
            decoding: "constrained".to_string(),
            seed,
            matches: outcome.matches,
            n: outcome.n,
        });
    }

    if config.decoding.wants_unconstrained() {
        let mut predictions = Vec::with_capacity(test_split.len());
        for example in &test_split.examples {
            let source = vocab.encode(&example.utterance);
            let beams = unconstrained_beam_search(&scorer, &source, config.beam_width, decode_len)
                .map_err(stage("decode"))?;
            predictions.push(vocab.decode(&beams[0].0).map_err(stage("decode"))?);
        }
        fs::write(
            run_dir.join("preds_unconstrained.txt"),
            predictions.join("\n") + "\n",
        )
        .map_err(stage("artifacts"))?;
        let outcome = exact_match(&predictions, &test_golds, &scheme, table.as_ref())
            .map_err(stage("eval"))?;
        unconstrained_accuracy = Some(outcome.accuracy());
        results.push(RunResult {
            domain: domain.to_string(),
            scheme: scheme.to_string(),
            tuning: config.tuning.to_string(),
            decoding: "unconstrained".to_string(),
            seed,
            matches: outcome.matches,
            n: outcome.n,
        });
    }

    Ok(SeedOutcome {
        scheme: scheme.to_string(),
        seed,
        best_val_exact_match: outcome.best_val_exact_match,
        best_epoch: outcome.best_epoch,
        constrained_accuracy,
        unconstrained_accuracy,
        constrained_outputs_in_trie,
    })
}
