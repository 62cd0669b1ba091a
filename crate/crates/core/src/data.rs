//! Dataset records, file formats, low-resource sampling, and a synthetic
//! template grammar for self-contained experiments.
//!
//! Two sampling regimes mirror the usual low-resource setups: a uniform
//! n-shot split (fixed-size training set, a fraction of the remainder for
//! validation) and SPIS — samples per intent and slot — which keeps an
//! example while any of its ontology labels is still under quota, so every
//! label ends up with `min(k, available)` kept examples.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tree::{parse_top, Node, OntologyLabel, ParseError, ParseTree};

/// One utterance/meaning record. `meaning` is TOP-bracketed for TOP-style
/// data and opaque for everything else; `canonical` is a precomputed
/// canonical form when the corpus ships one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub utterance: String,
    pub meaning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<String>,
    #[serde(default)]
    pub domain: String,
}

/// Sidecar record describing how a split was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetadata {
    pub source: String,
    pub method: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

/// Ordered list of examples with an optional split tag and provenance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub split: Option<String>,
    pub metadata: Option<SplitMetadata>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Dataset {
        Dataset {
            examples,
            split: None,
            metadata: None,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    fn tagged(examples: Vec<Example>, split: &str, metadata: SplitMetadata) -> Dataset {
        Dataset {
            examples,
            split: Some(split.to_string()),
            metadata: Some(metadata),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("missing field `{field}` at line {line}")]
    MissingField { line: usize, field: &'static str },
    #[error("need more than {needed} examples, have {available}")]
    TooFewExamples { needed: usize, available: usize },
    #[error("example {index} has a non-TOP meaning: {source}")]
    NotTopStyle { index: usize, source: ParseError },
    #[error("synthetic grammar needs at least one intent and one slot")]
    EmptyGrammar,
}

fn field_str(
    value: &serde_json::Value,
    line: usize,
    field: &'static str,
) -> Result<String, DataError> {
    match value.get(field) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(DataError::MalformedRecord {
            line,
            reason: format!("field `{field}` must be a string"),
        }),
        None => Err(DataError::MissingField { line, field }),
    }
}

/// Loads a JSONL dataset: one record per line with keys `utterance`,
/// `meaning`, optional `canonical`, optional `domain`. Line order is kept.
pub fn load_jsonl(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| DataError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
        let utterance = field_str(&value, line_no, "utterance")?;
        let meaning = field_str(&value, line_no, "meaning")?;
        if utterance.trim().is_empty() || meaning.trim().is_empty() {
            return Err(DataError::MalformedRecord {
                line: line_no,
                reason: "utterance and meaning must be non-empty".to_string(),
            });
        }
        let canonical = match value.get("canonical") {
            Some(serde_json::Value::String(s)) => Some(s.clone()),
            Some(serde_json::Value::Null) | None => None,
            Some(_) => {
                return Err(DataError::MalformedRecord {
                    line: line_no,
                    reason: "field `canonical` must be a string".to_string(),
                })
            }
        };
        let domain = match value.get("domain") {
            Some(serde_json::Value::String(s)) => s.clone(),
            None => String::new(),
            Some(_) => {
                return Err(DataError::MalformedRecord {
                    line: line_no,
                    reason: "field `domain` must be a string".to_string(),
                })
            }
        };
        examples.push(Example {
            utterance,
            meaning,
            canonical,
            domain,
        });
    }
    Ok(Dataset::new(examples))
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    for example in &dataset.examples {
        out.push_str(&serde_json::to_string(example).expect("examples serialize"));
        out.push('\n');
    }
    fs::write(path, out)?;
    if let Some(metadata) = &dataset.metadata {
        let sidecar = format!("{}.meta.json", path.display());
        fs::write(
            sidecar,
            serde_json::to_string_pretty(metadata).expect("metadata serializes"),
        )?;
    }
    Ok(())
}

/// Loads tab-separated `utterance TAB meaning [TAB domain]` records;
/// meanings must parse as TOP trees.
pub fn load_top_tsv(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let utterance = cols.next().unwrap_or_default().to_string();
        let meaning = cols
            .next()
            .ok_or(DataError::MissingField {
                line: line_no,
                field: "meaning",
            })?
            .to_string();
        let domain = cols.next().unwrap_or_default().to_string();
        if utterance.trim().is_empty() || meaning.trim().is_empty() {
            return Err(DataError::MalformedRecord {
                line: line_no,
                reason: "utterance and meaning must be non-empty".to_string(),
            });
        }
        parse_top(&meaning).map_err(|e| DataError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        examples.push(Example {
            utterance,
            meaning,
            canonical: None,
            domain,
        });
    }
    Ok(Dataset::new(examples))
}

/// Loads JSONL for `.jsonl`/`.json` paths, TOP TSV otherwise.
pub fn load_auto(path: &Path) -> Result<Dataset, DataError> {
    let jsonl = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("json"));
    if jsonl {
        load_jsonl(path)
    } else {
        load_top_tsv(path)
    }
}

pub fn save_top_tsv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    for example in &dataset.examples {
        out.push_str(&example.utterance);
        out.push('\t');
        out.push_str(&example.meaning);
        out.push('\t');
        out.push_str(&example.domain);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Uniform low-resource split: `n_train` examples for training (seeded
/// shuffle, no replacement), `val_frac` of the remainder for validation,
/// the rest for testing. Partitions are disjoint and exhaustive.
pub fn random_split(
    dataset: &Dataset,
    n_train: usize,
    val_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    if dataset.len() <= n_train {
        return Err(DataError::TooFewExamples {
            needed: n_train,
            available: dataset.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let pick = |ids: &[usize]| ids.iter().map(|&i| dataset.examples[i].clone()).collect();
    let remainder = dataset.len() - n_train;
    let n_val = (remainder as f64 * val_frac).floor() as usize;
    let metadata = |split: &str| SplitMetadata {
        source: dataset
            .metadata
            .as_ref()
            .map(|m| m.source.clone())
            .unwrap_or_else(|| "memory".to_string()),
        method: "random_split".to_string(),
        params: serde_json::json!({ "n_train": n_train, "val_frac": val_frac, "split": split }),
        seed,
    };
    let train = Dataset::tagged(pick(&order[..n_train]), "train", metadata("train"));
    let val = Dataset::tagged(
        pick(&order[n_train..n_train + n_val]),
        "val",
        metadata("val"),
    );
    let test = Dataset::tagged(pick(&order[n_train + n_val..]), "test", metadata("test"));
    Ok((train, val, test))
}

fn example_labels(example: &Example, index: usize) -> Result<Vec<OntologyLabel>, DataError> {
    let tree =
        parse_top(&example.meaning).map_err(|source| DataError::NotTopStyle { index, source })?;
    Ok(tree.ontology_labels().into_iter().collect())
}

/// Greedy SPIS pass over a seeded shuffle; returns (kept, skipped) indices
/// in shuffle order.
fn spis_pass(
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let labels_per_example: Vec<Vec<OntologyLabel>> = dataset
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| example_labels(e, i))
        .collect::<Result<_, _>>()?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut counts: std::collections::BTreeMap<OntologyLabel, usize> =
        std::collections::BTreeMap::new();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for &i in &order {
        let labels = &labels_per_example[i];
        if labels
            .iter()
            .any(|l| counts.get(l).copied().unwrap_or(0) < k)
        {
            for l in labels {
                *counts.entry(l.clone()).or_insert(0) += 1;
            }
            kept.push(i);
        } else {
            skipped.push(i);
        }
    }
    Ok((kept, skipped))
}

fn spis_metadata(dataset: &Dataset, k: usize, seed: u64) -> SplitMetadata {
    SplitMetadata {
        source: dataset
            .metadata
            .as_ref()
            .map(|m| m.source.clone())
            .unwrap_or_else(|| "memory".to_string()),
        method: "spis".to_string(),
        params: serde_json::json!({ "k": k }),
        seed,
    }
}

/// SPIS sampling: a greedy pass over a seeded shuffle keeps an example iff
/// at least one of its ontology labels has fewer than `k` kept occurrences
/// so far. Afterwards every label reaches its quota of `min(k, available)`
/// kept examples. Requires TOP-style meanings.
pub fn spis_sample(dataset: &Dataset, k: usize, seed: u64) -> Result<Dataset, DataError> {
    let (kept, _) = spis_pass(dataset, k, seed)?;
    let examples = kept.iter().map(|&i| dataset.examples[i].clone()).collect();
    Ok(Dataset::tagged(
        examples,
        "train",
        spis_metadata(dataset, k, seed),
    ))
}

/// SPIS training set plus a validation/test partition of the skipped
/// remainder (`val_frac` of it to validation).
pub fn spis_split(
    dataset: &Dataset,
    k: usize,
    val_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let (kept, skipped) = spis_pass(dataset, k, seed)?;
    if skipped.is_empty() {
        return Err(DataError::TooFewExamples {
            needed: kept.len(),
            available: dataset.len(),
        });
    }
    let pick = |ids: &[usize]| ids.iter().map(|&i| dataset.examples[i].clone()).collect();
    let n_val = (skipped.len() as f64 * val_frac).floor() as usize;
    let train = Dataset::tagged(pick(&kept), "train", spis_metadata(dataset, k, seed));
    let val = Dataset::tagged(
        pick(&skipped[..n_val]),
        "val",
        spis_metadata(dataset, k, seed),
    );
    let test = Dataset::tagged(
        pick(&skipped[n_val..]),
        "test",
        spis_metadata(dataset, k, seed),
    );
    Ok((train, val, test))
}

fn default_max_depth() -> usize {
    5
}
fn default_value_pool() -> usize {
    12
}
fn default_optional_slot_prob() -> f64 {
    0.5
}
fn default_domain() -> String {
    "synth".to_string()
}

/// Weighted template grammar for synthetic utterance/meaning pairs.
///
/// Every intent has a two-word carrier phrase and two required slots; a
/// third slot appears with `optional_slot_prob`. Each slot surfaces as a
/// keyword token (intent level) followed by its content: a value word from
/// a shared lexicon or, with `nesting_prob`, a nested intent — which is how
/// depth-3-and-deeper trees arise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGrammarConfig {
    pub n_intents: usize,
    pub n_slots: usize,
    #[serde(default)]
    pub nesting_prob: f64,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_value_pool")]
    pub value_pool: usize,
    #[serde(default = "default_optional_slot_prob")]
    pub optional_slot_prob: f64,
    #[serde(default = "default_domain")]
    pub domain: String,
}

impl SynthGrammarConfig {
    /// Flat ontology sized like a small assistant domain: 7 intents, 11
    /// slots, no nesting.
    pub fn weather_like() -> SynthGrammarConfig {
        SynthGrammarConfig {
            n_intents: 7,
            n_slots: 11,
            nesting_prob: 0.0,
            max_depth: default_max_depth(),
            value_pool: default_value_pool(),
            optional_slot_prob: default_optional_slot_prob(),
            domain: "weatherlike".to_string(),
        }
    }

    /// Larger compositional ontology: 19 intents, 32 slots, and enough
    /// nesting for roughly a fifth of the trees to exceed depth 2.
    pub fn reminder_like() -> SynthGrammarConfig {
        SynthGrammarConfig {
            n_intents: 19,
            n_slots: 32,
            nesting_prob: 0.11,
            max_depth: default_max_depth(),
            value_pool: default_value_pool(),
            optional_slot_prob: default_optional_slot_prob(),
            domain: "reminderlike".to_string(),
        }
    }
}

const SYLLABLES: [&str; 16] = [
    "ba", "de", "ki", "lo", "mu", "na", "po", "ra", "su", "ta", "vi", "zo", "fe", "ga", "hi", "ju",
];

/// Injective index-to-word mapping (bijective base-16 over syllables).
fn synth_word(mut n: usize) -> String {
    let mut word = String::new();
    loop {
        word.push_str(SYLLABLES[n % SYLLABLES.len()]);
        if n < SYLLABLES.len() {
            return word;
        }
        n = n / SYLLABLES.len() - 1;
    }
}

struct SynthGrammar<'c> {
    config: &'c SynthGrammarConfig,
}

impl<'c> SynthGrammar<'c> {
    fn carrier(&self, intent: usize, k: usize) -> String {
        synth_word(2 * intent + k)
    }

    fn keyword(&self, slot: usize) -> String {
        synth_word(2 * self.config.n_intents + slot)
    }

    fn value(&self, v: usize) -> String {
        synth_word(2 * self.config.n_intents + self.config.n_slots + v)
    }

    fn intent_label(&self, i: usize) -> OntologyLabel {
        OntologyLabel::intent(format!("INTENT{i:02}"))
    }

    fn slot_label(&self, j: usize) -> OntologyLabel {
        OntologyLabel::slot(format!("SLOT{j:02}"))
    }

    fn slots_of(&self, intent: usize) -> [usize; 3] {
        let n = self.config.n_slots;
        [(2 * intent) % n, (2 * intent + 1) % n, (2 * intent + 2) % n]
    }

    /// Builds one intent subtree; `depth` counts intent/slot nesting so far.
    fn gen_intent(&self, rng: &mut ChaCha8Rng, intent: usize, depth: usize) -> Node {
        let config = self.config;
        let mut children = vec![
            Node::Token(self.carrier(intent, 0)),
            Node::Token(self.carrier(intent, 1)),
        ];
        let slots = self.slots_of(intent);
        let n_slots = if rng.random_bool(config.optional_slot_prob) {
            3
        } else {
            2
        };
        for &slot in slots.iter().take(n_slots) {
            children.push(Node::Token(self.keyword(slot)));
            // Nesting adds two levels (slot + intent); keep inside max_depth.
            let may_nest = config.nesting_prob > 0.0 && depth + 2 < config.max_depth;
            let slot_content = if may_nest && rng.random_bool(config.nesting_prob) {
                let nested = rng.random_range(0..config.n_intents);
                self.gen_intent(rng, nested, depth + 2)
            } else {
                Node::Token(self.value(rng.random_range(0..config.value_pool)))
            };
            children.push(Node::Slot {
                label: self.slot_label(slot),
                children: vec![slot_content],
            });
        }
        Node::Intent {
            label: self.intent_label(intent),
            children,
        }
    }
}

fn leaf_tokens(node: &Node, out: &mut Vec<String>) {
    match node {
        Node::Token(text) => out.push(text.clone()),
        Node::Intent { children, .. } | Node::Slot { children, .. } => {
            for child in children {
                leaf_tokens(child, out);
            }
        }
    }
}

/// Samples `n` utterance/meaning pairs from the template grammar,
/// deterministically for a given seed. Every meaning is a well-formed TOP
/// tree whose leaves spell the utterance.
pub fn gen_synthetic(
    config: &SynthGrammarConfig,
    n: usize,
    seed: u64,
) -> Result<Dataset, DataError> {
    if config.n_intents == 0 || config.n_slots == 0 || config.value_pool == 0 {
        return Err(DataError::EmptyGrammar);
    }
    let grammar = SynthGrammar { config };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let intent = rng.random_range(0..config.n_intents);
        let root = grammar.gen_intent(&mut rng, intent, 1);
        let tree = ParseTree::new(root).expect("generated trees are structurally valid");
        let mut tokens = Vec::new();
        leaf_tokens(tree.root(), &mut tokens);
        examples.push(Example {
            utterance: tokens.join(" "),
            meaning: tree.serialize(),
            canonical: None,
            domain: config.domain.clone(),
        });
    }
    let metadata = SplitMetadata {
        source: "synthetic".to_string(),
        method: "gen_synthetic".to_string(),
        params: serde_json::to_value(config).expect("grammar config serializes"),
        seed,
    };
    Ok(Dataset {
        examples,
        split: None,
        metadata: Some(metadata),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample_dataset(n: usize) -> Dataset {
        gen_synthetic(&SynthGrammarConfig::weather_like(), n, 42).unwrap()
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let dataset = sample_dataset(25);
        save_jsonl(&dataset, &path).unwrap();
        let loaded = load_jsonl(&path).unwrap();
        assert_eq!(loaded.examples, dataset.examples);
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        fs::write(
            &path,
            "{\"utterance\": \"a\", \"meaning\": \"[IN:A x ]\"}\n{\"utterance\": \"b\"}\n",
        )
        .unwrap();
        match load_jsonl(&path).unwrap_err() {
            DataError::MissingField { line, field } => {
                assert_eq!((line, field), (2, "meaning"));
            }
            other => panic!("unexpected error {other}"),
        }
        fs::write(&path, "not json\n").unwrap();
        assert!(matches!(
            load_jsonl(&path).unwrap_err(),
            DataError::MalformedRecord { line: 1, .. }
        ));
    }

    #[test]
    fn top_tsv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.tsv");
        let dataset = sample_dataset(10);
        save_top_tsv(&dataset, &path).unwrap();
        let loaded = load_top_tsv(&path).unwrap();
        assert_eq!(loaded.examples, dataset.examples);

        fs::write(&path, "hello\t[IN:A x\tweather\n").unwrap();
        assert!(matches!(
            load_top_tsv(&path).unwrap_err(),
            DataError::MalformedRecord { line: 1, .. }
        ));
    }

    #[test]
    fn tsv_per_domain_counts_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.tsv");
        let mut dataset = sample_dataset(30);
        for (i, e) in dataset.examples.iter_mut().enumerate() {
            e.domain = if i % 3 == 0 {
                "alpha".to_string()
            } else {
                "beta".to_string()
            };
        }
        save_top_tsv(&dataset, &path).unwrap();
        let loaded = load_top_tsv(&path).unwrap();
        let count = |d: &str| loaded.examples.iter().filter(|e| e.domain == d).count();
        assert_eq!(count("alpha"), 10);
        assert_eq!(count("beta"), 20);
    }

    #[test]
    fn random_split_proportions() {
        let dataset = sample_dataset(1200);
        let (train, val, test) = random_split(&dataset, 200, 0.2, 1).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (200, 200, 800));
    }

    #[test]
    fn random_split_partitions_the_dataset() {
        let dataset = sample_dataset(157);
        let (train, val, test) = random_split(&dataset, 40, 0.25, 9).unwrap();
        let mut union: Vec<&Example> = train
            .examples
            .iter()
            .chain(&val.examples)
            .chain(&test.examples)
            .collect();
        assert_eq!(union.len(), dataset.len());
        // As multisets: compare sorted serializations.
        let mut originals: Vec<String> = dataset
            .examples
            .iter()
            .map(|e| serde_json::to_string(e).unwrap())
            .collect();
        let mut got: Vec<String> = union
            .drain(..)
            .map(|e| serde_json::to_string(e).unwrap())
            .collect();
        originals.sort();
        got.sort();
        assert_eq!(originals, got);
    }

    #[test]
    fn random_split_is_seed_deterministic() {
        let dataset = sample_dataset(300);
        let a = random_split(&dataset, 100, 0.2, 5).unwrap();
        let b = random_split(&dataset, 100, 0.2, 5).unwrap();
        assert_eq!(a.0.examples, b.0.examples);
        assert_eq!(a.2.examples, b.2.examples);
        let c = random_split(&dataset, 100, 0.2, 6).unwrap();
        assert_ne!(a.0.examples, c.0.examples);
    }

    #[test]
    fn random_split_needs_enough_examples() {
        let dataset = sample_dataset(10);
        assert!(matches!(
            random_split(&dataset, 10, 0.2, 0),
            Err(DataError::TooFewExamples { .. })
        ));
    }

    fn label_counts(examples: &[Example]) -> BTreeMap<OntologyLabel, usize> {
        let mut counts = BTreeMap::new();
        for e in examples {
            for label in parse_top(&e.meaning).unwrap().ontology_labels() {
                *counts.entry(label).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn spis_keeps_whole_dataset_when_k_is_huge() {
        let dataset = sample_dataset(50);
        let kept = spis_sample(&dataset, 10_000, 3).unwrap();
        assert_eq!(kept.len(), dataset.len());
    }

    #[test]
    fn spis_unique_labels_keep_exactly_k() {
        // Every example is a distinct single-label tree.
        let examples: Vec<Example> = (0..30)
            .map(|i| Example {
                utterance: format!("u{i}"),
                meaning: format!("[IN:ONLY{:02} u{i} ]", i % 3),
                canonical: None,
                domain: String::new(),
            })
            .collect();
        let dataset = Dataset::new(examples);
        let kept = spis_sample(&dataset, 4, 11).unwrap();
        let counts = label_counts(&kept.examples);
        assert!(counts.values().all(|&c| c == 4));
        assert_eq!(kept.len(), 12);
    }

    #[test]
    fn spis_covers_every_label_quota() {
        let dataset = gen_synthetic(&SynthGrammarConfig::reminder_like(), 2000, 8).unwrap();
        let available = label_counts(&dataset.examples);
        for k in [10usize, 25] {
            let kept = spis_sample(&dataset, k, 21).unwrap();
            let counts = label_counts(&kept.examples);
            for (label, &avail) in &available {
                let quota = k.min(avail);
                let got = counts.get(label).copied().unwrap_or(0);
                assert!(
                    got >= quota,
                    "label {label} kept {got}, quota {quota} (k={k})"
                );
            }
        }
    }

    #[test]
    fn spis_output_is_a_subsequence_of_the_shuffle() {
        let dataset = sample_dataset(120);
        let kept = spis_sample(&dataset, 2, 13).unwrap();
        // Keeping order stable under re-run is implied by determinism.
        let again = spis_sample(&dataset, 2, 13).unwrap();
        assert_eq!(kept.examples, again.examples);
        assert!(kept.len() < dataset.len());
    }

    #[test]
    fn spis_rejects_opaque_meanings() {
        let dataset = Dataset::new(vec![Example {
            utterance: "u".to_string(),
            meaning: "(call listValue ...)".to_string(),
            canonical: Some("canonical form".to_string()),
            domain: String::new(),
        }]);
        assert!(matches!(
            spis_sample(&dataset, 1, 0),
            Err(DataError::NotTopStyle { index: 0, .. })
        ));
    }

    #[test]
    fn synthetic_meanings_parse_and_match_utterances() {
        let config = SynthGrammarConfig::reminder_like();
        let dataset = gen_synthetic(&config, 500, 77).unwrap();
        for example in &dataset.examples {
            let tree = parse_top(&example.meaning).unwrap();
            let mut tokens = Vec::new();
            leaf_tokens(tree.root(), &mut tokens);
            assert_eq!(tokens.join(" "), example.utterance);
            for label in tree.ontology_labels() {
                let name = label.name.as_str();
                assert!(name.starts_with("INTENT") || name.starts_with("SLOT"));
            }
        }
    }

    #[test]
    fn zero_nesting_probability_caps_depth_at_two() {
        let config = SynthGrammarConfig::weather_like();
        let dataset = gen_synthetic(&config, 300, 5).unwrap();
        for example in &dataset.examples {
            assert!(parse_top(&example.meaning).unwrap().depth() <= 2);
        }
    }

    #[test]
    fn nesting_produces_deep_trees() {
        let config = SynthGrammarConfig::reminder_like();
        let dataset = gen_synthetic(&config, 600, 6).unwrap();
        let deep = dataset
            .examples
            .iter()
            .filter(|e| parse_top(&e.meaning).unwrap().depth() > 2)
            .count();
        assert!(deep > 0, "expected some trees deeper than 2");
        let frac = deep as f64 / dataset.len() as f64;
        assert!(frac > 0.05 && frac < 0.6, "depth>2 fraction {frac}");
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let config = SynthGrammarConfig::weather_like();
        let a = gen_synthetic(&config, 40, 9).unwrap();
        let b = gen_synthetic(&config, 40, 9).unwrap();
        assert_eq!(a.examples, b.examples);
    }

    #[test]
    fn empty_grammar_is_rejected() {
        let mut config = SynthGrammarConfig::weather_like();
        config.n_intents = 0;
        assert!(matches!(gen_synthetic(&config, 5, 0), Err(DataError::EmptyGrammar)));
    }

    #[test]
    fn synth_words_are_injective() {
        let mut seen = std::collections::HashSet::new();
        for n in 0..500 {
            assert!(seen.insert(synth_word(n)), "collision at {n}");
        }
    }
}
