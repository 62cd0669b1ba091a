//! Exact-match evaluation in meaning-representation space and multi-run
//! aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canon::{decanonicalize, simplify, CanonScheme, LabelTable};
use crate::tree::{normalize_ws, parse_top};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("prediction/gold length mismatch: {predictions} vs {golds}")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("no results to aggregate")]
    NoResults,
}

/// Gold side of the comparison: parse, simplify when the scheme does, and
/// reserialize. Opaque (non-TOP) golds fall back to whitespace-normalized
/// string comparison.
fn gold_comparison_form(gold: &str, scheme: &CanonScheme) -> Option<String> {
    let tree = parse_top(gold).ok()?;
    let tree = if scheme.applies_simplify() {
        simplify(&tree)
    } else {
        tree
    };
    Some(tree.serialize())
}

/// Prediction side: invert the label substitution, parse, reserialize.
fn pred_comparison_form(
    pred: &str,
    scheme: &CanonScheme,
    table: Option<&LabelTable>,
) -> Option<String> {
    decanonicalize(pred, scheme, table)
        .ok()
        .map(|t| t.serialize())
}

/// Exact-match counts plus per-example flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    pub matches: usize,
    pub n: usize,
    pub flags: Vec<bool>,
}

impl MatchOutcome {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.matches as f64 / self.n as f64
    }
}

/// Compares predictions against golds in a common space: predictions are
/// decanonicalized where invertible and reserialized; golds are simplified
/// too when the scheme simplifies. Unparseable predictions count as
/// mismatches, never as errors. Golds that are not TOP trees (opaque
/// meanings or canonical strings) compare by whitespace-normalized string
/// equality instead.
pub fn exact_match(
    predictions: &[String],
    golds: &[String],
    scheme: &CanonScheme,
    table: Option<&LabelTable>,
) -> Result<MatchOutcome, EvalError> {
    if predictions.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    let mut flags = Vec::with_capacity(predictions.len());
    for (pred, gold) in predictions.iter().zip(golds) {
        let matched = match gold_comparison_form(gold, scheme) {
            Some(gold_form) => match pred_comparison_form(pred, scheme, table) {
                Some(pred_form) => normalize_ws(&pred_form) == normalize_ws(&gold_form),
                None => false,
            },
            // Opaque gold: plain string comparison.
            None => normalize_ws(pred) == normalize_ws(gold),
        };
        flags.push(matched);
    }
    let matches = flags.iter().filter(|&&f| f).count();
    Ok(MatchOutcome {
        matches,
        n: flags.len(),
        flags,
    })
}

/// One experiment run: configuration axes plus exact integer counts, so the
/// accuracy is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub domain: String,
    pub scheme: String,
    pub tuning: String,
    pub decoding: String,
    pub seed: u64,
    pub matches: usize,
    pub n: usize,
}

impl RunResult {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.matches as f64 / self.n as f64
    }
}

/// Grouping axes for [`aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupField {
    Domain,
    Scheme,
    Tuning,
    Decoding,
}

impl GroupField {
    pub fn name(self) -> &'static str {
        match self {
            GroupField::Domain => "domain",
            GroupField::Scheme => "scheme",
            GroupField::Tuning => "tuning",
            GroupField::Decoding => "decoding",
        }
    }

    fn of(self, result: &RunResult) -> String {
        match self {
            GroupField::Domain => result.domain.clone(),
            GroupField::Scheme => result.scheme.clone(),
            GroupField::Tuning => result.tuning.clone(),
            GroupField::Decoding => result.decoding.clone(),
        }
    }
}

/// One aggregate row: the group key values, mean accuracy, sample standard
/// deviation (absent for singleton groups), and run count.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub key: Vec<String>,
    pub mean: f64,
    pub std: Option<f64>,
    pub n_runs: usize,
}

/// Groups run accuracies and reports mean and sample (n−1) standard
/// deviation per group, rows in sorted key order.
pub fn aggregate(
    results: &[RunResult],
    group_by: &[GroupField],
) -> Result<Vec<AggregateRow>, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoResults);
    }
    let mut groups: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for result in results {
        let key: Vec<String> = group_by.iter().map(|f| f.of(result)).collect();
        groups.entry(key).or_default().push(result.accuracy());
    }
    Ok(groups
        .into_iter()
        .map(|(key, accs)| {
            let n_runs = accs.len();
            let mean = accs.iter().sum::<f64>() / n_runs as f64;
            let std = if n_runs > 1 {
                let var =
                    accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n_runs - 1) as f64;
                Some(var.sqrt())
            } else {
                None
            };
            AggregateRow {
                key,
                mean,
                std,
                n_runs,
            }
        })
        .collect())
}

/// Writes per-run rows as CSV with the fixed header
/// `domain,scheme,tuning,decoding,seed,n,accuracy`, rows sorted, accuracy
/// at fixed 4-decimal formatting.
pub fn write_runs_csv(results: &[RunResult], path: &Path) -> std::io::Result<()> {
    let mut rows = results.to_vec();
    rows.sort_by(|a, b| {
        (&a.domain, &a.scheme, &a.tuning, &a.decoding, a.seed).cmp(&(
            &b.domain,
            &b.scheme,
            &b.tuning,
            &b.decoding,
            b.seed,
        ))
    });
    let mut out = String::from("domain,scheme,tuning,decoding,seed,n,accuracy\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4}\n",
            r.domain,
            r.scheme,
            r.tuning,
            r.decoding,
            r.seed,
            r.n,
            r.accuracy()
        ));
    }
    fs::write(path, out)
}

/// Writes aggregate rows as CSV: the group field names, then
/// `mean,std,n`. Singleton groups leave `std` empty.
pub fn write_aggregate_csv(
    rows: &[AggregateRow],
    group_by: &[GroupField],
    path: &Path,
) -> std::io::Result<()> {
    let mut header: Vec<&str> = group_by.iter().map(|f| f.name()).collect();
    header.extend(["mean", "std", "n"]);
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for part in &row.key {
            out.push_str(part);
            out.push(',');
        }
        let std = row.std.map(|s| format!("{s:.4}")).unwrap_or_default();
        out.push_str(&format!("{:.4},{},{}\n", row.mean, std, row.n_runs));
    }
    fs::write(path, out)
}
