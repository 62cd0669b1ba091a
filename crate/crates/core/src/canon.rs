//! Canonicalization schemes for meaning representations.
//!
//! Three transformations of the bracketed target, applied alone or (for the
//! label schemes) composed after simplification:
//!
//! * `Simplify` drops utterance tokens sitting directly under intents; slot
//!   values stay.
//! * `OutOfVocab` keeps each ontology label as one surface meant to be
//!   registered as a single atomic vocabulary token.
//! * `InVocab` replaces each ontology label with a short surrogate
//!   (`in0`, `sl1`, ...) built from ordinary vocabulary.
//!
//! Label substitution is bijective via a [`LabelTable`], so model output can
//! be mapped back into meaning-representation space for evaluation.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tree::{Namespace, Node, OntologyLabel, ParseError, ParseTree};

/// Which canonicalization is applied to targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CanonVariant {
    None,
    Simplify,
    OutOfVocab,
    InVocab,
}

/// A canonicalization choice: the variant plus its modifiers.
///
/// `shorten_labels` strips the namespace prefix and lowercases the name
/// before surrogates are built (meaningful for `OutOfVocab`).
/// `compose_simplify` runs `Simplify` before label substitution for the two
/// label schemes; the ablation default leaves schemes uncombined.
///
/// Serializes as its string form, e.g. `"invocab"` or `"oov+shorten"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CanonScheme {
    pub variant: CanonVariant,
    pub shorten_labels: bool,
    pub compose_simplify: bool,
}

impl CanonScheme {
    pub fn new(variant: CanonVariant) -> Self {
        CanonScheme {
            variant,
            shorten_labels: false,
            compose_simplify: false,
        }
    }

    /// True when the scheme replaces ontology labels with surrogates.
    pub fn substitutes_labels(&self) -> bool {
        matches!(
            self.variant,
            CanonVariant::OutOfVocab | CanonVariant::InVocab
        )
    }

    /// True when targets are simplified (either as the variant itself or
    /// composed before substitution).
    pub fn applies_simplify(&self) -> bool {
        self.variant == CanonVariant::Simplify
            || (self.substitutes_labels() && self.compose_simplify)
    }

    /// Label-substituting schemes need a [`LabelTable`].
    pub fn requires_table(&self) -> bool {
        self.substitutes_labels()
    }
}

impl fmt::Display for CanonScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.variant {
            CanonVariant::None => "none",
            CanonVariant::Simplify => "simplify",
            CanonVariant::OutOfVocab => "oov",
            CanonVariant::InVocab => "invocab",
        };
        f.write_str(base)?;
        if self.substitutes_labels() && self.compose_simplify {
            f.write_str("+simplify")?;
        }
        if self.shorten_labels {
            f.write_str("+shorten")?;
        }
        Ok(())
    }
}

impl TryFrom<String> for CanonScheme {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CanonScheme> for String {
    fn from(scheme: CanonScheme) -> String {
        scheme.to_string()
    }
}

impl FromStr for CanonScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split('+');
        let variant = match parts.next().unwrap_or("") {
            "none" => CanonVariant::None,
            "simplify" => CanonVariant::Simplify,
            "oov" | "outofvocab" => CanonVariant::OutOfVocab,
            "invocab" => CanonVariant::InVocab,
            other => return Err(format!("unknown canonicalization scheme `{other}`")),
        };
        let mut scheme = CanonScheme::new(variant);
        for part in parts {
            match part {
                "shorten" => scheme.shorten_labels = true,
                "simplify" if scheme.substitutes_labels() => scheme.compose_simplify = true,
                other => return Err(format!("unknown scheme modifier `+{other}`")),
            }
        }
        Ok(scheme)
    }
}

/// Errors raised by canonicalization operations.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonError {
    #[error("cannot build a label table from an empty label set")]
    EmptyLabelSet,
    #[error("surrogate `{surrogate}` collides: {first} and {second}")]
    DuplicateSurrogate {
        surrogate: String,
        first: OntologyLabel,
        second: OntologyLabel,
    },
    #[error("label {0} is not in the label table")]
    UnknownLabel(OntologyLabel),
    #[error("surrogate `{0}` is not in the label table")]
    UnknownSurrogate(String),
    #[error("scheme requires a label table but none was given")]
    MissingTable,
    #[error("malformed label table line {line}")]
    MalformedTable { line: usize },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Bijective ontology-label <-> surrogate mapping, deterministic for a given
/// label set: labels are sorted lexicographically before assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    variant: CanonVariant,
    by_label: BTreeMap<OntologyLabel, String>,
    by_surrogate: BTreeMap<String, OntologyLabel>,
}

impl LabelTable {
    pub fn variant(&self) -> CanonVariant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.by_label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_label.is_empty()
    }

    pub fn surrogate_of(&self, label: &OntologyLabel) -> Option<&str> {
        self.by_label.get(label).map(String::as_str)
    }

    pub fn label_of(&self, surrogate: &str) -> Option<&OntologyLabel> {
        self.by_surrogate.get(surrogate)
    }

    /// Entries in label order.
    pub fn iter(&self) -> impl Iterator<Item = (&OntologyLabel, &str)> {
        self.by_label.iter().map(|(l, s)| (l, s.as_str()))
    }

    /// Surrogates meant to enter the vocabulary as single atomic tokens
    /// (the out-of-vocab scheme), in label order.
    pub fn atomic_surfaces(&self) -> Vec<String> {
        if self.variant == CanonVariant::OutOfVocab {
            self.by_label.values().cloned().collect()
        } else {
            Vec::new()
        }
    }

    /// Writes the table as two-column TSV (`label TAB surrogate`), sorted by
    /// label.
    pub fn save_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for (label, surrogate) in self.iter() {
            out.push_str(&label.surface());
            out.push('\t');
            out.push_str(surrogate);
            out.push('\n');
        }
        fs::write(path, out)
    }

    /// Loads a table written by [`LabelTable::save_tsv`]. The scheme variant
    /// is not stored in the file and must be supplied by the caller.
    pub fn load_tsv(path: &Path, variant: CanonVariant) -> Result<LabelTable, TableLoadError> {
        let text = fs::read_to_string(path)?;
        let mut by_label = BTreeMap::new();
        let mut by_surrogate = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let (surface, surrogate) = line
                .split_once('\t')
                .ok_or(CanonError::MalformedTable { line: line_no })?;
            let label = OntologyLabel::parse_surface(surface)
                .ok_or(CanonError::MalformedTable { line: line_no })?;
            if by_surrogate
                .insert(surrogate.to_string(), label.clone())
                .is_some()
                || by_label.insert(label, surrogate.to_string()).is_some()
            {
                return Err(CanonError::MalformedTable { line: line_no }.into());
            }
        }
        Ok(LabelTable {
            variant,
            by_label,
            by_surrogate,
        })
    }
}

/// Label-table file errors: I/O or content.
#[derive(Debug, thiserror::Error)]
pub enum TableLoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Canon(#[from] CanonError),
}

fn surrogate_for(label: &OntologyLabel, scheme: &CanonScheme, index: usize) -> String {
    match scheme.variant {
        CanonVariant::InVocab => {
            let prefix = match label.namespace {
                Namespace::Intent => "in",
                Namespace::Slot => "sl",
            };
            format!("{prefix}{index}")
        }
        // OutOfVocab keeps the label surface, optionally shortened.
        _ => {
            if scheme.shorten_labels {
                label.name.to_lowercase()
            } else {
                label.surface()
            }
        }
    }
}

/// Builds the surrogate table for a label set under a scheme.
///
/// In-vocab surrogates are `in0, in1, ...` / `sl0, sl1, ...` assigned in
/// lexicographic label order per namespace. Out-of-vocab surrogates are the
/// label surfaces themselves (shortened when requested). Collisions caused
/// by shortening are hard errors, never silently disambiguated.
pub fn build_label_table(
    labels: &BTreeSet<OntologyLabel>,
    scheme: &CanonScheme,
) -> Result<LabelTable, CanonError> {
    if labels.is_empty() {
        return Err(CanonError::EmptyLabelSet);
    }
    let mut by_label = BTreeMap::new();
    let mut by_surrogate: BTreeMap<String, OntologyLabel> = BTreeMap::new();
    let mut intent_idx = 0usize;
    let mut slot_idx = 0usize;
    for label in labels {
        let index = match label.namespace {
            Namespace::Intent => {
                intent_idx += 1;
                intent_idx - 1
            }
            Namespace::Slot => {
                slot_idx += 1;
                slot_idx - 1
            }
        };
        let surrogate = surrogate_for(label, scheme, index);
        if let Some(first) = by_surrogate.get(&surrogate) {
            return Err(CanonError::DuplicateSurrogate {
                surrogate,
                first: first.clone(),
                second: label.clone(),
            });
        }
        by_surrogate.insert(surrogate.clone(), label.clone());
        by_label.insert(label.clone(), surrogate);
    }
    Ok(LabelTable {
        variant: scheme.variant,
        by_label,
        by_surrogate,
    })
}

fn simplify_node(node: &Node, under_intent: bool) -> Option<Node> {
    match node {
        Node::Token(text) => {
            if under_intent {
                None
            } else {
                Some(Node::Token(text.clone()))
            }
        }
        Node::Intent { label, children } => Some(Node::Intent {
            label: label.clone(),
            children: children
                .iter()
                .filter_map(|c| simplify_node(c, true))
                .collect(),
        }),
        Node::Slot { label, children } => Some(Node::Slot {
            label: label.clone(),
            children: children
                .iter()
                .filter_map(|c| simplify_node(c, false))
                .collect(),
        }),
    }
}

/// Removes every utterance token sitting directly under an intent node; slot
/// values are retained. Idempotent.
pub fn simplify(tree: &ParseTree) -> ParseTree {
    let root = simplify_node(tree.root(), false).expect("root is never a token");
    ParseTree::from_root_unchecked(root)
}

fn write_substituted(node: &Node, table: &LabelTable, out: &mut String) -> Result<(), CanonError> {
    match node {
        Node::Intent { label, children } | Node::Slot { label, children } => {
            let surrogate = table
                .surrogate_of(label)
                .ok_or_else(|| CanonError::UnknownLabel(label.clone()))?;
            out.push('[');
            out.push_str(surrogate);
            for child in children {
                out.push(' ');
                write_substituted(child, table, out)?;
            }
            out.push_str(" ]");
            Ok(())
        }
        Node::Token(text) => {
            out.push_str(text);
            Ok(())
        }
    }
}

/// Renders a tree as a target string under a scheme.
///
/// `None` is the plain serialization; `Simplify` serializes the simplified
/// tree; the label schemes substitute surrogates (after simplification when
/// composed). Every label in the tree must appear in the table when the
/// scheme substitutes.
pub fn apply_scheme(
    tree: &ParseTree,
    scheme: &CanonScheme,
    table: Option<&LabelTable>,
) -> Result<String, CanonError> {
    let simplified;
    let tree = if scheme.applies_simplify() {
        simplified = simplify(tree);
        &simplified
    } else {
        tree
    };
    if !scheme.substitutes_labels() {
        return Ok(tree.serialize());
    }
    let table = table.ok_or(CanonError::MissingTable)?;
    let mut out = String::new();
    write_substituted(tree.root(), table, &mut out)?;
    Ok(out)
}

/// Maps a target string back into a [`ParseTree`] in meaning space.
///
/// For label-substituting schemes every label position is looked up in the
/// inverse table before parsing. Both the fused spelling `[sl0` and the
/// split spelling `[ sl0` are accepted (token-level decoding separates
/// brackets from atomic label tokens). Simplification is lossy: the
/// simplified tree is returned.
pub fn decanonicalize(
    text: &str,
    scheme: &CanonScheme,
    table: Option<&LabelTable>,
) -> Result<ParseTree, CanonError> {
    if !scheme.substitutes_labels() {
        return parse_substituted(text, None);
    }
    let table = table.ok_or(CanonError::MissingTable)?;
    parse_substituted(text, Some(table))
}

fn parse_substituted(text: &str, table: Option<&LabelTable>) -> Result<ParseTree, CanonError> {
    let Some(table) = table else {
        return crate::tree::parse_top(text).map_err(CanonError::from);
    };
    let mut rebuilt = String::new();
    let mut tokens = text.split_whitespace().peekable();
    while let Some(tok) = tokens.next() {
        if !rebuilt.is_empty() {
            rebuilt.push(' ');
        }
        let surrogate = if tok == "[" {
            match tokens.peek() {
                // Split spelling: the label token follows the bare bracket.
                Some(&next) if next != "]" && next != "[" => {
                    tokens.next();
                    Some(next)
                }
                _ => None,
            }
        } else {
            tok.strip_prefix('[').filter(|rest| !rest.is_empty())
        };
        match surrogate {
            Some(surrogate) => {
                let label = table
                    .label_of(surrogate)
                    .ok_or_else(|| CanonError::UnknownSurrogate(surrogate.to_string()))?;
                rebuilt.push('[');
                rebuilt.push_str(&label.surface());
            }
            None => rebuilt.push_str(tok),
        }
    }
    Ok(crate::tree::parse_top(&rebuilt)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_top;

    fn scheme(variant: CanonVariant) -> CanonScheme {
        CanonScheme::new(variant)
    }

    fn weather_labels() -> BTreeSet<OntologyLabel> {
        [
            OntologyLabel::intent("GET_WEATHER"),
            OntologyLabel::intent("GET_SUNSET"),
            OntologyLabel::slot("LOCATION"),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn simplify_drops_intent_level_tokens() {
        let tree = parse_top("[IN:GET_WEATHER whats the weather [SL:LOCATION boston ] ]").unwrap();
        assert_eq!(
            simplify(&tree).serialize(),
            "[IN:GET_WEATHER [SL:LOCATION boston ] ]"
        );
    }

    #[test]
    fn simplify_is_fixed_point_without_intent_tokens() {
        let tree = parse_top("[IN:A [SL:B y ] ]").unwrap();
        assert_eq!(simplify(&tree), tree);
    }

    #[test]
    fn simplify_applies_at_every_intent_level() {
        let tree = parse_top("[IN:A x [SL:B y [IN:C z ] ] ]").unwrap();
        assert_eq!(simplify(&tree).serialize(), "[IN:A [SL:B y [IN:C ] ] ]");
    }

    #[test]
    fn simplify_is_idempotent() {
        let tree = parse_top("[IN:A x [SL:B y [IN:C z ] ] ]").unwrap();
        assert_eq!(simplify(&simplify(&tree)), simplify(&tree));
    }

    #[test]
    fn invocab_surrogates_follow_lexicographic_order() {
        let table = build_label_table(&weather_labels(), &scheme(CanonVariant::InVocab)).unwrap();
        assert_eq!(
            table.surrogate_of(&OntologyLabel::intent("GET_SUNSET")),
            Some("in0")
        );
        assert_eq!(
            table.surrogate_of(&OntologyLabel::intent("GET_WEATHER")),
            Some("in1")
        );
        assert_eq!(
            table.surrogate_of(&OntologyLabel::slot("LOCATION")),
            Some("sl0")
        );
    }

    #[test]
    fn oov_surrogate_is_the_label_surface() {
        let labels = [OntologyLabel::intent("GET_WEATHER")].into_iter().collect();
        let table = build_label_table(&labels, &scheme(CanonVariant::OutOfVocab)).unwrap();
        assert_eq!(
            table.surrogate_of(&OntologyLabel::intent("GET_WEATHER")),
            Some("IN:GET_WEATHER")
        );
        assert_eq!(table.atomic_surfaces(), vec!["IN:GET_WEATHER".to_string()]);
    }

    #[test]
    fn shortening_collision_is_reported() {
        let labels: BTreeSet<_> = [OntologyLabel::intent("A"), OntologyLabel::slot("A")]
            .into_iter()
            .collect();
        let mut s = scheme(CanonVariant::OutOfVocab);
        s.shorten_labels = true;
        let err = build_label_table(&labels, &s).unwrap_err();
        assert!(
            matches!(err, CanonError::DuplicateSurrogate { ref surrogate, .. } if surrogate == "a")
        );
    }

    #[test]
    fn empty_label_set_is_rejected() {
        let err = build_label_table(&BTreeSet::new(), &scheme(CanonVariant::InVocab)).unwrap_err();
        assert_eq!(err, CanonError::EmptyLabelSet);
    }

    #[test]
    fn scheme_none_is_plain_serialization() {
        let tree = parse_top("[IN:GET_WEATHER whats the weather [SL:LOCATION boston ] ]").unwrap();
        assert_eq!(
            apply_scheme(&tree, &scheme(CanonVariant::None), None).unwrap(),
            tree.serialize()
        );
    }

    #[test]
    fn invocab_substitutes_surrogates() {
        let tree = parse_top("[IN:GET_WEATHER [SL:LOCATION boston ] ]").unwrap();
        let table = build_label_table(&weather_labels(), &scheme(CanonVariant::InVocab)).unwrap();
        assert_eq!(
            apply_scheme(&tree, &scheme(CanonVariant::InVocab), Some(&table)).unwrap(),
            "[in1 [sl0 boston ] ]"
        );
    }

    #[test]
    fn missing_label_is_an_error() {
        let tree = parse_top("[IN:UNSEEN x ]").unwrap();
        let table = build_label_table(&weather_labels(), &scheme(CanonVariant::InVocab)).unwrap();
        let err = apply_scheme(&tree, &scheme(CanonVariant::InVocab), Some(&table)).unwrap_err();
        assert_eq!(
            err,
            CanonError::UnknownLabel(OntologyLabel::intent("UNSEEN"))
        );
    }

    #[test]
    fn decanonicalize_inverts_invocab() {
        let table = build_label_table(&weather_labels(), &scheme(CanonVariant::InVocab)).unwrap();
        let tree = decanonicalize(
            "[in1 [sl0 boston ] ]",
            &scheme(CanonVariant::InVocab),
            Some(&table),
        )
        .unwrap();
        assert_eq!(tree.serialize(), "[IN:GET_WEATHER [SL:LOCATION boston ] ]");
    }

    #[test]
    fn decanonicalize_accepts_split_brackets() {
        let table =
            build_label_table(&weather_labels(), &scheme(CanonVariant::OutOfVocab)).unwrap();
        let tree = decanonicalize(
            "[ IN:GET_WEATHER [ SL:LOCATION boston ] ]",
            &scheme(CanonVariant::OutOfVocab),
            Some(&table),
        )
        .unwrap();
        assert_eq!(tree.serialize(), "[IN:GET_WEATHER [SL:LOCATION boston ] ]");
    }

    #[test]
    fn unknown_surrogate_is_reported() {
        let table = build_label_table(&weather_labels(), &scheme(CanonVariant::InVocab)).unwrap();
        let err =
            decanonicalize("[in9 x ]", &scheme(CanonVariant::InVocab), Some(&table)).unwrap_err();
        assert_eq!(err, CanonError::UnknownSurrogate("in9".to_string()));
    }

    #[test]
    fn composed_scheme_simplifies_then_substitutes() {
        let tree = parse_top("[IN:GET_WEATHER whats the weather [SL:LOCATION boston ] ]").unwrap();
        let mut s = scheme(CanonVariant::InVocab);
        s.compose_simplify = true;
        let table = build_label_table(&weather_labels(), &s).unwrap();
        assert_eq!(
            apply_scheme(&tree, &s, Some(&table)).unwrap(),
            "[in1 [sl0 boston ] ]"
        );
    }

    #[test]
    fn table_tsv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.tsv");
        let table = build_label_table(&weather_labels(), &scheme(CanonVariant::InVocab)).unwrap();
        table.save_tsv(&path).unwrap();
        let loaded = LabelTable::load_tsv(&path, CanonVariant::InVocab).unwrap();
        assert_eq!(loaded, table);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "IN:GET_SUNSET\tin0\nIN:GET_WEATHER\tin1\nSL:LOCATION\tsl0\n"
        );
    }

    #[test]
    fn scheme_strings_round_trip() {
        for s in [
            "none",
            "simplify",
            "oov",
            "invocab",
            "oov+shorten",
            "invocab+simplify+shorten",
        ] {
            let parsed: CanonScheme = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert!("bogus".parse::<CanonScheme>().is_err());
    }
}
