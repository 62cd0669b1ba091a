//! TOP-style bracketed meaning representations.
//!
//! A meaning representation is a nested tree of intent (`IN:`) and slot
//! (`SL:`) nodes over utterance tokens, written in the bracketed form
//! `[IN:GET_WEATHER whats the weather [SL:LOCATION boston ] ]`. Intents may
//! contain tokens and slots; slots may contain tokens and nested intents.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Namespace of an ontology label: intent or slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Namespace {
    Intent,
    Slot,
}

impl Namespace {
    pub fn prefix(self) -> &'static str {
        match self {
            Namespace::Intent => "IN:",
            Namespace::Slot => "SL:",
        }
    }
}

/// An intent or slot identifier from the domain schema, e.g. `IN:GET_WEATHER`.
///
/// The name is non-empty and contains no whitespace or brackets. Labels are
/// case-sensitive: they are identifiers, not natural text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OntologyLabel {
    pub namespace: Namespace,
    pub name: String,
}

impl OntologyLabel {
    pub fn intent(name: impl Into<String>) -> Self {
        OntologyLabel {
            namespace: Namespace::Intent,
            name: name.into(),
        }
    }

    pub fn slot(name: impl Into<String>) -> Self {
        OntologyLabel {
            namespace: Namespace::Slot,
            name: name.into(),
        }
    }

    /// Full surface form, namespace prefix included.
    pub fn surface(&self) -> String {
        format!("{}{}", self.namespace.prefix(), self.name)
    }

    /// Parses a surface form like `IN:GET_WEATHER`. Returns `None` when the
    /// prefix is missing, the name is empty, or the name contains whitespace
    /// or brackets.
    pub fn parse_surface(s: &str) -> Option<Self> {
        let (namespace, name) = s
            .strip_prefix("IN:")
            .map(|rest| (Namespace::Intent, rest))
            .or_else(|| s.strip_prefix("SL:").map(|rest| (Namespace::Slot, rest)))?;
        if name.is_empty()
            || name
                .chars()
                .any(|c| c.is_whitespace() || c == '[' || c == ']')
        {
            return None;
        }
        Some(OntologyLabel {
            namespace,
            name: name.to_string(),
        })
    }
}

impl fmt::Display for OntologyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.namespace.prefix(), self.name)
    }
}

/// One node of a meaning representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Node {
    /// Intent node; children are token leaves or slots.
    Intent {
        label: OntologyLabel,
        children: Vec<Node>,
    },
    /// Slot node; children are token leaves or nested intents.
    Slot {
        label: OntologyLabel,
        children: Vec<Node>,
    },
    /// An utterance token.
    Token(String),
}

impl Node {
    pub fn intent(name: &str, children: Vec<Node>) -> Node {
        Node::Intent {
            label: OntologyLabel::intent(name),
            children,
        }
    }

    pub fn slot(name: &str, children: Vec<Node>) -> Node {
        Node::Slot {
            label: OntologyLabel::slot(name),
            children,
        }
    }

    pub fn token(text: &str) -> Node {
        Node::Token(text.to_string())
    }

    fn write_top(&self, out: &mut String) {
        match self {
            Node::Intent { label, children } | Node::Slot { label, children } => {
                out.push('[');
                out.push_str(&label.surface());
                for child in children {
                    out.push(' ');
                    child.write_top(out);
                }
                out.push_str(" ]");
            }
            Node::Token(text) => out.push_str(text),
        }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Token(_) => 0,
            Node::Intent { children, .. } | Node::Slot { children, .. } => {
                1 + children.iter().map(Node::depth).max().unwrap_or(0)
            }
        }
    }

    fn node_count(&self) -> usize {
        match self {
            Node::Token(_) => 1,
            Node::Intent { children, .. } | Node::Slot { children, .. } => {
                1 + children.iter().map(Node::node_count).sum::<usize>()
            }
        }
    }

    fn collect_labels(&self, out: &mut BTreeSet<OntologyLabel>) {
        match self {
            Node::Intent { label, children } | Node::Slot { label, children } => {
                out.insert(label.clone());
                for child in children {
                    child.collect_labels(out);
                }
            }
            Node::Token(_) => {}
        }
    }

    fn check_structure(&self, under: Option<Namespace>) -> Result<(), TreeError> {
        match self {
            Node::Intent { label, children } => {
                if label.namespace != Namespace::Intent {
                    return Err(TreeError::LabelNamespaceMismatch(label.clone()));
                }
                if under == Some(Namespace::Intent) {
                    return Err(TreeError::IntentUnderIntent(label.clone()));
                }
                for child in children {
                    child.check_structure(Some(Namespace::Intent))?;
                }
                Ok(())
            }
            Node::Slot { label, children } => {
                if label.namespace != Namespace::Slot {
                    return Err(TreeError::LabelNamespaceMismatch(label.clone()));
                }
                if under != Some(Namespace::Intent) {
                    return Err(TreeError::SlotUnderSlot(label.clone()));
                }
                for child in children {
                    child.check_structure(Some(Namespace::Slot))?;
                }
                Ok(())
            }
            Node::Token(_) => Ok(()),
        }
    }
}

/// Structural violation raised when assembling a [`ParseTree`] by hand.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("root node is not an intent")]
    RootNotIntent,
    #[error("intent node nested directly under an intent: {0}")]
    IntentUnderIntent(OntologyLabel),
    #[error("slot node outside an intent: {0}")]
    SlotUnderSlot(OntologyLabel),
    #[error("node variant does not match label namespace: {0}")]
    LabelNamespaceMismatch(OntologyLabel),
}

/// A whole meaning representation. The root is always an intent, and
/// intent/slot nesting alternates. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParseTree {
    root: Node,
}

impl ParseTree {
    /// Builds a tree from a root node, enforcing the structural invariants.
    pub fn new(root: Node) -> Result<ParseTree, TreeError> {
        if !matches!(root, Node::Intent { .. }) {
            return Err(TreeError::RootNotIntent);
        }
        root.check_structure(None)?;
        Ok(ParseTree { root })
    }

    pub(crate) fn from_root_unchecked(root: Node) -> ParseTree {
        ParseTree { root }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Canonical single-space-separated bracketed form. Parsing the result
    /// gives back a structurally equal tree.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        self.root.write_top(&mut out);
        out
    }

    /// Maximum nesting count of intent/slot nodes along any root-to-leaf
    /// path; the root counts as 1.
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Total number of nodes, token leaves included.
    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// Deduplicated set of every intent and slot label in the tree, in
    /// sorted order.
    pub fn ontology_labels(&self) -> BTreeSet<OntologyLabel> {
        let mut out = BTreeSet::new();
        self.root.collect_labels(&mut out);
        out
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

impl FromStr for ParseTree {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_top(s)
    }
}

/// Parse failure; each variant carries the byte offset it was detected at.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("unbalanced brackets at offset {offset}")]
    UnbalancedBrackets { offset: usize },
    #[error("empty ontology label at offset {offset}")]
    EmptyLabel { offset: usize },
    #[error("malformed ontology label at offset {offset} (expected IN:/SL: prefix and a bracket-free name)")]
    InvalidLabel { offset: usize },
    #[error("root is not an intent at offset {offset}")]
    RootNotIntent { offset: usize },
    #[error("trailing content after the root node at offset {offset}")]
    TrailingContent { offset: usize },
    #[error("invalid nesting at offset {offset} (intents contain slots, slots contain intents)")]
    InvalidNesting { offset: usize },
}

impl ParseError {
    /// Byte offset the error was detected at.
    pub fn offset(&self) -> usize {
        match *self {
            ParseError::UnbalancedBrackets { offset }
            | ParseError::EmptyLabel { offset }
            | ParseError::InvalidLabel { offset }
            | ParseError::RootNotIntent { offset }
            | ParseError::TrailingContent { offset }
            | ParseError::InvalidNesting { offset } => offset,
        }
    }
}

/// Whitespace tokens with their byte offsets.
fn lex(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split_whitespace().map(move |tok| {
        // Safety of the pointer arithmetic: split_whitespace yields
        // subslices of `text`.
        let offset = tok.as_ptr() as usize - text.as_ptr() as usize;
        (offset, tok)
    })
}

struct OpenFrame {
    offset: usize,
    label: OntologyLabel,
    children: Vec<Node>,
}

/// Parses a bracketed TOP string into a [`ParseTree`].
///
/// Tokenization is whitespace-based: an opening bracket is fused with its
/// label (`[IN:GET_WEATHER`), a closing bracket stands alone, every other
/// token is an utterance token. Any input either parses or yields exactly
/// one [`ParseError`].
pub fn parse_top(text: &str) -> Result<ParseTree, ParseError> {
    let mut stack: Vec<OpenFrame> = Vec::new();
    let mut root: Option<Node> = None;

    for (offset, tok) in lex(text) {
        if root.is_some() {
            return Err(ParseError::TrailingContent { offset });
        }
        if tok == "]" {
            let frame = stack
                .pop()
                .ok_or(ParseError::UnbalancedBrackets { offset })?;
            let node = match frame.label.namespace {
                Namespace::Intent => Node::Intent {
                    label: frame.label,
                    children: frame.children,
                },
                Namespace::Slot => Node::Slot {
                    label: frame.label,
                    children: frame.children,
                },
            };
            match stack.last_mut() {
                Some(parent) => parent.children.push(node),
                None => root = Some(node),
            }
        } else if let Some(rest) = tok.strip_prefix('[') {
            if rest.is_empty() {
                return Err(ParseError::EmptyLabel { offset });
            }
            let label = match OntologyLabel::parse_surface(rest) {
                Some(label) => label,
                None => {
                    // Distinguish a missing name from a malformed one.
                    if rest == "IN:" || rest == "SL:" {
                        return Err(ParseError::EmptyLabel { offset });
                    }
                    return Err(ParseError::InvalidLabel { offset });
                }
            };
            match (stack.last(), label.namespace) {
                (None, Namespace::Intent) => {}
                (None, Namespace::Slot) => return Err(ParseError::RootNotIntent { offset }),
                (Some(parent), ns) if parent.label.namespace == ns => {
                    return Err(ParseError::InvalidNesting { offset })
                }
                _ => {}
            }
            stack.push(OpenFrame {
                offset,
                label,
                children: Vec::new(),
            });
        } else {
            match stack.last_mut() {
                Some(parent) => parent.children.push(Node::Token(tok.to_string())),
                None => return Err(ParseError::RootNotIntent { offset }),
            }
        }
    }

    if let Some(frame) = stack.last() {
        return Err(ParseError::UnbalancedBrackets {
            offset: frame.offset,
        });
    }
    match root {
        Some(node) => Ok(ParseTree::from_root_unchecked(node)),
        None => Err(ParseError::RootNotIntent { offset: 0 }),
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
