//! Whitespace-word vocabulary with reserved ids and atomic-token support.
//!
//! Ids 0..3 are reserved (`<pad>`, `<bos>`, `<eos>`, `<unk>`); words are added
//! in first-seen corpus order after them. Unknown words encode to `<unk>` and
//! are never decomposed. Surfaces registered as *atomic tokens* (one id each,
//! added after construction) are matched as whole substrings before
//! whitespace splitting, so a label like `IN:GET_WEATHER` stays one token
//! even when fused to a bracket.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Token id into a [`Vocabulary`]. Dense, starting at 0.
pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

enum Segment<'a> {
    Atomic(TokenId),
    Word(&'a str),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("surface `{0}` is already in the vocabulary")]
    DuplicateSurface(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("malformed vocabulary file at line {line}")]
    MalformedFile { line: usize },
}

/// Append-only token vocabulary. Reads are cheap; registration of atomic
/// tokens must be serialized by the owner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    ids: HashMap<String, TokenId>,
    /// Atomic ids in registration order.
    atomic: Vec<TokenId>,
    /// Atomic surfaces sorted longest-first for greedy matching.
    atomic_match_order: Vec<(String, TokenId)>,
}

impl Vocabulary {
    fn with_reserved() -> Vocabulary {
        let mut vocab = Vocabulary {
            surfaces: Vec::new(),
            ids: HashMap::new(),
            atomic: Vec::new(),
            atomic_match_order: Vec::new(),
        };
        for surface in RESERVED {
            vocab.push_surface(surface.to_string());
        }
        vocab
    }

    fn push_surface(&mut self, surface: String) -> TokenId {
        let id = self.surfaces.len() as TokenId;
        self.ids.insert(surface.clone(), id);
        self.surfaces.push(surface);
        id
    }

    /// Builds a vocabulary from whitespace words of a corpus, in first-seen
    /// order after the four reserved ids.
    pub fn build<I, S>(corpus: I) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::with_reserved();
        for text in corpus {
            for word in text.as_ref().split_whitespace() {
                if !vocab.ids.contains_key(word) {
                    vocab.push_surface(word.to_string());
                }
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved ids are always present
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.ids.get(surface).copied()
    }

    /// Ids of atomic tokens in registration order.
    pub fn atomic_ids(&self) -> &[TokenId] {
        &self.atomic
    }

    /// Registers a surface as a single atomic token and returns its fresh id.
    pub fn add_atomic_token(&mut self, surface: &str) -> Result<TokenId, VocabError> {
        if surface.is_empty() || self.ids.contains_key(surface) {
            return Err(VocabError::DuplicateSurface(surface.to_string()));
        }
        let id = self.push_surface(surface.to_string());
        self.atomic.push(id);
        self.atomic_match_order.push((surface.to_string(), id));
        // Longest first so overlapping surfaces resolve deterministically.
        self.atomic_match_order
            .sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(id)
    }

    fn atomic_match_at(&self, text: &str) -> Option<(TokenId, usize)> {
        for (surface, id) in &self.atomic_match_order {
            if text.starts_with(surface.as_str()) {
                return Some((*id, surface.len()));
            }
        }
        None
    }

    /// Splits text into atomic-token hits and ordinary whitespace words.
    /// Atomic surfaces win wherever they occur, before word splitting.
    fn segments<'a>(&self, text: &'a str) -> Vec<Segment<'a>> {
        let mut out = Vec::new();
        let flush = |segment: &'a str, out: &mut Vec<Segment<'a>>| {
            out.extend(segment.split_whitespace().map(Segment::Word));
        };
        if self.atomic_match_order.is_empty() {
            flush(text, &mut out);
            return out;
        }
        let mut segment_start = 0;
        let mut pos = 0;
        while pos < text.len() {
            if let Some((id, len)) = self.atomic_match_at(&text[pos..]) {
                flush(&text[segment_start..pos], &mut out);
                out.push(Segment::Atomic(id));
                pos += len;
                segment_start = pos;
            } else {
                pos += text[pos..].chars().next().map_or(1, char::len_utf8);
            }
        }
        flush(&text[segment_start..], &mut out);
        out
    }

    /// Encodes text to token ids. Atomic surfaces win over word splitting
    /// wherever they occur; everything else is whitespace-split and unknown
    /// words map to `<unk>`. No `<bos>`/`<eos>` framing is added.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.segments(text)
            .into_iter()
            .map(|seg| match seg {
                Segment::Atomic(id) => id,
                Segment::Word(word) => self.ids.get(word).copied().unwrap_or(UNK),
            })
            .collect()
    }

    /// Builds a vocabulary whose atomic tokens are registered first, then
    /// adds corpus words in first-seen order of the atomic-aware
    /// segmentation. A corpus word fused to an atomic surface (like the
    /// bracket in `[IN:GET_WEATHER`) contributes only its residue.
    pub fn build_with_atomics<I, S>(corpus: I, atomics: &[String]) -> Result<Vocabulary, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::with_reserved();
        for surface in atomics {
            vocab.add_atomic_token(surface)?;
        }
        for text in corpus {
            let words: Vec<String> = vocab
                .segments(text.as_ref())
                .into_iter()
                .filter_map(|seg| match seg {
                    Segment::Word(w) if !vocab.ids.contains_key(w) => Some(w.to_string()),
                    _ => None,
                })
                .collect();
            for word in words {
                if !vocab.ids.contains_key(&word) {
                    vocab.push_surface(word);
                }
            }
        }
        Ok(vocab)
    }

    /// Decodes ids back to text: surfaces joined by single spaces, reserved
    /// tokens dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            if id as usize >= self.surfaces.len() {
                return Err(VocabError::IdOutOfRange {
                    id,
                    size: self.surfaces.len(),
                });
            }
            if id >= RESERVED.len() as TokenId {
                parts.push(self.surfaces[id as usize].as_str());
            }
        }
        Ok(parts.join(" "))
    }

    fn sidecar(path: &Path) -> PathBuf {
        PathBuf::from(format!("{}.atomic", path.display()))
    }

    /// Writes one surface per line (line number = id). Atomic ids, when any,
    /// go to a `<path>.atomic` sidecar so reloads keep matching behaviour.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for surface in &self.surfaces {
            out.push_str(surface);
            out.push('\n');
        }
        fs::write(path, out)?;
        if !self.atomic.is_empty() {
            let mut out = String::new();
            for id in &self.atomic {
                out.push_str(&id.to_string());
                out.push('\n');
            }
            fs::write(Self::sidecar(path), out)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary, VocabLoadError> {
        let text = fs::read_to_string(path)?;
        let mut vocab = Vocabulary {
            surfaces: Vec::new(),
            ids: HashMap::new(),
            atomic: Vec::new(),
            atomic_match_order: Vec::new(),
        };
        for (idx, line) in text.lines().enumerate() {
            if idx < RESERVED.len() && line != RESERVED[idx] {
                return Err(VocabError::MalformedFile { line: idx + 1 }.into());
            }
            if line.is_empty() || vocab.ids.contains_key(line) {
                return Err(VocabError::MalformedFile { line: idx + 1 }.into());
            }
            vocab.push_surface(line.to_string());
        }
        if vocab.surfaces.len() < RESERVED.len() {
            return Err(VocabError::MalformedFile {
                line: vocab.surfaces.len() + 1,
            }
            .into());
        }
        let sidecar = Self::sidecar(path);
        if sidecar.exists() {
            let text = fs::read_to_string(&sidecar)?;
            for (idx, line) in text.lines().enumerate() {
                let id: TokenId = line
                    .parse()
                    .map_err(|_| VocabError::MalformedFile { line: idx + 1 })?;
                if id as usize >= vocab.surfaces.len() {
                    return Err(VocabError::MalformedFile { line: idx + 1 }.into());
                }
                vocab.atomic.push(id);
                vocab
                    .atomic_match_order
                    .push((vocab.surfaces[id as usize].clone(), id));
            }
            vocab
                .atomic_match_order
                .sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Ok(vocab)
    }
}

/// Vocabulary file errors: I/O or content.
#[derive(Debug, thiserror::Error)]
pub enum VocabLoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}
