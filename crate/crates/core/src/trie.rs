//! Prefix tree over token-id sequences of valid decoding targets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrieError {
    #[error("cannot insert an empty sequence")]
    EmptySequence,
    #[error("malformed trie file at line {line}")]
    MalformedFile { line: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct TrieNode {
    children: BTreeMap<TokenId, TrieNode>,
    terminal: bool,
}

/// Prefix tree containing a finite set of token-id sequences. Immutable in
/// normal use after building; lookups are O(sequence length).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trie {
    root: TrieNode,
    len: usize,
    max_seq_len: usize,
}

impl Trie {
    pub fn new() -> Trie {
        Trie::default()
    }

    /// Builds a trie containing exactly the given sequences; duplicates
    /// collapse.
    pub fn build<S: AsRef<[TokenId]>>(sequences: &[S]) -> Result<Trie, TrieError> {
        let mut trie = Trie::new();
        for seq in sequences {
            trie.insert(seq.as_ref())?;
        }
        Ok(trie)
    }

    pub fn insert(&mut self, seq: &[TokenId]) -> Result<(), TrieError> {
        if seq.is_empty() {
            return Err(TrieError::EmptySequence);
        }
        let mut node = &mut self.root;
        for &tok in seq {
            node = node.children.entry(tok).or_default();
        }
        if !node.terminal {
            node.terminal = true;
            self.len += 1;
            self.max_seq_len = self.max_seq_len.max(seq.len());
        }
        Ok(())
    }

    /// Number of stored sequences.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Length of the longest stored sequence.
    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    fn node_at(&self, prefix: &[TokenId]) -> Option<&TrieNode> {
        let mut node = &self.root;
        for tok in prefix {
            node = node.children.get(tok)?;
        }
        Some(node)
    }

    pub fn contains(&self, seq: &[TokenId]) -> bool {
        self.node_at(seq).is_some_and(|n| n.terminal)
    }

    /// Valid single-token continuations of a prefix (sorted by id) and
    /// whether the prefix may end here. Unknown prefixes yield `(∅, false)`.
    pub fn continuations(&self, prefix: &[TokenId]) -> (Vec<TokenId>, bool) {
        match self.node_at(prefix) {
            Some(node) => (node.children.keys().copied().collect(), node.terminal),
            None => (Vec::new(), false),
        }
    }

    /// All stored sequences in lexicographic token-id order.
    pub fn sequences(&self) -> Vec<Vec<TokenId>> {
        let mut out = Vec::with_capacity(self.len);
        let mut prefix = Vec::new();
        collect(&self.root, &mut prefix, &mut out);
        return out;

        fn collect(node: &TrieNode, prefix: &mut Vec<TokenId>, out: &mut Vec<Vec<TokenId>>) {
            if node.terminal {
                out.push(prefix.clone());
            }
            for (&tok, child) in &node.children {
                prefix.push(tok);
                collect(child, prefix, out);
                prefix.pop();
            }
        }
    }

    /// Writes one stored sequence per line as space-separated token ids, in
    /// lexicographic order.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for seq in self.sequences() {
            let line: Vec<String> = seq.iter().map(TokenId::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        fs::write(path, out)
    }

    pub fn load(path: &Path) -> Result<Trie, TrieLoadError> {
        let text = fs::read_to_string(path)?;
        let mut trie = Trie::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let seq: Result<Vec<TokenId>, _> = line.split_whitespace().map(str::parse).collect();
            let seq = seq.map_err(|_| TrieError::MalformedFile { line: line_no })?;
            trie.insert(&seq)
                .map_err(|_| TrieError::MalformedFile { line: line_no })?;
        }
        Ok(trie)
    }
}

/// Trie file errors: I/O or content.
#[derive(Debug, thiserror::Error)]
pub enum TrieLoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Trie(#[from] TrieError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuations_and_termination() {
        let trie = Trie::build(&[vec![4, 5], vec![4, 6]]).unwrap();
        assert_eq!(trie.continuations(&[4]), (vec![5, 6], false));
        assert_eq!(trie.continuations(&[4, 5]), (vec![], true));
        assert_eq!(trie.continuations(&[9]), (vec![], false));
        assert_eq!(trie.len(), 2);
    }

    #[test]
    fn duplicates_collapse() {
        let trie = Trie::build(&[vec![4, 5], vec![4, 5]]).unwrap();
        assert_eq!(trie.len(), 1);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert_eq!(
            Trie::build(&[Vec::<TokenId>::new()]).unwrap_err(),
            TrieError::EmptySequence
        );
    }

    #[test]
    fn prefixes_are_not_members_unless_inserted() {
        let mut trie = Trie::build(&[vec![1, 2, 3]]).unwrap();
        assert!(!trie.contains(&[1, 2]));
        trie.insert(&[1, 2]).unwrap();
        assert!(trie.contains(&[1, 2]));
        assert_eq!(trie.len(), 2);
        assert_eq!(trie.continuations(&[1, 2]), (vec![3], true));
    }

    #[test]
    fn membership_agrees_with_hash_set_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut stored = std::collections::HashSet::new();
        let mut seqs = Vec::new();
        for _ in 0..500 {
            let len = rng.random_range(1..=6);
            let seq: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..8)).collect();
            stored.insert(seq.clone());
            seqs.push(seq);
        }
        let trie = Trie::build(&seqs).unwrap();
        assert_eq!(trie.len(), stored.len());
        for _ in 0..10_000 {
            let len = rng.random_range(1..=6);
            let probe: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..8)).collect();
            assert_eq!(trie.contains(&probe), stored.contains(&probe));
        }
    }

    #[test]
    fn continuations_agree_with_filter_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let seqs: Vec<Vec<TokenId>> = (0..60)
            .map(|_| {
                let len = rng.random_range(1..=5);
                (0..len).map(|_| rng.random_range(0..6)).collect()
            })
            .collect();
        let trie = Trie::build(&seqs).unwrap();
        for _ in 0..200 {
            let len = rng.random_range(0..=4);
            let prefix: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..6)).collect();
            let mut expected: Vec<TokenId> = seqs
                .iter()
                .filter(|s| s.len() > prefix.len() && s.starts_with(&prefix))
                .map(|s| s[prefix.len()])
                .collect();
            expected.sort_unstable();
            expected.dedup();
            let may_end = seqs.iter().any(|s| s[..] == prefix[..]);
            assert_eq!(trie.continuations(&prefix), (expected, may_end));
        }
    }

    #[test]
    fn save_load_rebuild_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trie.txt");
        let trie = Trie::build(&[vec![4, 5], vec![4, 6], vec![9]]).unwrap();
        trie.save(&path).unwrap();
        let loaded = Trie::load(&path).unwrap();
        assert_eq!(loaded, trie);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "4 5\n4 6\n9\n");
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trie.txt");
        std::fs::write(&path, "4 x\n").unwrap();
        assert!(matches!(
            Trie::load(&path),
            Err(TrieLoadError::Trie(TrieError::MalformedFile { line: 1 }))
        ));
    }
}
