//! Shared helpers for the integration tests: a seeded random tree
//! generator and a deterministic pseudo-random scorer.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semparse_core::beam::Scorer;
use semparse_core::tree::{Node, ParseTree};
use semparse_core::vocab::TokenId;

const WORDS: [&str; 12] = [
    "boston", "tomorrow", "rain", "alarm", "nine", "work", "gym", "call", "mom", "noon", "friday",
    "sunset",
];

fn random_word(rng: &mut ChaCha8Rng) -> Node {
    Node::token(WORDS[rng.random_range(0..WORDS.len())])
}

fn random_intent(rng: &mut ChaCha8Rng, depth: usize, intent_tokens: bool) -> Node {
    let label = format!("L{}", rng.random_range(0..8));
    let mut children = Vec::new();
    if intent_tokens {
        for _ in 0..rng.random_range(0..3) {
            children.push(random_word(rng));
        }
    }
    let n_slots = if depth >= 4 {
        rng.random_range(0..2)
    } else {
        rng.random_range(0..3)
    };
    for _ in 0..n_slots {
        children.push(random_slot(rng, depth + 1, intent_tokens));
    }
    // Avoid fully empty roots at depth 1 so trees stay interesting.
    if children.is_empty() && depth == 1 {
        children.push(random_slot(rng, depth + 1, intent_tokens));
    }
    Node::intent(&label, children)
}

fn random_slot(rng: &mut ChaCha8Rng, depth: usize, intent_tokens: bool) -> Node {
    let label = format!("S{}", rng.random_range(0..8));
    let mut children = Vec::new();
    if depth < 4 && rng.random_bool(0.25) {
        children.push(random_intent(rng, depth + 1, intent_tokens));
    } else {
        for _ in 0..rng.random_range(1..3) {
            children.push(random_word(rng));
        }
    }
    Node::slot(&label, children)
}

/// Random well-formed tree. With `intent_tokens` false, no utterance token
/// sits directly under an intent (simplified shape).
pub fn random_tree(rng: &mut ChaCha8Rng, intent_tokens: bool) -> ParseTree {
    ParseTree::new(random_intent(rng, 1, intent_tokens)).expect("generator emits valid trees")
}

pub fn tree_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic pseudo-random scorer: the distribution depends only on
/// (seed, source, prefix).
pub struct RandomScorer {
    pub vocab: usize,
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&self, source: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let bytes = self
            .seed
            .to_le_bytes()
            .into_iter()
            .chain(source.iter().flat_map(|t| t.to_le_bytes()))
            .chain([0xff])
            .chain(prefix.iter().flat_map(|t| t.to_le_bytes()));
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(bytes));
        let weights: Vec<f64> = (0..self.vocab)
            .map(|_| rng.random::<f64>() + 1e-3)
            .collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| (w / total).ln()).collect()
    }
}

/// Brute-force constrained oracle: scores every stored sequence exhaustively
/// (token steps plus the end transition) and returns the argmax under the
/// search's tie-break.
pub fn exhaustive_best(
    scorer: &impl Scorer,
    sequences: &[Vec<TokenId>],
    source: &[TokenId],
) -> (Vec<TokenId>, f64) {
    let eos = semparse_core::vocab::EOS as usize;
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for seq in sequences {
        let mut logprob = 0.0;
        for (i, &tok) in seq.iter().enumerate() {
            let lp = scorer.log_probs(source, &seq[..i]);
            logprob += lp[tok as usize];
        }
        logprob += scorer.log_probs(source, seq)[eos];
        let better = match &best {
            None => true,
            Some((best_seq, best_lp)) => {
                logprob > *best_lp || (logprob == *best_lp && seq < best_seq)
            }
        };
        if better {
            best = Some((seq.clone(), logprob));
        }
    }
    best.expect("non-empty sequence set")
}
