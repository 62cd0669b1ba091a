//! Beam search over next-token scorers, optionally constrained by a prefix
//! tree of valid targets.
//!
//! In constrained mode every candidate token is looked up in the trie:
//! scores outside the valid continuations are treated as masked to −∞ (the
//! candidates are simply never created), and a beam may take the end
//! transition only at a terminal trie node. Ranking is by raw log
//! probability, ties broken by lexicographic token-id order, so identical
//! inputs give identical ranked outputs.

use crate::trie::Trie;
use crate::vocab::{TokenId, EOS};

/// Next-token distribution source for beam search.
///
/// Implementations must be deterministic for fixed inputs and return one
/// finite-or-−∞ log probability per vocabulary entry, summing to 1 in
/// probability space.
pub trait Scorer {
    fn vocab_size(&self) -> usize;

    /// Log probabilities over the vocabulary for the next target token,
    /// given the source sequence and the decoded target prefix.
    fn log_probs(&self, source: &[TokenId], prefix: &[TokenId]) -> Vec<f64>;
}

/// One beam hypothesis.
#[derive(Debug, Clone)]
pub struct Beam {
    pub prefix: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("no valid decoding path (all beams pruned)")]
    NoValidPath,
    #[error("beam width must be at least 1")]
    ZeroBeamWidth,
    #[error("constrained decoding requires a non-empty trie")]
    EmptyTrie,
}

fn rank(candidates: &mut [Beam]) {
    candidates.sort_by(|a, b| {
        b.logprob
            .total_cmp(&a.logprob)
            .then_with(|| a.prefix.cmp(&b.prefix))
    });
}

fn finished_results(beams: Vec<Beam>) -> Vec<(Vec<TokenId>, f64)> {
    beams
        .into_iter()
        .filter(|b| b.finished)
        .map(|b| (b.prefix, b.logprob))
        .collect()
}

/// Beam search restricted to sequences stored in `trie`.
///
/// Returns up to `beam_width` finished beams, best first. Every returned
/// sequence is a member of the trie; its log probability includes the end
/// transition (the scorer's `<eos>` entry at the terminal node).
pub fn constrained_beam_search<S: Scorer>(
    scorer: &S,
    trie: &Trie,
    source: &[TokenId],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<(Vec<TokenId>, f64)>, DecodeError> {
    if beam_width == 0 {
        return Err(DecodeError::ZeroBeamWidth);
    }
    if trie.is_empty() {
        return Err(DecodeError::EmptyTrie);
    }
    let mut beams = vec![Beam {
        prefix: Vec::new(),
        logprob: 0.0,
        finished: false,
    }];
    // Each round either extends an open beam or retires it, so the trie
    // depth bounds the number of rounds.
    for _ in 0..=max_len {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut candidates = Vec::new();
        for beam in &beams {
            if beam.finished {
                candidates.push(beam.clone());
                continue;
            }
            let (continuations, may_end) = trie.continuations(&beam.prefix);
            let log_probs = scorer.log_probs(source, &beam.prefix);
            debug_assert_eq!(log_probs.len(), scorer.vocab_size());
            if may_end {
                candidates.push(Beam {
                    prefix: beam.prefix.clone(),
                    logprob: beam.logprob + log_probs[EOS as usize],
                    finished: true,
                });
            }
            if beam.prefix.len() < max_len {
                for tok in continuations {
                    let mut prefix = beam.prefix.clone();
                    prefix.push(tok);
                    candidates.push(Beam {
                        prefix,
                        logprob: beam.logprob + log_probs[tok as usize],
                        finished: false,
                    });
                }
            }
        }
        if candidates.is_empty() {
            break;
        }
        rank(&mut candidates);
        candidates.truncate(beam_width);
        beams = candidates;
    }
    let results = finished_results(beams);
    if results.is_empty() {
        return Err(DecodeError::NoValidPath);
    }
    Ok(results)
}

/// Standard beam search over the full vocabulary; `<eos>` terminates.
///
/// A beam reaching `max_len` is closed with the end transition, so every
/// returned log probability is the sum of its token scores plus one final
/// `<eos>` score. Same ranking and tie-break contract as the constrained
/// search; `beam_width == 1` is greedy decoding.
pub fn unconstrained_beam_search<S: Scorer>(
    scorer: &S,
    source: &[TokenId],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<(Vec<TokenId>, f64)>, DecodeError> {
    if beam_width == 0 {
        return Err(DecodeError::ZeroBeamWidth);
    }
    let vocab_size = scorer.vocab_size();
    let mut beams = vec![Beam {
        prefix: Vec::new(),
        logprob: 0.0,
        finished: false,
    }];
    for _ in 0..=max_len {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let mut candidates = Vec::new();
        for beam in &beams {
            if beam.finished {
                candidates.push(beam.clone());
                continue;
            }
            let log_probs = scorer.log_probs(source, &beam.prefix);
            debug_assert_eq!(log_probs.len(), vocab_size);
            candidates.push(Beam {
                prefix: beam.prefix.clone(),
                logprob: beam.logprob + log_probs[EOS as usize],
                finished: true,
            });
            if beam.prefix.len() < max_len {
                for tok in 0..vocab_size as TokenId {
                    if tok == EOS {
                        continue;
                    }
                    let mut prefix = beam.prefix.clone();
                    prefix.push(tok);
                    candidates.push(Beam {
                        prefix,
                        logprob: beam.logprob + log_probs[tok as usize],
                        finished: false,
                    });
                }
            }
        }
        rank(&mut candidates);
        candidates.truncate(beam_width);
        beams = candidates;
    }
    let results = finished_results(beams);
    if results.is_empty() {
        return Err(DecodeError::NoValidPath);
    }
    Ok(results)
}
