//! Brute-force oracles for the beam searches.

mod common;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{exhaustive_best, RandomScorer};
use semparse_core::beam::{constrained_beam_search, unconstrained_beam_search, Scorer};
use semparse_core::trie::Trie;
use semparse_core::vocab::{TokenId, EOS};

fn random_sequences(
    rng: &mut ChaCha8Rng,
    n: usize,
    vocab: usize,
    max_len: usize,
) -> Vec<Vec<TokenId>> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len)
                .map(|_| rng.random_range(0..vocab as TokenId))
                .collect()
        })
        .collect()
}

#[test]
fn constrained_top1_matches_exhaustive_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..50 {
        let vocab = rng.random_range(6..20);
        let n: usize = rng.random_range(2..=30);
        let sequences = random_sequences(&mut rng, n, vocab, 6);
        let trie = Trie::build(&sequences).unwrap();
        let scorer = RandomScorer { vocab, seed: case };
        let source = vec![1, 2];
        let results =
            constrained_beam_search(&scorer, &trie, &source, trie.len(), trie.max_seq_len())
                .unwrap();
        let (best_seq, best_lp) = exhaustive_best(&scorer, &trie.sequences(), &source);
        assert_eq!(results[0].0, best_seq, "case {case}");
        assert!((results[0].1 - best_lp).abs() < 1e-9, "case {case}");
    }
}

#[test]
fn constrained_outputs_stay_in_the_trie_under_random_scorers() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for case in 0..200 {
        let vocab = rng.random_range(5..30);
        let n: usize = rng.random_range(2..40);
        let sequences = random_sequences(&mut rng, n, vocab, 7);
        let trie = Trie::build(&sequences).unwrap();
        let scorer = RandomScorer {
            vocab,
            seed: 10_000 + case,
        };
        let results = constrained_beam_search(&scorer, &trie, &[], 10, trie.max_seq_len()).unwrap();
        assert!(!results.is_empty());
        for (seq, lp) in results {
            assert!(trie.contains(&seq));
            assert!(lp <= 0.0);
        }
    }
}

#[test]
fn constrained_never_beats_unconstrained() {
    // Monotone masking: with exhaustive beams, the constrained best cannot
    // score above the unconstrained best for the same scorer.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for case in 0..30 {
        let vocab = rng.random_range(4..7);
        let n: usize = rng.random_range(2..=10);
        let sequences = random_sequences(&mut rng, n, vocab, 3);
        let trie = Trie::build(&sequences).unwrap();
        let scorer = RandomScorer {
            vocab,
            seed: 500 + case,
        };
        let max_len = trie.max_seq_len();
        let beams = vocab.pow(max_len as u32) + 8;
        let constrained = constrained_beam_search(&scorer, &trie, &[], beams, max_len).unwrap();
        let unconstrained = unconstrained_beam_search(&scorer, &[], beams, max_len).unwrap();
        assert!(
            constrained[0].1 <= unconstrained[0].1 + 1e-12,
            "case {case}: {} > {}",
            constrained[0].1,
            unconstrained[0].1
        );
    }
}

#[test]
fn unconstrained_with_exhaustive_beams_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for case in 0..12 {
        let vocab = rng.random_range(4..=6);
        let max_len = 3usize;
        let scorer = RandomScorer {
            vocab,
            seed: 900 + case,
        };
        // Enumerate every token sequence up to max_len over the non-eos
        // vocabulary, each closed with the end transition.
        let mut all: Vec<Vec<TokenId>> = vec![vec![]];
        let mut frontier: Vec<Vec<TokenId>> = vec![vec![]];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for prefix in &frontier {
                for tok in 0..vocab as TokenId {
                    if tok == EOS {
                        continue;
                    }
                    let mut seq = prefix.clone();
                    seq.push(tok);
                    next.push(seq);
                }
            }
            all.extend(next.iter().cloned());
            frontier = next;
        }
        let (best_seq, best_lp) = exhaustive_best(&scorer, &all, &[]);
        let beams = all.len() + 1;
        let results = unconstrained_beam_search(&scorer, &[], beams, max_len).unwrap();
        assert_eq!(results[0].0, best_seq, "case {case}");
        assert!((results[0].1 - best_lp).abs() < 1e-9);
    }
}

#[test]
fn ranked_output_is_sorted_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let sequences = random_sequences(&mut rng, 25, 12, 5);
    let trie = Trie::build(&sequences).unwrap();
    let scorer = RandomScorer {
        vocab: 12,
        seed: 77,
    };
    let a = constrained_beam_search(&scorer, &trie, &[4], 8, trie.max_seq_len()).unwrap();
    let b = constrained_beam_search(&scorer, &trie, &[4], 8, trie.max_seq_len()).unwrap();
    assert_eq!(a, b);
    for pair in a.windows(2) {
        assert!(
            pair[0].1 > pair[1].1 || (pair[0].1 == pair[1].1 && pair[0].0 < pair[1].0),
            "ranking contract violated"
        );
    }
}

#[test]
fn scorer_normalization_contract_holds_for_the_test_scorer() {
    let scorer = RandomScorer { vocab: 23, seed: 5 };
    let lp = scorer.log_probs(&[1, 2, 3], &[4, 5]);
    let total: f64 = lp.iter().map(|x| x.exp()).sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert_eq!(lp, scorer.log_probs(&[1, 2, 3], &[4, 5]));
}
