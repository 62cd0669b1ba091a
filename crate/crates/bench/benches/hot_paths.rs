use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semparse_core::beam::Scorer;
use semparse_core::data::{gen_synthetic, SynthGrammarConfig};
use semparse_core::model::{init_model, GradPartition, ModelConfig, ModelScorer};
use semparse_core::tree::parse_top;
use semparse_core::trie::Trie;
use semparse_core::vocab::{TokenId, Vocabulary};
use semparse_core::{constrained_beam_search, unconstrained_beam_search};

fn bench_parse(c: &mut Criterion) {
    let dataset = gen_synthetic(&SynthGrammarConfig::reminder_like(), 200, 1).unwrap();
    let meanings: Vec<&str> = dataset
        .examples
        .iter()
        .map(|e| e.meaning.as_str())
        .collect();
    c.bench_function("parse_top_200_meanings", |b| {
        b.iter(|| {
            for m in &meanings {
                black_box(parse_top(m).unwrap());
            }
        })
    });
    let trees: Vec<_> = meanings.iter().map(|m| parse_top(m).unwrap()).collect();
    c.bench_function("serialize_200_trees", |b| {
        b.iter(|| {
            for t in &trees {
                black_box(t.serialize());
            }
        })
    });
}

fn random_sequences(n: usize, vocab: usize, max_len: usize, seed: u64) -> Vec<Vec<TokenId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            (0..len)
                .map(|_| rng.random_range(0..vocab as TokenId))
                .collect()
        })
        .collect()
}

fn bench_trie(c: &mut Criterion) {
    let sequences = random_sequences(500, 40, 12, 2);
    c.bench_function("trie_build_500", |b| {
        b.iter_batched(
            || sequences.clone(),
            |seqs| black_box(Trie::build(&seqs).unwrap()),
            BatchSize::SmallInput,
        )
    });
    let trie = Trie::build(&sequences).unwrap();
    let probes = random_sequences(1000, 40, 12, 3);
    c.bench_function("trie_continuations_1000", |b| {
        b.iter(|| {
            for p in &probes {
                black_box(trie.continuations(p));
            }
        })
    });
}

/// Cheap deterministic scorer so the search itself dominates.
struct HashScorer {
    vocab: usize,
}

impl Scorer for HashScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn log_probs(&self, _source: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let h = prefix
            .iter()
            .fold(7u64, |acc, &t| acc.wrapping_mul(31).wrapping_add(t as u64));
        let weights: Vec<f64> = (0..self.vocab)
            .map(|i| ((h ^ i as u64) % 97) as f64 + 1.0)
            .collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| (w / total).ln()).collect()
    }
}

fn bench_beam(c: &mut Criterion) {
    let sequences = random_sequences(200, 40, 10, 4);
    let trie = Trie::build(&sequences).unwrap();
    let scorer = HashScorer { vocab: 40 };
    c.bench_function("constrained_beam_10", |b| {
        b.iter(|| {
            black_box(
                constrained_beam_search(&scorer, &trie, &[1, 2], 10, trie.max_seq_len()).unwrap(),
            )
        })
    });
    c.bench_function("unconstrained_beam_10", |b| {
        b.iter(|| black_box(unconstrained_beam_search(&scorer, &[1, 2], 10, 10).unwrap()))
    });
}

fn bench_model(c: &mut Criterion) {
    let vocab = Vocabulary::build(["a b c d e f g h i j k l m n o p"]);
    let model = init_model(ModelConfig::desk(vocab.len(), 1), &vocab).unwrap();
    let source: Vec<TokenId> = vec![4, 5, 6, 7, 8, 9];
    let target: Vec<TokenId> = vec![10, 11, 12, 13, 14, 15, 16, 17, 18, 19];
    c.bench_function("forward_logprobs_d64", |b| {
        b.iter(|| black_box(model.forward_logprobs(&source, &target).unwrap()))
    });
    let batch = vec![(source.clone(), target.clone()); 8];
    c.bench_function("loss_and_gradients_batch8_d64", |b| {
        b.iter(|| {
            black_box(
                model
                    .loss_and_gradients(&batch, GradPartition::All)
                    .unwrap(),
            )
        })
    });
    c.bench_function("greedy_decode_d64", |b| {
        let scorer = ModelScorer::new(&model);
        b.iter(|| black_box(unconstrained_beam_search(&scorer, &source, 1, 16).unwrap()))
    });
}

criterion_group!(benches, bench_parse, bench_trie, bench_beam, bench_model);
criterion_main!(benches);
