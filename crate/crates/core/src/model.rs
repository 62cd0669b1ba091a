//! Toy encoder-decoder sequence model with prompt tuning support.
//!
//! The parameter store is partitioned into `prompt` (the K prepended
//! continuous embeddings) and `backbone` (everything else: token and
//! positional embeddings, attention/FFN/layer-norm weights, output
//! projection). Prompt tuning optimizes the prompt rows exclusively while
//! gradients still flow through the whole network; fine-tuning trains all
//! parameters. Everything is `f64` and seeded, so runs are bit-reproducible.
//!
//! Architecture: pre-layer-norm transformer blocks, learned positional
//! embeddings, GELU feed-forward, untied output projection. The prompt is
//! prepended to the encoder input embeddings only and receives no positional
//! rows.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::beam::Scorer;
use crate::vocab::{TokenId, Vocabulary, BOS, EOS};

const INIT_STD: f64 = 0.02;
const MASK_NEG: f64 = -1e30;

fn default_d_model() -> usize {
    64
}
fn default_n_heads() -> usize {
    2
}
fn default_layers() -> usize {
    2
}
fn default_max_seq_len() -> usize {
    128
}
fn default_prompt_len() -> usize {
    20
}

/// Model shape. Desk-scale defaults: `d_model` 64, 2 heads, 2 encoder and 2
/// decoder layers, 20 prompt tokens; the full-scale prompt length used on
/// real checkpoints would be 150.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_n_heads")]
    pub n_heads: usize,
    #[serde(default = "default_layers")]
    pub n_encoder_layers: usize,
    #[serde(default = "default_layers")]
    pub n_decoder_layers: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    pub vocab_size: usize,
    /// K >= 0; 0 disables the prompt.
    #[serde(default = "default_prompt_len")]
    pub prompt_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk(vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: default_d_model(),
            n_heads: default_n_heads(),
            n_encoder_layers: default_layers(),
            n_decoder_layers: default_layers(),
            max_seq_len: default_max_seq_len(),
            vocab_size,
            prompt_len: default_prompt_len(),
            seed,
        }
    }

    /// Tiny shape for gradient checking (well under 5k parameters).
    pub fn tiny(vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            max_seq_len: 16,
            vocab_size,
            prompt_len: 4,
            seed,
        }
    }

    pub fn ff_dim(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Longest admissible source (positional rows bound it; prompt rows
    /// carry no positions).
    pub fn max_source_len(&self) -> usize {
        self.max_seq_len
    }

    /// Longest admissible target, the `<bos>` frame included.
    pub fn max_target_len(&self) -> usize {
        self.max_seq_len - 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::BadConfig(
                "d_model must be a positive multiple of n_heads",
            ));
        }
        if self.vocab_size < 4 {
            return Err(ModelError::BadConfig(
                "vocab_size must cover the reserved ids",
            ));
        }
        if self.max_seq_len < 2 {
            return Err(ModelError::BadConfig("max_seq_len must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(&'static str),
    #[error("vocabulary size mismatch: model expects {model}, vocabulary has {vocab}")]
    VocabMismatch { model: usize, vocab: usize },
    #[error("sequence of length {len} exceeds capacity {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("encoder input is empty (no prompt rows and an empty source)")]
    EmptySource,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("loss is not finite; training diverged")]
    NonFiniteLoss,
    #[error("selected partition has no trainable parameters")]
    NoTrainableParameters,
}

/// Which side of the parameter store a tensor lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Prompt,
    Backbone,
}

/// Which parameters receive gradients and updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradPartition {
    PromptOnly,
    All,
}

impl GradPartition {
    fn selects(self, partition: Partition) -> bool {
        match self {
            GradPartition::All => true,
            GradPartition::PromptOnly => partition == Partition::Prompt,
        }
    }
}

struct Param {
    name: String,
    partition: Partition,
    value: Matrix,
}

/// The model: a config plus its named parameter tensors.
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    partition: p.partition,
                    value: p.value.clone(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

enum InitKind {
    Gaussian,
    Ones,
    Zeros,
}

fn layer_param_specs(
    prefix: &str,
    cross_attn: bool,
    d: usize,
    ff: usize,
) -> Vec<(String, usize, usize, InitKind)> {
    use InitKind::*;
    let mut specs: Vec<(String, usize, usize, InitKind)> = Vec::new();
    let attn = |specs: &mut Vec<(String, usize, usize, InitKind)>, name: &str| {
        for w in ["wq", "wk", "wv", "wo"] {
            specs.push((format!("{prefix}.{name}.{w}"), d, d, Gaussian));
        }
    };
    let ln = |specs: &mut Vec<(String, usize, usize, InitKind)>, name: &str| {
        specs.push((format!("{prefix}.{name}.gain"), 1, d, Ones));
        specs.push((format!("{prefix}.{name}.bias"), 1, d, Zeros));
    };
    ln(&mut specs, "ln1");
    attn(&mut specs, if cross_attn { "self_attn" } else { "attn" });
    ln(&mut specs, "ln2");
    if cross_attn {
        attn(&mut specs, "cross_attn");
        ln(&mut specs, "ln3");
    }
    specs.push((format!("{prefix}.ffn.w1"), d, ff, Gaussian));
    specs.push((format!("{prefix}.ffn.b1"), 1, ff, Zeros));
    specs.push((format!("{prefix}.ffn.w2"), ff, d, Gaussian));
    specs.push((format!("{prefix}.ffn.b2"), 1, d, Zeros));
    specs
}

fn param_specs(config: &ModelConfig) -> Vec<(String, usize, usize, InitKind)> {
    use InitKind::*;
    let d = config.d_model;
    let ff = config.ff_dim();
    let v = config.vocab_size;
    let mut specs: Vec<(String, usize, usize, InitKind)> = vec![
        ("tok_emb".to_string(), v, d, Gaussian),
        ("pos_emb".to_string(), config.max_seq_len, d, Gaussian),
    ];
    for i in 0..config.n_encoder_layers {
        specs.extend(layer_param_specs(&format!("enc.{i}"), false, d, ff));
    }
    specs.push(("enc.final_ln.gain".to_string(), 1, d, Ones));
    specs.push(("enc.final_ln.bias".to_string(), 1, d, Zeros));
    for i in 0..config.n_decoder_layers {
        specs.extend(layer_param_specs(&format!("dec.{i}"), true, d, ff));
    }
    specs.push(("dec.final_ln.gain".to_string(), 1, d, Ones));
    specs.push(("dec.final_ln.bias".to_string(), 1, d, Zeros));
    specs.push(("out_proj.w".to_string(), d, v, Gaussian));
    specs.push(("out_proj.b".to_string(), 1, v, Zeros));
    specs
}

/// Initializes a model for a vocabulary, checking that sizes agree.
pub fn init_model(config: ModelConfig, vocab: &Vocabulary) -> Result<Model, ModelError> {
    if config.vocab_size != vocab.len() {
        return Err(ModelError::VocabMismatch {
            model: config.vocab_size,
            vocab: vocab.len(),
        });
    }
    Model::init(config)
}

impl Model {
    /// Seeded initialization: backbone weight matrices ~ N(0, 0.02²),
    /// layer-norm gains 1 and biases 0, prompt rows copied from uniformly
    /// sampled vocabulary embedding rows.
    pub fn init(config: ModelConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid stddev");
        let mut params = Vec::new();
        for (name, rows, cols, kind) in param_specs(&config) {
            let mut value = Matrix::zeros(rows, cols);
            match kind {
                InitKind::Gaussian => {
                    for x in value.data.iter_mut() {
                        *x = normal.sample(&mut rng);
                    }
                }
                InitKind::Ones => value.data.fill(1.0),
                InitKind::Zeros => {}
            }
            params.push(Param {
                name,
                partition: Partition::Backbone,
                value,
            });
        }
        // Prompt rows copy sampled vocabulary embeddings.
        let tok_emb_idx = params.iter().position(|p| p.name == "tok_emb").unwrap();
        let mut prompt = Matrix::zeros(config.prompt_len, config.d_model);
        for r in 0..config.prompt_len {
            let row = rng.random_range(0..config.vocab_size);
            prompt
                .row_mut(r)
                .copy_from_slice(params[tok_emb_idx].value.row(row));
        }
        params.push(Param {
            name: "prompt".to_string(),
            partition: Partition::Prompt,
            value: prompt,
        });

        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(Model {
            config,
            params,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param(&self, name: &str) -> &Matrix {
        &self.params[self.index[name]].value
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self.params[self.index[name]].value
    }

    /// Parameter names in store order, with their partition.
    pub fn param_names(&self) -> Vec<(String, Partition)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.partition))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Concatenated little-endian bytes of the selected partition, for
    /// bit-identity checks.
    pub fn partition_bytes(&self, partition: Partition) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.params {
            if p.partition == partition {
                for x in &p.value.data {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    /// Multiplies every Gaussian-initialized tensor (everything but the
    /// layer norms) by `factor`. Gradient checking uses this to move the
    /// check point away from the near-degenerate 0.02-std init, where
    /// attention-score gradients vanish quadratically and finite
    /// differences drown in f64 noise.
    pub fn scale_weights(&mut self, factor: f64) {
        for p in self.params.iter_mut() {
            if !p.name.ends_with(".gain") && !p.name.ends_with(".bias") {
                for x in p.value.data.iter_mut() {
                    *x *= factor;
                }
            }
        }
    }

    /// Appends fresh `N(0, 0.02²)` embedding rows and output-projection
    /// columns for tokens registered after initialization.
    pub fn grow_vocab(&mut self, new_vocab_size: usize) {
        let old = self.config.vocab_size;
        assert!(new_vocab_size >= old, "vocabulary can only grow");
        if new_vocab_size == old {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(old as u64 + 1);
        let normal = Normal::new(0.0, INIT_STD).expect("valid stddev");
        let d = self.config.d_model;
        let added = new_vocab_size - old;

        let tok_emb = self.param_mut("tok_emb");
        for _ in 0..added * d {
            tok_emb.data.push(normal.sample(&mut rng));
        }
        tok_emb.rows = new_vocab_size;

        let out_w = self.param("out_proj.w").clone();
        let mut new_w = Matrix::zeros(d, new_vocab_size);
        for r in 0..d {
            new_w.row_mut(r)[..old].copy_from_slice(out_w.row(r));
            for c in old..new_vocab_size {
                new_w.set(r, c, normal.sample(&mut rng));
            }
        }
        *self.param_mut("out_proj.w") = new_w;

        let out_b = self.param_mut("out_proj.b");
        out_b.data.resize(new_vocab_size, 0.0);
        out_b.cols = new_vocab_size;

        self.config.vocab_size = new_vocab_size;
    }
}

/// Parameter leaves registered on a tape, looked up by name.
struct TapedParams<'m> {
    model: &'m Model,
    vars: Vec<Var>,
}

impl<'m> TapedParams<'m> {
    fn new(tape: &mut Tape, model: &'m Model) -> TapedParams<'m> {
        let vars = model
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect();
        TapedParams { model, vars }
    }

    fn var(&self, name: &str) -> Var {
        self.vars[self.model.index[name]]
    }
}

fn causal_mask(len: usize) -> Matrix {
    let mut mask = Matrix::zeros(len, len);
    for r in 0..len {
        for c in r + 1..len {
            mask.set(r, c, MASK_NEG);
        }
    }
    mask
}

fn layer_norm(tape: &mut Tape, tp: &TapedParams, x: Var, prefix: &str) -> Var {
    let gain = tp.var(&format!("{prefix}.gain"));
    let bias = tp.var(&format!("{prefix}.bias"));
    tape.layer_norm_rows(x, gain, bias)
}

fn attention(
    tape: &mut Tape,
    tp: &TapedParams,
    prefix: &str,
    q_in: Var,
    kv_in: Var,
    mask: Option<&Matrix>,
) -> Var {
    let config = tp.model.config();
    let q = tape.matmul(q_in, tp.var(&format!("{prefix}.wq")));
    let k = tape.matmul(kv_in, tp.var(&format!("{prefix}.wk")));
    let v = tape.matmul(kv_in, tp.var(&format!("{prefix}.wv")));
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores = tape.matmul_nt(qh, kh);
        let mut scores = tape.scale(scores, scale);
        if let Some(mask) = mask {
            scores = tape.add_const(scores, mask);
        }
        let probs = tape.softmax_rows(scores);
        heads.push(tape.matmul(probs, vh));
    }
    let ctx = tape.concat_cols(&heads);
    tape.matmul(ctx, tp.var(&format!("{prefix}.wo")))
}

fn feed_forward(tape: &mut Tape, tp: &TapedParams, prefix: &str, x: Var) -> Var {
    let h = tape.matmul(x, tp.var(&format!("{prefix}.w1")));
    let h = tape.add_row_broadcast(h, tp.var(&format!("{prefix}.b1")));
    let h = tape.gelu(h);
    let out = tape.matmul(h, tp.var(&format!("{prefix}.w2")));
    tape.add_row_broadcast(out, tp.var(&format!("{prefix}.b2")))
}

fn embed(tape: &mut Tape, tp: &TapedParams, ids: &[TokenId]) -> Var {
    let positions: Vec<usize> = (0..ids.len()).collect();
    let ids: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
    let tok = {
        let table = tp.var("tok_emb");
        tape.gather_rows(table, &ids)
    };
    let pos = {
        let table = tp.var("pos_emb");
        tape.gather_rows(table, &positions)
    };
    tape.add(tok, pos)
}

/// Encoder stack over `[prompt ; e(source)]`.
fn encode_source(tape: &mut Tape, tp: &TapedParams, source: &[TokenId]) -> Result<Var, ModelError> {
    let config = tp.model.config();
    if source.len() > config.max_source_len() {
        return Err(ModelError::SequenceTooLong {
            len: source.len(),
            max: config.max_source_len(),
        });
    }
    if source.is_empty() && config.prompt_len == 0 {
        return Err(ModelError::EmptySource);
    }
    let mut x = if source.is_empty() {
        tp.var("prompt")
    } else {
        let emb = embed(tape, tp, source);
        if config.prompt_len > 0 {
            let prompt = tp.var("prompt");
            tape.concat_rows(prompt, emb)
        } else {
            emb
        }
    };
    for i in 0..config.n_encoder_layers {
        let prefix = format!("enc.{i}");
        let normed = layer_norm(tape, tp, x, &format!("{prefix}.ln1"));
        let attn = attention(tape, tp, &format!("{prefix}.attn"), normed, normed, None);
        x = tape.add(x, attn);
        let normed = layer_norm(tape, tp, x, &format!("{prefix}.ln2"));
        let ffn = feed_forward(tape, tp, &format!("{prefix}.ffn"), normed);
        x = tape.add(x, ffn);
    }
    Ok(layer_norm(tape, tp, x, "enc.final_ln"))
}

/// Decoder stack over `<bos>`-framed target ids; returns row-wise
/// log-softmax over the vocabulary.
fn decode_logprobs(
    tape: &mut Tape,
    tp: &TapedParams,
    enc_out: Var,
    dec_input: &[TokenId],
) -> Result<Var, ModelError> {
    let config = tp.model.config();
    if dec_input.len() > config.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: dec_input.len(),
            max: config.max_seq_len,
        });
    }
    let mask = causal_mask(dec_input.len());
    let mut x = embed(tape, tp, dec_input);
    for i in 0..config.n_decoder_layers {
        let prefix = format!("dec.{i}");
        let normed = layer_norm(tape, tp, x, &format!("{prefix}.ln1"));
        let attn = attention(
            tape,
            tp,
            &format!("{prefix}.self_attn"),
            normed,
            normed,
            Some(&mask),
        );
        x = tape.add(x, attn);
        let normed = layer_norm(tape, tp, x, &format!("{prefix}.ln2"));
        let cross = attention(
            tape,
            tp,
            &format!("{prefix}.cross_attn"),
            normed,
            enc_out,
            None,
        );
        x = tape.add(x, cross);
        let normed = layer_norm(tape, tp, x, &format!("{prefix}.ln3"));
        let ffn = feed_forward(tape, tp, &format!("{prefix}.ffn"), normed);
        x = tape.add(x, ffn);
    }
    let x = layer_norm(tape, tp, x, "dec.final_ln");
    let logits = tape.matmul(x, tp.var("out_proj.w"));
    let logits = tape.add_row_broadcast(logits, tp.var("out_proj.b"));
    Ok(tape.log_softmax_rows(logits))
}

impl Model {
    /// Encoder states for a source, as plain values (no gradients).
    pub fn encode(&self, source: &[TokenId]) -> Result<Matrix, ModelError> {
        let mut tape = Tape::new();
        let tp = TapedParams::new(&mut tape, self);
        let enc = encode_source(&mut tape, &tp, source)?;
        Ok(tape.value(enc).clone())
    }

    /// Log-probability vector over the vocabulary for the token following
    /// `prefix`, using precomputed encoder states.
    pub fn next_logprobs_with_encoding(
        &self,
        enc_states: &Matrix,
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, ModelError> {
        if prefix.len() + 1 > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: prefix.len() + 1,
                max: self.config.max_seq_len,
            });
        }
        let mut tape = Tape::new();
        let tp = TapedParams::new(&mut tape, self);
        let enc = tape.leaf(enc_states.clone());
        let mut dec_input = Vec::with_capacity(prefix.len() + 1);
        dec_input.push(BOS);
        dec_input.extend_from_slice(prefix);
        let logp = decode_logprobs(&mut tape, &tp, enc, &dec_input)?;
        let value = tape.value(logp);
        Ok(value.row(value.rows - 1).to_vec())
    }

    /// Log-probability vector over the vocabulary for the next target
    /// position after `prefix`. Exponentiated entries sum to 1.
    pub fn forward_logprobs(
        &self,
        source: &[TokenId],
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, ModelError> {
        let enc = self.encode(source)?;
        self.next_logprobs_with_encoding(&enc, prefix)
    }

    fn batch_loss_var(
        &self,
        tape: &mut Tape,
        tp: &TapedParams,
        batch: &[(Vec<TokenId>, Vec<TokenId>)],
    ) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut example_losses = Vec::with_capacity(batch.len());
        let mut total_tokens = 0usize;
        for (source, target) in batch {
            if target.len() + 1 > self.config.max_seq_len {
                return Err(ModelError::SequenceTooLong {
                    len: target.len() + 1,
                    max: self.config.max_seq_len,
                });
            }
            let enc = encode_source(tape, tp, source)?;
            let mut dec_input = Vec::with_capacity(target.len() + 1);
            dec_input.push(BOS);
            dec_input.extend_from_slice(target);
            let logp = decode_logprobs(tape, tp, enc, &dec_input)?;
            let mut shifted: Vec<usize> = target.iter().map(|&t| t as usize).collect();
            shifted.push(EOS as usize);
            example_losses.push(tape.nll_sum(logp, &shifted));
            total_tokens += shifted.len();
        }
        let total = tape.add_n(&example_losses);
        Ok(tape.scale(total, 1.0 / total_tokens as f64))
    }

    /// Mean token-level negative log-likelihood of a teacher-forced batch
    /// (`<bos>`-prefixed inputs, `<eos>`-terminated targets).
    pub fn batch_loss(&self, batch: &[(Vec<TokenId>, Vec<TokenId>)]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let tp = TapedParams::new(&mut tape, self);
        let loss = self.batch_loss_var(&mut tape, &tp, batch)?;
        let value = tape.value(loss).data[0];
        if !value.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        Ok(value)
    }

    /// Loss plus gradients for the selected partition, computed by
    /// reverse-mode differentiation through the entire network.
    pub fn loss_and_gradients(
        &self,
        batch: &[(Vec<TokenId>, Vec<TokenId>)],
        partition: GradPartition,
    ) -> Result<GradBatch, ModelError> {
        let mut tape = Tape::new();
        let tp = TapedParams::new(&mut tape, self);
        let loss = self.batch_loss_var(&mut tape, &tp, batch)?;
        let loss_value = tape.value(loss).data[0];
        if !loss_value.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        tape.backward(loss);
        let mut grads = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if partition.selects(p.partition) {
                grads.push((p.name.clone(), tape.take_grad(tp.vars[i])));
            }
        }
        Ok(GradBatch {
            loss: loss_value,
            grads,
        })
    }
}

/// Loss and per-parameter gradients for one batch.
pub struct GradBatch {
    pub loss: f64,
    /// `(parameter name, gradient)` for the selected partition, in store
    /// order.
    pub grads: Vec<(String, Matrix)>,
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    /// `(parameter name, max relative error)` per tensor.
    pub per_param: Vec<(String, f64)>,
}

/// Per-tensor relative error between gradient vectors:
/// `||a-n|| / max(||a||, ||n||, 1e-8)` in the L2 norm. Comparing whole
/// tensors keeps f64 finite-difference noise on individual near-zero
/// entries from drowning the signal.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

/// Compares supplied analytic gradients against central finite differences
/// of the batch loss. Exposed separately from [`grad_check`] so harness
/// tests can inject corrupted gradients.
///
/// The step balances O(h²) truncation against f64 roundoff; at 1e-5 both
/// sit near 1e-10 absolute, keeping relative errors well under 1e-4 even on
/// near-zero gradient entries.
pub fn compare_with_finite_differences(
    model: &Model,
    example: &(Vec<TokenId>, Vec<TokenId>),
    grads: &[(String, Matrix)],
) -> Result<GradCheckReport, ModelError> {
    let h = 1e-5;
    let batch = std::slice::from_ref(example);
    let mut scratch = model.clone();
    let mut per_param = Vec::with_capacity(grads.len());
    let mut max_rel_error = 0.0f64;
    let mut worst_param = String::new();
    for (name, grad) in grads {
        let mut numeric = vec![0.0; grad.data.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let original = scratch.param(name).data[i];
            scratch.param_mut(name).data[i] = original + h;
            let plus = scratch.batch_loss(batch)?;
            scratch.param_mut(name).data[i] = original - h;
            let minus = scratch.batch_loss(batch)?;
            scratch.param_mut(name).data[i] = original;
            *slot = (plus - minus) / (2.0 * h);
        }
        let rel = rel_error(&grad.data, &numeric);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_param = name.clone();
        }
        per_param.push((name.clone(), rel));
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_param,
        per_param,
    })
}

/// Max relative error between analytic and numeric gradients on one
/// example, over the selected partition.
pub fn grad_check(
    model: &Model,
    example: &(Vec<TokenId>, Vec<TokenId>),
    partition: GradPartition,
) -> Result<GradCheckReport, ModelError> {
    let analytic = model.loss_and_gradients(std::slice::from_ref(example), partition)?;
    compare_with_finite_differences(model, example, &analytic.grads)
}

/// [`Scorer`] backed by a model, with a one-entry encoder-state cache so
/// beam search does not re-encode the source at every step.
pub struct ModelScorer<'m> {
    model: &'m Model,
    cache: RefCell<Option<(Vec<TokenId>, Matrix)>>,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model) -> ModelScorer<'m> {
        ModelScorer {
            model,
            cache: RefCell::new(None),
        }
    }
}

impl Scorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn log_probs(&self, source: &[TokenId], prefix: &[TokenId]) -> Vec<f64> {
        let mut cache = self.cache.borrow_mut();
        let needs_encode = match cache.as_ref() {
            Some((cached_src, _)) => cached_src != source,
            None => true,
        };
        if needs_encode {
            let enc = self.model.encode(source).expect("source fits the model");
            *cache = Some((source.to_vec(), enc));
        }
        let (_, enc) = cache.as_ref().unwrap();
        self.model
            .next_logprobs_with_encoding(enc, prefix)
            .expect("prefix fits the model; bound beam max_len by max_target_len")
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SPCKPT01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl Model {
    /// Writes a self-describing container: magic, JSON config record, then
    /// named tensors in row-major little-endian `f64`.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(p.value.rows as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols as u32).to_le_bytes());
            for x in &p.value.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Restores a checkpoint bit-identically.
    pub fn load(path: &Path) -> Result<Model, CheckpointError> {
        let mut file = fs::File::open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *cursor + n > bytes.len() {
                return Err(CheckpointError::Malformed("truncated file".to_string()));
            }
            let slice = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(slice)
        };
        let read_u32 = |cursor: &mut usize| -> Result<usize, CheckpointError> {
            let slice = take(cursor, 4)?;
            Ok(u32::from_le_bytes(slice.try_into().unwrap()) as usize)
        };

        if take(&mut cursor, 8)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Malformed("bad magic".to_string()));
        }
        let config_len = read_u32(&mut cursor)?;
        let config: ModelConfig = serde_json::from_slice(take(&mut cursor, config_len)?)
            .map_err(|e| CheckpointError::Malformed(format!("config record: {e}")))?;
        let expected =
            Model::init(config.clone()).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let n_params = read_u32(&mut cursor)?;
        if n_params != expected.params.len() {
            return Err(CheckpointError::Malformed(format!(
                "expected {} tensors, found {n_params}",
                expected.params.len()
            )));
        }
        let mut model = expected;
        for i in 0..n_params {
            let name_len = read_u32(&mut cursor)?;
            let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("tensor name".to_string()))?;
            let rows = read_u32(&mut cursor)?;
            let cols = read_u32(&mut cursor)?;
            let param = &mut model.params[i];
            if param.name != name || param.value.rows != rows || param.value.cols != cols {
                return Err(CheckpointError::Malformed(format!(
                    "tensor {name} does not match the config-derived store"
                )));
            }
            let data = take(&mut cursor, rows * cols * 8)?;
            for (j, chunk) in data.chunks_exact(8).enumerate() {
                param.value.data[j] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
        }
        if cursor != bytes.len() {
            return Err(CheckpointError::Malformed("trailing bytes".to_string()));
        }
        Ok(model)
    }
}
