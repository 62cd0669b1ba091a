//! Seeded training loop: Adam on a selected parameter partition with
//! early stopping on validation exact match.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::model::{GradPartition, Model, ModelError};
use crate::vocab::TokenId;

/// Which parameters train. Serializes as `"prompt"` / `"finetune"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TuneMode {
    /// Only the prompt embeddings; the backbone stays frozen.
    PromptTune,
    /// All parameters.
    FineTune,
}

impl TryFrom<String> for TuneMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TuneMode> for String {
    fn from(mode: TuneMode) -> String {
        mode.to_string()
    }
}

impl TuneMode {
    pub fn grad_partition(self) -> GradPartition {
        match self {
            TuneMode::PromptTune => GradPartition::PromptOnly,
            TuneMode::FineTune => GradPartition::All,
        }
    }

    /// Default learning rate: 0.3 for prompt tuning, 1e-3 for fine-tuning.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            TuneMode::PromptTune => 0.3,
            TuneMode::FineTune => 1e-3,
        }
    }
}

impl std::fmt::Display for TuneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TuneMode::PromptTune => "prompt",
            TuneMode::FineTune => "finetune",
        })
    }
}

impl std::str::FromStr for TuneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prompt" | "prompt-tune" => Ok(TuneMode::PromptTune),
            "finetune" | "fine-tune" => Ok(TuneMode::FineTune),
            other => Err(format!("unknown tuning mode `{other}`")),
        }
    }
}

fn default_batch_size() -> usize {
    16
}
fn default_max_epochs() -> usize {
    500
}
fn default_patience() -> usize {
    10
}
fn default_eval_interval() -> usize {
    10
}

/// Training hyperparameters. Desk defaults: batch 16, up to 500 epochs,
/// validation every 10 epochs, stop after 10 evaluations without
/// improvement. Adam with β₁ 0.9, β₂ 0.999, ε 1e-8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TuneMode,
    /// Absent means the mode default (0.3 prompt / 1e-3 fine-tune).
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: TuneMode) -> TrainConfig {
        TrainConfig {
            mode,
            learning_rate: None,
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            eval_interval: default_eval_interval(),
            seed: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.mode.default_learning_rate())
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_interval == 0 {
            return Err(ModelError::BadConfig(
                "batch_size, max_epochs and eval_interval must be positive",
            ));
        }
        if self.learning_rate() < 0.0 {
            return Err(ModelError::BadConfig("learning rate must be non-negative"));
        }
        Ok(())
    }
}

/// Adam over the parameters named by a gradient batch.
struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    moments: Vec<(String, Matrix, Matrix)>,
}

impl Adam {
    fn new(learning_rate: f64) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    fn apply(&mut self, model: &mut Model, grads: &[(String, Matrix)]) {
        if self.moments.is_empty() {
            self.moments = grads
                .iter()
                .map(|(name, g)| {
                    (
                        name.clone(),
                        Matrix::zeros(g.rows, g.cols),
                        Matrix::zeros(g.rows, g.cols),
                    )
                })
                .collect();
        }
        self.step += 1;
        let t = self.step as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        for ((name, g), (m_name, m, v)) in grads.iter().zip(self.moments.iter_mut()) {
            debug_assert_eq!(name, m_name);
            let value = model.param_mut(name);
            for i in 0..g.data.len() {
                let grad = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * grad;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * grad * grad;
                let m_hat = m.data[i] / bias1;
                let v_hat = v.data[i] / bias2;
                value.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Per-epoch record: mean train loss, validation exact match when this epoch
/// evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_exact_match: Option<f64>,
}

/// What training returned: the best snapshot by validation exact match and
/// the full history.
#[derive(Debug)]
pub struct TrainOutcome {
    pub best_model: Model,
    pub best_val_exact_match: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// Token-id training pair: (source ids, target ids), unframed.
pub type Pair = (Vec<TokenId>, Vec<TokenId>);

/// Trains `model` in place; Adam steps touch only the partition selected by
/// the mode. Every `eval_interval` epochs `eval_fn(model, val_set)` computes
/// validation exact match; the best-scoring snapshot is kept and training
/// stops after `patience` evaluations without improvement.
pub fn train(
    model: &mut Model,
    train_set: &[Pair],
    val_set: &[Pair],
    config: &TrainConfig,
    eval_fn: &mut dyn FnMut(&Model, &[Pair]) -> f64,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let partition = config.mode.grad_partition();
    if config.mode == TuneMode::PromptTune && model.param("prompt").is_empty() {
        return Err(ModelError::NoTrainableParameters);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(Model, f64, usize)> = None;
    let mut evals_without_improvement = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Pair> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let grad_batch = model.loss_and_gradients(&batch, partition)?;
            adam.apply(model, &grad_batch.grads);
            loss_sum += grad_batch.loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;

        let mut val_exact_match = None;
        let mut perfect = false;
        if epoch % config.eval_interval == 0 || epoch == config.max_epochs {
            let em = eval_fn(model, val_set);
            val_exact_match = Some(em);
            let improved = best.as_ref().is_none_or(|(_, best_em, _)| em > *best_em);
            if improved {
                best = Some((model.clone(), em, epoch));
                evals_without_improvement = 0;
            } else {
                evals_without_improvement += 1;
            }
            // A perfect score cannot be improved on, and ties never replace
            // the snapshot, so continuing would not change the outcome.
            perfect = em >= 1.0;
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_exact_match,
        });
        if perfect || (config.patience > 0 && evals_without_improvement >= config.patience) {
            stopped_early = true;
            break;
        }
    }

    let (best_model, best_val_exact_match, best_epoch) =
        best.unwrap_or_else(|| (model.clone(), f64::NAN, config.max_epochs));
    Ok(TrainOutcome {
        best_model,
        best_val_exact_match,
        best_epoch,
        history,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig, Partition};
    use crate::vocab::Vocabulary;

    fn setup() -> (Model, Vec<Pair>, Vec<Pair>) {
        let vocab = Vocabulary::build(["p q r s t u v w"]);
        let model = init_model(ModelConfig::tiny(vocab.len(), 7), &vocab).unwrap();
        // A copy task keeps losses well-behaved.
        let pairs: Vec<Pair> = (4..10u32)
            .map(|t| (vec![t, t + 1], vec![t, t + 1]))
            .collect();
        (model, pairs.clone(), pairs)
    }

    #[test]
    fn prompt_tuning_freezes_the_backbone() {
        let (mut model, train_set, val_set) = setup();
        let before = model.partition_bytes(Partition::Backbone);
        let prompt_before = model.partition_bytes(Partition::Prompt);
        let mut config = TrainConfig::new(TuneMode::PromptTune);
        config.max_epochs = 5;
        config.eval_interval = 5;
        config.batch_size = 4;
        let outcome = train(&mut model, &train_set, &val_set, &config, &mut |_, _| 0.0).unwrap();
        assert_eq!(model.partition_bytes(Partition::Backbone), before);
        assert_ne!(model.partition_bytes(Partition::Prompt), prompt_before);
        assert_eq!(outcome.history.len(), 5);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (mut model, train_set, val_set) = setup();
        let before_backbone = model.partition_bytes(Partition::Backbone);
        let before_prompt = model.partition_bytes(Partition::Prompt);
        let mut config = TrainConfig::new(TuneMode::FineTune);
        config.learning_rate = Some(0.0);
        config.max_epochs = 3;
        config.eval_interval = 1;
        let mut ems = Vec::new();
        let outcome = train(&mut model, &train_set, &val_set, &config, &mut |_, _| 0.25).unwrap();
        for stats in &outcome.history {
            ems.push(stats.val_exact_match.unwrap());
        }
        assert_eq!(model.partition_bytes(Partition::Backbone), before_backbone);
        assert_eq!(model.partition_bytes(Partition::Prompt), before_prompt);
        assert!(ems.iter().all(|&em| em == 0.25));
    }

    #[test]
    fn fine_tuning_reduces_loss() {
        let (mut model, train_set, val_set) = setup();
        let initial = model.batch_loss(&train_set).unwrap();
        let mut config = TrainConfig::new(TuneMode::FineTune);
        config.learning_rate = Some(0.01);
        config.max_epochs = 150;
        config.eval_interval = 150;
        config.batch_size = 6;
        train(&mut model, &train_set, &val_set, &config, &mut |_, _| 0.0).unwrap();
        let after = model.batch_loss(&train_set).unwrap();
        assert!(after < initial * 0.5, "loss {initial} -> {after}");
    }

    #[test]
    fn early_stopping_keeps_the_best_snapshot() {
        let (mut model, train_set, val_set) = setup();
        let mut config = TrainConfig::new(TuneMode::FineTune);
        config.max_epochs = 50;
        config.eval_interval = 1;
        config.patience = 3;
        // Scripted validation curve: peak at the third evaluation.
        let scripted = [0.1, 0.5, 0.9, 0.4, 0.4, 0.4, 0.4];
        let mut call = 0usize;
        let outcome = train(&mut model, &train_set, &val_set, &config, &mut |_, _| {
            let em = scripted[call.min(scripted.len() - 1)];
            call += 1;
            em
        })
        .unwrap();
        assert!(outcome.stopped_early);
        assert_eq!(outcome.best_epoch, 3);
        assert!((outcome.best_val_exact_match - 0.9).abs() < 1e-12);
        // Stopped after the peak plus `patience` flat evaluations.
        assert_eq!(outcome.history.len(), 6);
    }

    #[test]
    fn training_is_deterministic() {
        let (model0, train_set, val_set) = setup();
        let mut config = TrainConfig::new(TuneMode::FineTune);
        config.max_epochs = 4;
        config.eval_interval = 2;
        let run = |mut model: Model| {
            let outcome =
                train(&mut model, &train_set, &val_set, &config, &mut |_, _| 0.0).unwrap();
            (model.partition_bytes(Partition::Backbone), outcome.history)
        };
        let (bytes_a, hist_a) = run(model0.clone());
        let (bytes_b, hist_b) = run(model0);
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(hist_a, hist_b);
    }

    #[test]
    fn prompt_tune_without_prompt_is_rejected() {
        let vocab = Vocabulary::build(["p q"]);
        let mut config = ModelConfig::tiny(vocab.len(), 0);
        config.prompt_len = 0;
        let mut model = init_model(config, &vocab).unwrap();
        let pairs: Vec<Pair> = vec![(vec![4], vec![4])];
        let config = TrainConfig::new(TuneMode::PromptTune);
        assert_eq!(
            train(&mut model, &pairs, &pairs, &config, &mut |_, _| 0.0).unwrap_err(),
            ModelError::NoTrainableParameters
        );
    }
}
