//! Multi-negative training: uniform negative sampling, temperature-
//! softmax score normalization, the squared-error objective, and the
//! full loop with adaptive-moment updates, validation-driven early
//! stopping, and best-checkpoint tracking.

use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{rank_items, recall_at};
use crate::graph::{DatasetSplit, InteractionGraph};
use crate::model::{score_pairs_on_tape, EntityTables, ModelConfig, ModelParameters};
use crate::tensor::{softmax_into, AdamState, GradientSet, GradientTape, ParamId, Tensor2};

/// Training hyperparameters. Defaults: temperature 0.2, 60 negatives
/// per positive, learning rate 3e-5, batch size 4096 positives,
/// evaluation every 5 epochs with patience 3.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub temperature: f64,
    pub negatives_per_positive: usize,
    pub learning_rate: f64,
    /// Positives per batch; negatives are resampled fresh every epoch.
    pub batch_size: usize,
    /// Validation cadence in epochs.
    pub eval_every: usize,
    /// Evaluation rounds without improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Per-user fraction of train edges held out for early stopping.
    pub validation_fraction: f64,
    /// Recall cutoff for the validation metric.
    pub validation_cutoff: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.2,
            negatives_per_positive: 60,
            learning_rate: 3e-5,
            batch_size: 4096,
            eval_every: 5,
            patience: 3,
            max_epochs: 300,
            seed: 42,
            validation_fraction: 0.05,
            validation_cutoff: 40,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config(format!(
                "train.temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("negatives", self.negatives_per_positive),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("validation_cutoff", self.validation_cutoff),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be at least 1")));
            }
        }
        if self.patience < 1 {
            return Err(Error::Config("train.patience must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train.validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// `count` independent uniform draws over `[0, num_items)`.
/// Collisions with true interactions are allowed by design.
pub fn sample_negatives(rng: &mut ChaCha8Rng, num_items: usize, count: usize) -> Vec<u32> {
    debug_assert!(num_items >= 1);
    (0..count)
        .map(|_| rng.random_range(0..num_items as u32))
        .collect()
}

/// Softmax normalization of one positive score against its sampled
/// negatives: the positive probability shares one denominator with
/// every negative, so the S+1 values sum to 1.
pub fn normalize_scores(raw_pos: f64, raw_negs: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let mut row = Vec::with_capacity(raw_negs.len() + 1);
    row.push(raw_pos);
    row.extend_from_slice(raw_negs);
    let mut probs = vec![0.0; row.len()];
    softmax_into(&mut probs, &row, temperature);
    let pos = probs[0];
    probs.remove(0);
    (pos, probs)
}

/// Per-positive squared-error term: `(1 - pos)^2 + sum((0 - neg)^2)`.
pub fn squared_error_loss(pos_prob: f64, neg_probs: &[f64]) -> f64 {
    (1.0 - pos_prob).powi(2) + neg_probs.iter().map(|q| q * q).sum::<f64>()
}

/// Positive edges with per-positive negative item sets, flattened so
/// every positive is followed by its S negatives.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub positives: Vec<(u32, u32)>,
    pub negatives: Vec<Vec<u32>>,
}

impl TrainingBatch {
    pub fn sample(
        positives: &[(u32, u32)],
        num_items: usize,
        negatives_per_positive: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let negatives = positives
            .iter()
            .map(|_| sample_negatives(rng, num_items, negatives_per_positive))
            .collect();
        TrainingBatch {
            positives: positives.to_vec(),
            negatives,
        }
    }

    /// Pair list in `[pos, neg_1, …, neg_S]` row order per positive.
    pub fn flattened(&self) -> (Rc<[u32]>, Rc<[u32]>) {
        let mut users = Vec::new();
        let mut items = Vec::new();
        for ((u, i), negs) in self.positives.iter().zip(&self.negatives) {
            users.push(*u);
            items.push(*i);
            for &n in negs {
                users.push(*u);
                items.push(n);
            }
        }
        (Rc::from(users), Rc::from(items))
    }
}

/// Reduced training graph plus the per-user held-out validation items.
#[derive(Debug, Clone)]
pub struct ValidationSplit {
    pub train: InteractionGraph,
    pub validation: Vec<Vec<u32>>,
}

/// Holds out a per-user fraction of train edges for early stopping.
/// Every user with at least two edges contributes at least one
/// validation edge; degree-1 users keep their only edge. Deterministic
/// in `seed`.
pub fn hold_out_validation(
    train: &InteractionGraph,
    fraction: f64,
    seed: u64,
) -> Result<ValidationSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut kept = Vec::new();
    let mut validation = vec![Vec::new(); train.num_users()];
    for u in 0..train.num_users() {
        let mut items: Vec<u32> = train.items_of(u).to_vec();
        let degree = items.len();
        if degree < 2 {
            for &i in &items {
                kept.push((u as u32, i));
            }
            continue;
        }
        let hold = ((fraction * degree as f64).round() as usize).clamp(1, degree - 1);
        items.shuffle(&mut rng);
        for (pos, &i) in items.iter().enumerate() {
            if pos < hold {
                validation[u].push(i);
            } else {
                kept.push((u as u32, i));
            }
        }
    }
    for v in &mut validation {
        v.sort_unstable();
    }
    let reduced = InteractionGraph::from_edges(train.num_users(), train.num_items(), &kept)?;
    Ok(ValidationSplit {
        train: reduced,
        validation,
    })
}

/// Best-metric bookkeeping for early stopping.
#[derive(Debug, Clone)]
pub struct EarlyStopState {
    pub best_metric: f64,
    pub rounds_without_improvement: usize,
    pub best_epoch: Option<usize>,
}

impl EarlyStopState {
    pub fn new() -> Self {
        EarlyStopState {
            best_metric: f64::NEG_INFINITY,
            rounds_without_improvement: 0,
            best_epoch: None,
        }
    }

    /// Records one evaluation; returns whether it improved the best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric > self.best_metric {
            self.best_metric = metric;
            self.best_epoch = Some(epoch);
            self.rounds_without_improvement = 0;
            true
        } else {
            self.rounds_without_improvement += 1;
            false
        }
    }
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new()
    }
}

/// One epoch of the structured training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_metric: Option<f64>,
    pub seconds: f64,
}

impl EpochRecord {
    /// Line-delimited log form. Wall-clock seconds are observability
    /// metadata and the only non-deterministic field.
    pub fn to_log_line(&self, validation_cutoff: usize) -> String {
        let val = match self.val_metric {
            Some(v) => v.to_string(),
            None => "-".to_string(),
        };
        format!(
            "epoch={} mean_loss={} val_recall@{}={} seconds={:.3}",
            self.epoch, self.mean_loss, validation_cutoff, val, self.seconds
        )
    }
}

/// Result of a training run: the best-validation checkpoint, the final
/// parameters, and the per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParameters,
    pub last: ModelParameters,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Initializes parameters from the config seed and trains on the
/// dataset's train split.
pub fn train(
    dataset: &DatasetSplit,
    model_cfg: ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    let params = ModelParameters::init(
        model_cfg,
        dataset.num_users(),
        dataset.num_items(),
        train_cfg.seed,
    )?;
    train_from(params, dataset, train_cfg)
}

/// Trains from explicit starting parameters (used for resumption and
/// for fault-injection tests).
pub fn train_from(
    mut params: ModelParameters,
    dataset: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.train.num_edges() == 0 {
        return Err(Error::Usage("training split has no interactions".into()));
    }

    let held = hold_out_validation(&dataset.train, cfg.validation_fraction, cfg.seed)?;
    let graph = Rc::new(held.train);
    let has_validation = held.validation.iter().any(|v| !v.is_empty());

    let mut positives: Vec<(u32, u32)> = graph.edges().collect();
    let shapes = params.tensor_shapes();
    let mut adam = AdamState::new(cfg.learning_rate, &shapes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut history = Vec::new();
    let mut early = EarlyStopState::new();
    let mut best: Option<ModelParameters> = None;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        positives.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in positives.chunks(cfg.batch_size).enumerate() {
            let batch = TrainingBatch::sample(
                chunk,
                graph.num_items(),
                cfg.negatives_per_positive,
                &mut rng,
            );
            let loss = train_step(&mut params, &mut adam, &graph, &batch, cfg)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            loss_sum += loss;
        }
        let mean_loss = loss_sum / positives.len() as f64;

        let mut val_metric = None;
        let mut stop = false;
        if has_validation && epoch % cfg.eval_every == 0 {
            let metric = validation_recall(&params, &graph, &held.validation, cfg.validation_cutoff)?;
            val_metric = Some(metric);
            if early.observe(epoch, metric) {
                best = Some(params.clone());
            }
            stop = early.rounds_without_improvement >= cfg.patience;
        }
        history.push(EpochRecord {
            epoch,
            mean_loss,
            val_metric,
            seconds: started.elapsed().as_secs_f64(),
        });
        if stop {
            break;
        }
    }

    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| params.clone()),
        last: params,
        history,
        best_epoch: early.best_epoch,
    })
}

/// Records the batch objective on the tape: raw scores reshaped to one
/// row of `[positive, negatives…]` per positive, temperature-softmax
/// normalized, then summed squared error against the 1/0 labels.
pub fn batch_loss_on_tape(
    tape: &mut GradientTape,
    params: &ModelParameters,
    bound: &crate::model::BoundParams,
    graph: &Rc<InteractionGraph>,
    batch: &TrainingBatch,
    temperature: f64,
) -> Result<crate::tensor::TensorId> {
    let s = batch.negatives.first().map_or(0, Vec::len);
    let b = batch.positives.len();
    let (users, items) = batch.flattened();
    let raw = score_pairs_on_tape(tape, params, bound, graph, users, items)?;
    let grid = tape.reshape(raw, b, s + 1)?;
    let probs = tape.softmax_rows(grid, temperature)?;
    let pos = tape.slice_cols(probs, 0, 1)?;
    let negs = tape.slice_cols(probs, 1, s)?;
    let neg_pos = tape.scale(pos, -1.0);
    let one_minus_pos = tape.add_const(neg_pos, 1.0);
    let pos_sq = tape.hadamard(one_minus_pos, one_minus_pos)?;
    let neg_sq = tape.hadamard(negs, negs)?;
    let pos_term = tape.sum_all(pos_sq);
    let neg_term = tape.sum_all(neg_sq);
    tape.add(pos_term, neg_term)
}

/// One batch: score positives against fresh negatives, normalize with
/// the temperature softmax, take the squared-error loss, backpropagate,
/// and apply one adaptive-moment update. Returns the batch loss.
pub fn train_step(
    params: &mut ModelParameters,
    adam: &mut AdamState,
    graph: &Rc<InteractionGraph>,
    batch: &TrainingBatch,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut tape = GradientTape::new();
    let bound = params.bind(&mut tape);
    let loss = batch_loss_on_tape(&mut tape, params, &bound, graph, batch, cfg.temperature)?;
    let loss_value = tape.value(loss).get(0, 0);
    if !loss_value.is_finite() {
        return Ok(loss_value);
    }
    let grads = tape.backward(loss)?;
    apply_gradients(params, adam, &grads)?;
    Ok(loss_value)
}

/// Applies one optimizer step over the canonical parameter order.
pub fn apply_gradients(
    params: &mut ModelParameters,
    adam: &mut AdamState,
    grads: &GradientSet,
) -> Result<()> {
    let named = params.named_tensors_mut();
    let mut tensors: Vec<&mut Tensor2> = Vec::with_capacity(named.len());
    let mut names: Vec<String> = Vec::with_capacity(named.len());
    for (name, t) in named {
        names.push(name);
        tensors.push(t);
    }
    let mut grad_refs: Vec<&Tensor2> = Vec::with_capacity(tensors.len());
    for (i, name) in names.iter().enumerate() {
        grad_refs.push(grads.get(ParamId(i)).ok_or_else(|| {
            Error::Numeric(format!("missing gradient for parameter {i} ({name})"))
        })?);
    }
    adam.step(&mut tensors, &grad_refs)
}

/// Macro-averaged Recall@cutoff of the current parameters on the
/// held-out validation items, excluding the reduced training items
/// from each user's candidates.
pub fn validation_recall(
    params: &ModelParameters,
    graph: &InteractionGraph,
    validation: &[Vec<u32>],
    cutoff: usize,
) -> Result<f64> {
    let tables = EntityTables::new(params, graph)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (user, relevant) in validation.iter().enumerate() {
        if relevant.is_empty() {
            continue;
        }
        let ranked = rank_items(params, &tables, user, graph.items_of(user))?;
        total += recall_at(&ranked, relevant, cutoff);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Usage("validation split is empty".into()));
    }
    Ok(total / count as f64)
}
