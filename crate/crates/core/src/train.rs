//! Mini-batch training with validation-based model selection, and scoring.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledPair, Record};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::metrics::f1_at_threshold;
use crate::model::{Model, PairFeatures};
use crate::nn::{AdamConfig, AdamState, Gradients};

/// Batches are cut into at most this many chunks for parallel gradient
/// computation. Fixed so the summation order, and hence every bit of the
/// result, does not depend on the thread count.
const GRADIENT_CHUNKS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        let lr = self.adam.learning_rate;
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {lr} must be finite and non-negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training cross-entropy at the start-of-epoch parameters of each batch.
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    /// Validation F1 at threshold 0.5, as a fraction.
    pub valid_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid_f1: Option<f64>,
}

/// Embeds every pair once; embeddings are frozen so this is reused across
/// epochs.
pub fn featurize_pairs(model: &Model, store: &EmbeddingStore, pairs: &[LabeledPair]) -> Result<Vec<(PairFeatures, bool)>> {
    pairs
        .par_iter()
        .map(|p| Ok((model.featurize(store, &p.left, &p.right)?, p.label)))
        .collect()
}

fn check_schema(model: &Model, dataset: &Dataset) -> Result<()> {
    if dataset.schema.len() != model.config().attributes {
        return Err(Error::shape("dataset schema width", model.config().attributes, dataset.schema.len()));
    }
    Ok(())
}

/// Trains on `dataset.train`, selecting the epoch with the best validation
/// F1 at 0.5 (the later epoch on ties; the last epoch if there is no
/// validation split).
pub fn train(model: Model, dataset: &Dataset, store: &EmbeddingStore, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with_observer(model, dataset, store, config, |_| {})
}

pub fn train_with_observer(
    model: Model,
    dataset: &Dataset,
    store: &EmbeddingStore,
    config: &TrainConfig,
    observer: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory)> {
    check_schema(&model, dataset)?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let train = featurize_pairs(&model, store, &dataset.train)?;
    let valid = featurize_pairs(&model, store, &dataset.valid)?;
    train_on_features(model, &train, &valid, config, observer)
}

pub fn train_on_features(
    mut model: Model,
    train: &[(PairFeatures, bool)],
    valid: &[(PairFeatures, bool)],
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut losses = vec![0.0; train.len()];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(Model, usize, Option<f64>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (grads, batch_losses) = batch_gradient(&model, train, batch)?;
            for (&i, loss) in batch.iter().zip(batch_losses) {
                losses[i] = loss;
            }
            adam.step(model.params_mut(), &grads)?;
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let (valid_loss, valid_f1) = if valid.is_empty() {
            (None, None)
        } else {
            let (loss, f1) = validation_metrics(&model, valid)?;
            (Some(loss), Some(f1))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            valid_f1,
        };
        observer(&record);
        history.push(record);

        let improves = match (&best, valid_f1) {
            (None, _) | (_, None) => true,
            (Some((_, _, Some(prev))), Some(f1)) => f1 >= *prev,
            (Some((_, _, None)), Some(_)) => true,
        };
        if improves {
            best = Some((model.clone(), epoch, valid_f1));
        }
    }
    let (best_model, best_epoch, best_valid_f1) = best.expect("at least one epoch");
    Ok((
        best_model,
        TrainHistory {
            epochs: history,
            best_epoch,
            best_valid_f1,
        },
    ))
}

/// Mean gradient over `batch` and the per-example losses, in batch order.
fn batch_gradient(model: &Model, data: &[(PairFeatures, bool)], batch: &[usize]) -> Result<(Gradients, Vec<f64>)> {
    let weight = 1.0 / batch.len() as f64;
    let chunk = batch.len().div_ceil(GRADIENT_CHUNKS);
    let parts: Vec<(Gradients, Vec<f64>)> = batch
        .par_chunks(chunk)
        .map(|idx| {
            let mut grads = model.params().zero_gradients();
            let mut losses = Vec::with_capacity(idx.len());
            for &i in idx {
                let (features, label) = &data[i];
                let (_, cache) = model.forward(features)?;
                losses.push(model.backward_into(&cache, *label, weight, &mut grads)?);
            }
            Ok((grads, losses))
        })
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let (mut total, mut losses) = parts.next().expect("non-empty batch");
    for (g, l) in parts {
        total.accumulate(&g);
        losses.extend(l);
    }
    Ok((total, losses))
}

fn validation_metrics(model: &Model, valid: &[(PairFeatures, bool)]) -> Result<(f64, f64)> {
    let scored: Vec<(f64, f64)> = valid
        .par_iter()
        .map(|(f, label)| {
            let (score, cache) = model.forward(f)?;
            let (loss, _) = crate::nn::cross_entropy(cache.logits(), *label)?;
            Ok((score, loss))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let labels: Vec<bool> = valid.iter().map(|v| v.1).collect();
    let loss = scored.iter().map(|s| s.1).sum::<f64>() / valid.len() as f64;
    Ok((loss, f1_at_threshold(&scores, &labels, 0.5)?.f1))
}

/// Scores already-featurized pairs, in order.
pub fn score_features(model: &Model, features: &[PairFeatures]) -> Result<Vec<f64>> {
    features.par_iter().map(|f| model.score(f)).collect()
}

/// Match scores for record pairs, in input order.
pub fn predict_scores(model: &Model, store: &EmbeddingStore, pairs: &[(&Record, &Record)]) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|(l, r)| model.score(&model.featurize(store, l, r)?))
        .collect()
}

/// Scores of a labeled split plus its labels.
pub fn score_split(model: &Model, store: &EmbeddingStore, pairs: &[LabeledPair]) -> Result<(Vec<f64>, Vec<bool>)> {
    let refs: Vec<(&Record, &Record)> = pairs.iter().map(|p| (&p.left, &p.right)).collect();
    let scores = predict_scores(model, store, &refs)?;
    Ok((scores, pairs.iter().map(|p| p.label).collect()))
}
