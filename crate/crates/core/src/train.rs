//! Mini-batch training with best-validation-loss checkpointing.

use std::fmt::Write as _;
use std::path::PathBuf;

use contactnn::{Adam, AdamConfig, Graph, NnError, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::dataset::{batch_encode, compute_class_weights, DatasetError, Entry};
use crate::model::{encoder_forward, infer, ModelConfig, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict val-loss improvement before stopping; 0
    /// disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub class_weighting: bool,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            class_weighting: true,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr.is_nan() || self.lr < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "lr must be non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}{}", dump.as_ref().map(|p| format!("; state written to {}", p.display())).unwrap_or_default())]
    Divergence {
        epoch: usize,
        batch: usize,
        dump: Option<PathBuf>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub improved: bool,
}

pub fn log_to_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
    for r in log {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy
        );
    }
    out
}

/// Where checkpoints go. `label_digest` is stamped into every file.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub best: PathBuf,
    pub divergence_dump: Option<PathBuf>,
    pub label_digest: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: ModelParams<f32>,
    /// 0 when no epoch beat the initial model.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Eval-mode predictions over a set of entries.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Weighted mean cross-entropy over the whole set.
    pub loss: f64,
    /// Row-major `[n, n_classes]` softmax probabilities.
    pub probs: Vec<f64>,
    pub labels: Vec<usize>,
    /// Row-major `[n, embed_dim]` pooled representations.
    pub pooled: Vec<f32>,
}

impl Evaluation {
    pub fn accuracy(&self, classes: usize) -> f64 {
        let preds: Vec<usize> = self
            .probs
            .chunks(classes)
            .map(crate::metrics::argmax)
            .collect();
        crate::metrics::accuracy(&self.labels, &preds)
    }
}

/// Runs the model without dropout over `entries` in order.
pub fn evaluate(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    entries: &[&Entry],
    batch_size: usize,
    class_weights: &[f64],
) -> Result<Evaluation, TrainError> {
    let c = config.n_classes;
    let mut probs = Vec::with_capacity(entries.len() * c);
    let mut pooled = Vec::with_capacity(entries.len() * config.embed_dim);
    let mut labels = Vec::with_capacity(entries.len());
    let (mut numer, mut denom) = (0.0, 0.0);
    for chunk in entries.chunks(batch_size.max(1)) {
        let batch = batch_encode(chunk, config.max_len, config.attention_mode)?;
        let (logits, emb) = infer(params, config, &batch)?;
        pooled.extend_from_slice(emb.data());
        for (row, &y) in logits.data().chunks(c).zip(&batch.labels) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let z: f64 = row.iter().map(|&v| (v as f64 - max).exp()).sum();
            let lse = max + z.ln();
            probs.extend(row.iter().map(|&v| (v as f64 - lse).exp()));
            let w = class_weights[y];
            numer += w * (lse - row[y] as f64);
            denom += w;
            labels.push(y);
        }
    }
    Ok(Evaluation {
        loss: if denom > 0.0 { numer / denom } else { 0.0 },
        probs,
        labels,
        pooled,
    })
}

/// Class weights for a training set: balanced when `weighting` is on,
/// uniform otherwise.
pub fn training_class_weights(train: &[&Entry], classes: usize, weighting: bool) -> Vec<f64> {
    if weighting {
        let labels: Vec<usize> = train.iter().map(|e| e.label).collect();
        compute_class_weights(&labels, classes)
    } else {
        vec![1.0; classes]
    }
}

/// Trains from `initial`, keeping the parameters with the lowest validation
/// loss seen so far (the initial model counts as epoch 0).
///
/// `on_epoch` sees every record after it is logged; returning `false` stops
/// training.
pub fn train(
    config: &ModelConfig,
    initial: ModelParams<f32>,
    train_set: &[&Entry],
    val_set: &[&Entry],
    tc: &TrainConfig,
    sink: Option<&CheckpointSink>,
    mut on_epoch: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome, TrainError> {
    tc.validate()?;
    config.validate()?;
    initial.check(config)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyDataset("validation"));
    }
    if let Some(e) = train_set
        .iter()
        .chain(val_set)
        .find(|e| e.label >= config.n_classes)
    {
        return Err(DatasetError::LabelOutOfRange {
            label: e.label,
            classes: config.n_classes,
        }
        .into());
    }

    let weights = training_class_weights(train_set, config.n_classes, tc.class_weighting);
    let weights_f32: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = Adam::<f32>::new(AdamConfig {
        lr: tc.lr,
        weight_decay: tc.weight_decay,
        ..AdamConfig::default()
    });

    let mut params = initial;
    let save = |p: &ModelParams<f32>, path: &PathBuf, digest: &str| -> Result<(), TrainError> {
        Checkpoint::new(config.clone(), digest, p.clone())?.save(path)?;
        Ok(())
    };

    let initial_val_loss = evaluate(&params, config, val_set, tc.batch_size, &weights)?.loss;
    let mut best_val_loss = initial_val_loss;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    if let Some(s) = sink {
        save(&params, &s.best, &s.label_digest)?;
    }

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let (mut numer, mut denom) = (0.0f64, 0.0f64);
        for (bi, chunk) in order.chunks(tc.batch_size).enumerate() {
            let entries: Vec<&Entry> = chunk.iter().map(|&i| train_set[i]).collect();
            let batch = batch_encode(&entries, config.max_len, config.attention_mode)?;
            let mut g = Graph::<f32>::new();
            let bound = params.bind(&mut g, true);
            let out = encoder_forward(&mut g, &bound, &batch, config, true, &mut rng)?;
            let loss_var = g.weighted_cross_entropy(out.logits, &batch.labels, &weights_f32);
            let loss = g.value(loss_var).item() as f64;
            if !loss.is_finite() {
                let dump = match sink {
                    Some(CheckpointSink {
                        divergence_dump: Some(path),
                        label_digest,
                        ..
                    }) => {
                        save(&params, path, label_digest)?;
                        Some(path.clone())
                    }
                    _ => None,
                };
                return Err(TrainError::Divergence {
                    epoch,
                    batch: bi,
                    dump,
                });
            }
            let batch_weight: f64 = batch.labels.iter().map(|&y| weights[y]).sum();
            numer += loss * batch_weight;
            denom += batch_weight;

            let mut grads = g.backward(loss_var);
            let grads: Vec<Option<Tensor<f32>>> =
                bound.vars.iter().map(|&v| grads.take(v)).collect();
            adam.step(
                params
                    .iter_mut()
                    .zip(&grads)
                    .filter_map(|(p, g)| g.as_ref().map(|g| (&mut p.tensor, g))),
            )?;
        }
        let train_loss = if denom > 0.0 { numer / denom } else { 0.0 };

        let val = evaluate(&params, config, val_set, tc.batch_size, &weights)?;
        let improved = val.loss < best_val_loss;
        if improved {
            best_val_loss = val.loss;
            best_params = params.clone();
            best_epoch = epoch;
            since_best = 0;
            if let Some(s) = sink {
                save(&params, &s.best, &s.label_digest)?;
            }
        } else {
            since_best += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_accuracy: val.accuracy(config.n_classes),
            improved,
        };
        log.push(record.clone());
        if !on_epoch(&record) {
            break;
        }
        if tc.patience > 0 && since_best >= tc.patience {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_val_loss,
        initial_val_loss,
        log,
        stopped_early,
    })
}
