use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{Batch, Dataset};
use super::model::Model;
use super::{bce_loss, FusionError};
use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::data::format_number;
use crate::eval::auc;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when no validation rows were given.
    pub val_auc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

pub struct Trained {
    pub model: Model,
    pub history: History,
}

fn run_batches(model: &Model, batches: &[Batch]) -> Result<Vec<(usize, f64)>, FusionError> {
    let mut out = Vec::new();
    for b in batches {
        let p = model.predict_batch(b)?;
        out.extend(b.rows.iter().copied().zip(p));
    }
    Ok(out)
}

fn batch_auc(model: &Model, batches: &[Batch]) -> Result<f64, FusionError> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for b in batches {
        scores.extend(model.predict_batch(b)?);
        labels.extend(b.labels.iter().map(|&y| y > 0.5));
    }
    Ok(auc(&scores, &labels)?)
}

/// Mini-batch Adam with early stopping on validation AUC. Returns the
/// parameters of the best validation epoch (the last epoch without
/// validation rows).
pub fn train(mut model: Model, data: &Dataset, train_rows: &[usize], val_rows: &[usize]) -> Result<Trained, FusionError> {
    let settings = model.spec.train;
    if train_rows.is_empty() {
        return Err(FusionError::Invalid("no training rows".into()));
    }
    if data.input_dim() != model.input_dim {
        return Err(FusionError::FeatureMismatch {
            expected: model.input_dim,
            got: data.input_dim(),
        });
    }
    let graph = model.spec.mode.uses_graph();
    let depth = model.spec.depth;
    let batches = data.batches(train_rows, settings.batch_size, depth, graph, Some(settings.seed))?;
    let val = data.batches(val_rows, settings.batch_size, depth, graph, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: settings.learning_rate,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut history = History::default();
    let mut best: Option<(f64, crate::autodiff::ParamSet)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..batches.len()).collect();
    for epoch in 1..=settings.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for &bi in &order {
            let batch = &batches[bi];
            let mut tape = Tape::with_seed(rng.random());
            let vars = model.params.bind(&mut tape);
            let probs = model.forward(&mut tape, &vars, batch, true)?;
            let loss = bce_loss(&mut tape, probs, &batch.labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(FusionError::Diverged {
                    epoch,
                    last_finite: history.epochs.last().map(|e| e.epoch),
                });
            }
            loss_sum += value * batch.len() as f64;
            count += batch.len();
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            adam.step(&mut model.params, &g);
        }
        let val_auc = if val.is_empty() { f64::NAN } else { batch_auc(&model, &val)? };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / count as f64,
            val_auc,
        });
        if val.is_empty() {
            history.best_epoch = epoch;
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| val_auc > *b) {
            best = Some((val_auc, model.params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= settings.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(Trained { model, history })
}

/// Default probabilities for `rows`, in the order given.
pub fn predict(model: &Model, data: &Dataset, rows: &[usize]) -> Result<Vec<f64>, FusionError> {
    if data.input_dim() != model.input_dim {
        return Err(FusionError::FeatureMismatch {
            expected: model.input_dim,
            got: data.input_dim(),
        });
    }
    let batches = data.batches(
        rows,
        model.spec.train.batch_size,
        model.spec.depth,
        model.spec.mode.uses_graph(),
        None,
    )?;
    let scored = run_batches(model, &batches)?;
    let mut by_row = std::collections::HashMap::with_capacity(scored.len());
    by_row.extend(scored);
    Ok(rows.iter().map(|r| by_row[r]).collect())
}

/// `epoch,train_loss,val_auc` CSV.
pub fn write_history(history: &History, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_auc")?;
    for e in &history.epochs {
        let auc = if e.val_auc.is_nan() { String::new() } else { format_number(e.val_auc) };
        writeln!(out, "{},{},{}", e.epoch, format_number(e.train_loss), auc)?;
    }
    Ok(())
}
