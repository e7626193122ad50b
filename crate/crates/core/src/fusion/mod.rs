//! Unimodal and bimodal credit models, the four fusion strategies, the
//! tabular baselines and the training loop.

mod batch;
mod check;
mod model;
mod spec;
mod train;

pub use batch::{Batch, CohortGraph, Dataset, GraphIndex, SnapshotInput};
pub use check::{all_variants, loss_grad_check, toy_batch};
pub use model::{cross_attention, AttentionBlock, Dense, Mlp, Model, Tokens};
pub use spec::{
    format_layers, parse_layers, EdgeMode, Mode, ModelSpec, QuerySide, Strategy, TrainSettings, MODEL_KEYS,
};
pub use train::{predict, train, write_history, EpochRecord, History, Trained};

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::config::ConfigError;
use crate::eval::EvalError;
use crate::graph::GraphError;

/// Probabilities are kept inside `[CLAMP, 1 - CLAMP]` before taking logs.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("{junction}: {detail}")]
    Dimension { junction: String, detail: String },
    #[error("model expects {expected} input features, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("{0} has no attention block; modality contribution needs simple-concat-att or hybrid-concat-att")]
    NoAttention(Strategy),
    #[error("non-finite training loss in epoch {epoch}; last finite epoch: {}", last_finite.map_or("none".to_string(), |e| e.to_string()))]
    Diverged { epoch: usize, last_finite: Option<usize> },
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Mean binary cross-entropy of `probs` (`[n, 1]`) against 0/1 `labels`.
pub fn bce_loss(tape: &mut Tape, probs: Var, labels: &[f64]) -> Result<Var, FusionError> {
    let n = tape.value(probs).len();
    if n != labels.len() {
        return Err(FusionError::LengthMismatch {
            predictions: n,
            labels: labels.len(),
        });
    }
    if n == 0 {
        return Err(FusionError::Invalid("empty batch".into()));
    }
    let p = tape.clamp(probs, CLAMP, 1.0 - CLAMP)?;
    let p = tape.reshape(p, &[n, 1])?;
    let y = tape.constant(Tensor::column(labels));
    let not_y = tape.constant(Tensor::column(&labels.iter().map(|v| 1.0 - v).collect::<Vec<_>>()));
    let ones = tape.constant(Tensor::filled(&[n, 1], 1.0));
    let log_p = tape.log(p)?;
    let neg_p = tape.scale(p, -1.0)?;
    let q = tape.add(ones, neg_p)?;
    let log_q = tape.log(q)?;
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let s = tape.add(a, b)?;
    let total = tape.sum(s)?;
    Ok(tape.scale(total, -1.0 / n as f64)?)
}

/// Plain-float version of [`bce_loss`].
pub fn bce(probs: &[f64], labels: &[f64]) -> Result<f64, FusionError> {
    if probs.len() != labels.len() {
        return Err(FusionError::LengthMismatch {
            predictions: probs.len(),
            labels: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(FusionError::Invalid("empty batch".into()));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(CLAMP, 1.0 - CLAMP);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum();
    Ok(-total / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss_of(p: &[f64], y: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::column(p));
        let l = bce_loss(&mut tape, v, y).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn half_probability_costs_ln_two() {
        assert!((loss_of(&[0.5], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mixed_pair_matches_hand_arithmetic() {
        let l = loss_of(&[0.9, 0.2], &[1.0, 0.0]);
        assert!((l - 0.164252).abs() < 1e-6, "{l}");
        assert!((bce(&[0.9, 0.2], &[1.0, 0.0]).unwrap() - l).abs() < 1e-15);
    }

    #[test]
    fn clamped_loss_is_finite_at_extremes() {
        assert!(loss_of(&[1.0, 0.0], &[1.0, 0.0]) < 1e-6);
        assert!(loss_of(&[0.0, 1.0], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn length_mismatch_rejected() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::column(&[0.5, 0.5]));
        assert!(matches!(bce_loss(&mut tape, v, &[1.0]), Err(FusionError::LengthMismatch { .. })));
    }
}
