use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{Batch, SnapshotInput};
use super::model::Model;
use super::spec::{Mode, ModelSpec, Strategy};
use super::{bce_loss, FusionError};
use crate::autodiff::{grad_check, Tensor};
use crate::gnn::{Adjacency, GnnKind};
use crate::graph::{Layer, TAU};

/// Every assembled variant of `base`: the eight bimodal strategy and GNN
/// pairs, both unimodal GNNs, then LR and DNN.
pub fn all_variants(base: &ModelSpec) -> Vec<ModelSpec> {
    let mut out = Vec::new();
    for gnn in [GnnKind::Gat, GnnKind::Gin] {
        for strategy in Strategy::ALL {
            out.push(ModelSpec {
                mode: Mode::Bimodal,
                gnn,
                strategy,
                ..base.clone()
            });
        }
    }
    for gnn in [GnnKind::Gat, GnnKind::Gin] {
        out.push(ModelSpec {
            mode: Mode::Unimodal,
            gnn,
            ..base.clone()
        });
    }
    for mode in [Mode::BaselineLr, Mode::BaselineDnn] {
        out.push(ModelSpec { mode, ..base.clone() });
    }
    out
}

/// A random batch over `nodes` local nodes whose first `targets` rows are
/// the scored loans, with one random edge set per layer and snapshot.
/// Directed layers get one-way edges; undirected ones get both directions.
pub fn toy_batch(nodes: usize, targets: usize, input_dim: usize, layers: &[(Layer, bool)], seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = targets.clamp(1, nodes);
    let features: Vec<f64> = (0..nodes * input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let features = Tensor::new(vec![nodes, input_dim], features).expect("toy feature shape");
    let snapshots = (0..TAU)
        .map(|_| SnapshotInput {
            features: features.clone(),
            adjacency: layers
                .iter()
                .map(|&(_, directed)| {
                    let mut edges = Vec::new();
                    for t in 0..targets {
                        for j in targets..nodes {
                            if rng.random::<f64>() < 0.35 {
                                let w = rng.random_range(0.5..3.0);
                                let (a, b) = if rng.random::<bool>() { (j, t) } else { (t, j) };
                                edges.push((a, b, w));
                                if !directed {
                                    edges.push((b, a, w));
                                }
                            }
                        }
                    }
                    Adjacency::new(nodes, &edges).expect("toy edges are valid")
                })
                .collect(),
        })
        .collect();
    let tabular = Tensor::new(
        vec![targets, input_dim],
        features.data()[..targets * input_dim].to_vec(),
    )
    .expect("toy tabular shape");
    Batch {
        rows: (0..targets).collect(),
        tabular,
        labels: (0..targets).map(|i| (i % 2) as f64).collect(),
        snapshots,
    }
}

/// Worst relative error between backpropagated and finite-difference
/// gradients of the mean BCE loss on `batch`, taken over all parameters.
/// Runs in inference mode so dropout stays off.
pub fn loss_grad_check(model: &Model, batch: &Batch, epsilon: f64) -> Result<f64, FusionError> {
    let labels = batch.labels.clone();
    grad_check(
        |tape, vars| {
            let p = model.forward(tape, vars, batch, false)?;
            bce_loss(tape, p, &labels)
        },
        model.params.tensors(),
        epsilon,
    )
}
