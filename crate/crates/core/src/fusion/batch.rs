use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FusionError;
use crate::autodiff::Tensor;
use crate::data::{FeatureMatrix, LoanRecord, OwnershipRow, TransactionRow};
use crate::gnn::Adjacency;
use crate::graph::{GraphBuilder, SnapshotSet, TAU};
use crate::month::YearMonth;

/// One cohort's snapshot set with aggregation lists precomputed.
#[derive(Clone, Debug)]
pub struct CohortGraph {
    pub set: SnapshotSet,
    /// `[snapshot][layer]` aggregation edges `(from, to, weight)` in set indexing.
    agg: Vec<Vec<Vec<(usize, usize, f64)>>>,
    /// `[snapshot][node]` nodes that `node` aggregates from, over all layers.
    incoming: Vec<Vec<Vec<usize>>>,
}

impl CohortGraph {
    pub fn new(set: SnapshotSet) -> Self {
        let n = set.node_count();
        let mut agg = Vec::with_capacity(TAU);
        let mut incoming = Vec::with_capacity(TAU);
        for snap in &set.snapshots {
            let mut per_layer = vec![Vec::new(); set.layers.len()];
            let mut inc = vec![Vec::new(); n];
            for e in &snap.edges {
                let Some(li) = set.layers.iter().position(|k| k.layer == e.layer) else {
                    continue;
                };
                per_layer[li].push((e.src, e.dst, e.weight));
                inc[e.dst].push(e.src);
                if !set.layers[li].directed {
                    per_layer[li].push((e.dst, e.src, e.weight));
                    inc[e.src].push(e.dst);
                }
            }
            for list in inc.iter_mut() {
                list.sort_unstable();
                list.dedup();
            }
            agg.push(per_layer);
            incoming.push(inc);
        }
        Self { set, agg, incoming }
    }

    /// Nodes within `depth` aggregation hops of `seeds` in snapshot `s` (0-based):
    /// seeds first in the given order, the rest ascending.
    pub fn neighborhood(&self, s: usize, seeds: &[usize], depth: usize) -> Vec<usize> {
        let mut seen: BTreeSet<usize> = seeds.iter().copied().collect();
        let mut frontier: Vec<usize> = seeds.to_vec();
        for _ in 0..depth {
            let mut next = Vec::new();
            for &v in &frontier {
                for &u in &self.incoming[s][v] {
                    if seen.insert(u) {
                        next.push(u);
                    }
                }
            }
            frontier = next;
        }
        let seed_set: BTreeSet<usize> = seeds.iter().copied().collect();
        seeds
            .iter()
            .copied()
            .chain(seen.into_iter().filter(|v| !seed_set.contains(v)))
            .collect()
    }

    /// Per-layer adjacency on the induced subgraph over `nodes`.
    pub fn induced(&self, s: usize, nodes: &[usize]) -> Result<Vec<Adjacency>, FusionError> {
        let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        self.agg[s]
            .iter()
            .map(|edges| {
                let kept: Vec<(usize, usize, f64)> = edges
                    .iter()
                    .filter_map(|&(a, b, w)| Some((*local.get(&a)?, *local.get(&b)?, w)))
                    .collect();
                Ok(Adjacency::new(nodes.len(), &kept)?)
            })
            .collect()
    }
}

/// Snapshot sets for every cohort a model may score.
#[derive(Clone, Debug, Default)]
pub struct GraphIndex {
    pub cohorts: BTreeMap<YearMonth, CohortGraph>,
    /// Loan row -> (cohort month, node index) for loans that are targets.
    position: HashMap<usize, (YearMonth, usize)>,
}

impl GraphIndex {
    pub fn from_sets(sets: impl IntoIterator<Item = SnapshotSet>) -> Self {
        let mut idx = Self::default();
        for set in sets {
            for t in set.targets() {
                idx.position.insert(set.node_rows[t], (set.origination_month, t));
            }
            idx.cohorts.insert(set.origination_month, CohortGraph::new(set));
        }
        idx
    }

    /// Builds sets for every origination month among `rows`.
    pub fn build(
        loans: &[LoanRecord],
        transactions: &[TransactionRow],
        ownerships: &[OwnershipRow],
        layers: &[crate::graph::LayerKind],
        rows: &[usize],
    ) -> Result<Self, FusionError> {
        let builder = GraphBuilder::new(loans, transactions, ownerships);
        let months: BTreeSet<YearMonth> = rows.iter().map(|&r| loans[r].origination_month).collect();
        let sets = months
            .into_iter()
            .map(|m| builder.build(m, layers))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_sets(sets))
    }

    pub fn locate(&self, row: usize) -> Option<(YearMonth, usize)> {
        self.position.get(&row).copied()
    }
}

/// Model inputs for all loans: transformed features, labels and, for graph
/// models, the cohort snapshot sets.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
    pub months: Vec<YearMonth>,
    pub graph: Option<GraphIndex>,
}

#[derive(Clone, Debug)]
pub struct SnapshotInput {
    /// `[local nodes, d]`; the batch targets occupy the first rows.
    pub features: Tensor,
    /// One adjacency per model layer, in spec order.
    pub adjacency: Vec<Adjacency>,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub tabular: Tensor,
    pub labels: Vec<f64>,
    /// Empty for tabular-only models.
    pub snapshots: Vec<SnapshotInput>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn target_index(&self) -> Arc<[usize]> {
        (0..self.rows.len()).collect()
    }
}

impl Dataset {
    pub fn new(features: FeatureMatrix, labels: Vec<f64>, months: Vec<YearMonth>, graph: Option<GraphIndex>) -> Self {
        Self {
            features,
            labels,
            months,
            graph,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    fn tabular(&self, rows: &[usize]) -> Tensor {
        let data = self.features.gather(rows);
        Tensor::new(vec![rows.len(), self.features.cols()], data).expect("gathered rows match shape")
    }

    /// Groups `rows` into batches of at most `batch_size` loans from a single
    /// cohort. With a seed, membership within each cohort is shuffled;
    /// otherwise input order is kept.
    pub fn batches(
        &self,
        rows: &[usize],
        batch_size: usize,
        depth: usize,
        with_graph: bool,
        shuffle_seed: Option<u64>,
    ) -> Result<Vec<Batch>, FusionError> {
        let mut by_month: BTreeMap<YearMonth, Vec<usize>> = BTreeMap::new();
        for &r in rows {
            if r >= self.labels.len() {
                return Err(FusionError::Invalid(format!("row {r} outside dataset of {}", self.labels.len())));
            }
            by_month.entry(self.months[r]).or_default().push(r);
        }
        let mut rng = shuffle_seed.map(ChaCha8Rng::seed_from_u64);
        let mut out = Vec::new();
        for (month, mut members) in by_month {
            if let Some(rng) = rng.as_mut() {
                members.shuffle(rng);
            }
            for chunk in members.chunks(batch_size.max(1)) {
                let snapshots = if with_graph {
                    self.snapshot_inputs(month, chunk, depth)?
                } else {
                    Vec::new()
                };
                out.push(Batch {
                    rows: chunk.to_vec(),
                    tabular: self.tabular(chunk),
                    labels: chunk.iter().map(|&r| self.labels[r]).collect(),
                    snapshots,
                });
            }
        }
        Ok(out)
    }

    fn snapshot_inputs(&self, month: YearMonth, rows: &[usize], depth: usize) -> Result<Vec<SnapshotInput>, FusionError> {
        let graph = self
            .graph
            .as_ref()
            .ok_or_else(|| FusionError::Invalid("graph model needs snapshot sets".into()))?;
        let cohort = graph
            .cohorts
            .get(&month)
            .ok_or_else(|| FusionError::Invalid(format!("no snapshot set for cohort {month}")))?;
        let seeds = rows
            .iter()
            .map(|&r| match graph.locate(r) {
                Some((m, node)) if m == month => Ok(node),
                _ => Err(FusionError::Invalid(format!("loan row {r} is not a target of cohort {month}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        (0..TAU)
            .map(|s| {
                let nodes = cohort.neighborhood(s, &seeds, depth);
                let loan_rows: Vec<usize> = nodes.iter().map(|&v| cohort.set.node_rows[v]).collect();
                Ok(SnapshotInput {
                    features: self.tabular(&loan_rows),
                    adjacency: cohort.induced(s, &nodes)?,
                })
            })
            .collect()
    }
}
