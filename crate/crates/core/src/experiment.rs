//! End-to-end plumbing: split, fit the pipeline, build graphs, train and score.

use thiserror::Error;

use crate::data::{temporal_split, DataError, FeatureMatrix, LoanTable, OwnershipRow, PipelineStats, Split, SplitConfig, TransactionRow};
use crate::eval::{auc, EvalError};
use crate::fusion::{predict, train, Dataset, FusionError, GraphIndex, Model, ModelSpec, Trained};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Split, fitted pipeline statistics and transformed features for all loans.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub loans: LoanTable,
    pub transactions: Vec<TransactionRow>,
    pub ownerships: Vec<OwnershipRow>,
    pub split: Split,
    pub stats: PipelineStats,
    pub features: FeatureMatrix,
}

impl Prepared {
    /// Splits by time and fits the pipeline on the training rows.
    pub fn new(
        loans: LoanTable,
        transactions: Vec<TransactionRow>,
        ownerships: Vec<OwnershipRow>,
        split_config: &SplitConfig,
    ) -> Result<Self, ExperimentError> {
        let split = temporal_split(&loans.records, split_config)?;
        let stats = PipelineStats::fit(&loans, &split.train)?;
        Self::with_stats(loans, transactions, ownerships, split, stats)
    }

    /// Reuses already fitted statistics.
    pub fn with_stats(
        loans: LoanTable,
        transactions: Vec<TransactionRow>,
        ownerships: Vec<OwnershipRow>,
        split: Split,
        stats: PipelineStats,
    ) -> Result<Self, ExperimentError> {
        let features = stats.transform(&loans)?;
        Ok(Self {
            loans,
            transactions,
            ownerships,
            split,
            stats,
            features,
        })
    }

    pub fn labels(&self, rows: &[usize]) -> Vec<bool> {
        rows.iter().map(|&r| self.loans.records[r].default).collect()
    }

    pub fn scored_rows(&self) -> Vec<usize> {
        let s = &self.split;
        let mut rows: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        rows.sort_unstable();
        rows
    }

    /// Model inputs for `spec`; graph models get snapshot sets for every
    /// cohort in the split.
    pub fn dataset(&self, spec: &ModelSpec) -> Result<Dataset, ExperimentError> {
        let records = &self.loans.records;
        let graph = if spec.mode.uses_graph() {
            Some(GraphIndex::build(
                records,
                &self.transactions,
                &self.ownerships,
                &spec.layer_kinds(),
                &self.scored_rows(),
            )?)
        } else {
            None
        };
        Ok(Dataset::new(
            self.features.clone(),
            records.iter().map(|r| if r.default { 1.0 } else { 0.0 }).collect(),
            records.iter().map(|r| r.origination_month).collect(),
            graph,
        ))
    }
}

/// A trained model with its test-set scores.
pub struct RunOutcome {
    pub trained: Trained,
    pub test_scores: Vec<f64>,
    pub test_auc: f64,
}

pub fn run(spec: &ModelSpec, prepared: &Prepared, data: &Dataset) -> Result<RunOutcome, ExperimentError> {
    let model = Model::assemble(spec, prepared.features.cols())?;
    let trained = train(model, data, &prepared.split.train, &prepared.split.validation)?;
    let test_scores = predict(&trained.model, data, &prepared.split.test)?;
    let test_auc = auc(&test_scores, &prepared.labels(&prepared.split.test))?;
    Ok(RunOutcome {
        trained,
        test_scores,
        test_auc,
    })
}
