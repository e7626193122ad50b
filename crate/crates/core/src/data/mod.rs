//! Loan tables, relation rows, the cleaning pipeline, temporal splitting and
//! the synthetic contagion generator.

mod io;
mod pipeline;
mod records;
mod split;
pub mod synth;

pub use io::{
    format_number, read_loans, read_ownerships, read_transactions, write_loans, write_ownerships,
    write_transactions,
};
pub use pipeline::{
    cap_outliers, handle_nulls, minmax_scale, null_rule, pearson, percentile, prune_correlated, Capped,
    Caps, FeatureAction, FeatureStats, MinMax, NullFill, NullOutcome, NullRule, OutputColumn,
    PipelineStats, CORRELATION_THRESHOLD, NA_LEVEL,
};
pub use records::{
    CompanySize, FeatureKind, FeatureMatrix, LoanRecord, LoanTable, OwnershipRow, RawColumn, TransactionRow,
};
pub use split::{temporal_split, Split, SplitConfig, SPLIT_KEYS};
pub use synth::{generate_synthetic, Contagion, SynthConfig, SynthData, SYNTH_KEYS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("unknown feature kind `{0}` (expected categorical|numerical)")]
    UnknownFeatureKind(String),
    #[error("no loans originate in {0}")]
    EmptyCohort(String),
    #[error("test split is empty after excluding companies seen in training")]
    EmptyTest,
    #[error("infeasible generator config: {reason} (achieved default rate {achieved:.4})")]
    Infeasible { reason: String, achieved: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(io) => DataError::Io(io),
            other => DataError::Csv {
                line,
                message: format!("{other:?}"),
            },
        }
    }
}
