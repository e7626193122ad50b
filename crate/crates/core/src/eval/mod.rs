//! Ranking metrics with bootstrap intervals, modality contribution, Shapley
//! attribution and directional exposure densities.

mod explain;
mod exposure;
mod metrics;

pub use explain::{
    contribution, histogram_density, modality_contribution, shapley_exact, shapley_sampling, Attribution,
    ContributionRecord, TabularScorer, CONTRIBUTION_EPS, EXACT_LIMIT,
};
pub use exposure::{exposed_targets, exposure_density, gaussian_kde, silverman_bandwidth, ExposureGroup, DENSITY_POINTS};
pub use metrics::{aucpr, auc, bootstrap_ci, EvalReport, MetricLine, BOOTSTRAP_REPLICATES};

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::format_number;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("{scores} scores for {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("{degenerate} single-class resamples against {replicates} replicates; the test set is too small or too imbalanced, use a larger sample")]
    Degenerate { degenerate: usize, replicates: usize },
    #[error("{0}")]
    Invalid(String),
}

/// `series,x,y` CSV from named point series.
pub fn series_csv<'a>(series: impl IntoIterator<Item = (&'a str, &'a [(f64, f64)])>) -> String {
    let mut s = String::from("series,x,y\n");
    for (name, points) in series {
        for &(x, y) in points {
            let _ = writeln!(s, "{name},{},{}", format_number(x), format_number(y));
        }
    }
    s
}
