use std::collections::BTreeMap;

use super::EvalError;
use crate::data::percentile;
use crate::graph::{Direction, Layer, SnapshotSet};

/// Points on the `[0, 1]` probability grid at which densities are reported.
pub const DENSITY_POINTS: usize = 101;

/// Silverman's rule: `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`. Falls back to
/// the standard deviation when the IQR is zero, and to a small constant for a
/// sample with no spread.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 1e-3;
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = percentile(&sorted, 0.75) - percentile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread > 0.0 {
        0.9 * spread * n.powf(-0.2)
    } else {
        1e-3
    }
}

/// Gaussian kernel density of `values` (with optional weights) at `xs`.
pub fn gaussian_kde(values: &[f64], weights: Option<&[f64]>, bandwidth: f64, xs: &[f64]) -> Vec<f64> {
    let total: f64 = weights.map_or(values.len() as f64, |w| w.iter().sum());
    let norm = 1.0 / (total * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    xs.iter()
        .map(|&x| {
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let z = (x - v) / bandwidth;
                    weights.map_or(1.0, |w| w[i]) * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExposureGroup {
    pub direction: Direction,
    pub count: usize,
    pub mean_score: f64,
    pub bandwidth: f64,
    /// `(probability, density)` pairs.
    pub density: Vec<(f64, f64)>,
    /// Loan rows in the group.
    pub rows: Vec<usize>,
}

/// Loan rows of targets that received payments from (`In`) or paid (`Out`)
/// a neighbor loan that defaulted, with the summed FT edge weight to such
/// neighbors. Both directions for `Both`.
pub fn exposed_targets(
    sets: &[SnapshotSet],
    defaulted: &[bool],
    direction: Direction,
) -> Result<BTreeMap<usize, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for set in sets {
        match set.layer(Layer::Ft) {
            Some(k) if k.directed => {}
            _ => {
                return Err(EvalError::Invalid(format!(
                    "cohort {} has no directed FT layer",
                    set.origination_month
                )))
            }
        }
        for snap in &set.snapshots {
            for e in snap.edges.iter().filter(|e| e.layer == Layer::Ft) {
                let (target, other) = match (set.target_mask[e.src], set.target_mask[e.dst]) {
                    (false, true) if direction != Direction::Out => (e.dst, e.src),
                    (true, false) if direction != Direction::In => (e.src, e.dst),
                    _ => continue,
                };
                let other_row = set.node_rows[other];
                if *defaulted.get(other_row).ok_or_else(|| {
                    EvalError::Invalid(format!("no default label for loan row {other_row}"))
                })? {
                    *out.entry(set.node_rows[target]).or_insert(0.0) += e.weight;
                }
            }
        }
    }
    Ok(out)
}

/// Density of predicted default probabilities for loans exposed to
/// defaulters in `direction`. `scores[row]` is `None` for unscored loans,
/// which are left out. With `weighted`, each loan counts in proportion to
/// its total exposure weight. Returns `None` for an empty group.
pub fn exposure_density(
    scores: &[Option<f64>],
    sets: &[SnapshotSet],
    defaulted: &[bool],
    direction: Direction,
    weighted: bool,
) -> Result<Option<ExposureGroup>, EvalError> {
    if direction == Direction::Both {
        return Err(EvalError::Invalid("exposure density takes `in` or `out`".into()));
    }
    let exposed = exposed_targets(sets, defaulted, direction)?;
    let mut rows = Vec::new();
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for (&row, &w) in &exposed {
        if let Some(Some(s)) = scores.get(row) {
            rows.push(row);
            values.push(*s);
            weights.push(if weighted { w } else { 1.0 });
        }
    }
    if values.is_empty() {
        return Ok(None);
    }
    let total: f64 = weights.iter().sum();
    let mean_score = values.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let bandwidth = silverman_bandwidth(&values);
    let xs: Vec<f64> = (0..DENSITY_POINTS).map(|i| i as f64 / (DENSITY_POINTS - 1) as f64).collect();
    let ys = gaussian_kde(&values, weighted.then_some(weights.as_slice()), bandwidth, &xs);
    Ok(Some(ExposureGroup {
        direction,
        count: rows.len(),
        mean_score,
        bandwidth,
        density: xs.into_iter().zip(ys).collect(),
        rows,
    }))
}
