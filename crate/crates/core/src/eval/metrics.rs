use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::data::{format_number, percentile};

fn counts(labels: &[bool]) -> (u64, u64) {
    let pos = labels.iter().filter(|&&y| y).count() as u64;
    (pos, labels.len() as u64 - pos)
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(EvalError::Undefined(format!("score {s} is not comparable")));
    }
    Ok(())
}

/// Area under the ROC curve by rank summation with midranks for ties.
///
/// Ranks are doubled so all arithmetic stays in integers until one final
/// division.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check(scores, labels)?;
    let (pos, neg) = counts(labels);
    if pos == 0 || neg == 0 {
        return Err(EvalError::Undefined("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum over positives of 2 * midrank (1-based)
    let mut rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let p = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2 += p * twice_mid;
        i = j + 1;
    }
    let (pos, neg) = (pos as u128, neg as u128);
    let u2 = rank2 - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Average precision: positives in each block of tied scores contribute
/// the block's share of recall times the precision after the block.
pub fn aucpr(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    check(scores, labels)?;
    let (pos, _) = counts(labels);
    if pos == 0 {
        return Err(EvalError::Undefined("AUCPR needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0u64, 0u64);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let block_pos = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        tp += block_pos;
        seen += (j - i + 1) as u64;
        if block_pos > 0 {
            ap += (block_pos as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j + 1;
    }
    Ok(ap)
}

/// Percentile interval over `replicates` resamples of the loans. Resamples
/// holding a single class are redrawn; more than half degenerate is an error.
pub fn bootstrap_ci<F>(
    metric: F,
    scores: &[f64],
    labels: &[bool],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), EvalError>
where
    F: Fn(&[f64], &[bool]) -> Result<f64, EvalError>,
{
    check(scores, labels)?;
    if !(0.0 < level && level < 1.0) {
        return Err(EvalError::Invalid(format!("confidence level {level} outside (0, 1)")));
    }
    if replicates == 0 {
        return Err(EvalError::Invalid("bootstrap needs at least one replicate".into()));
    }
    metric(scores, labels)?;
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(replicates);
    let mut degenerate = 0usize;
    let (mut s, mut y) = (vec![0.0; n], vec![false; n]);
    while values.len() < replicates {
        for k in 0..n {
            let i = rng.random_range(0..n);
            s[k] = scores[i];
            y[k] = labels[i];
        }
        let (p, q) = counts(&y);
        if p == 0 || q == 0 {
            degenerate += 1;
            if degenerate * 2 > replicates {
                return Err(EvalError::Degenerate {
                    degenerate,
                    replicates,
                });
            }
            continue;
        }
        values.push(metric(&s, &y)?);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let tail = (1.0 - level) / 2.0;
    Ok((percentile(&values, tail), percentile(&values, 1.0 - tail)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricLine {
    pub metric: &'static str,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub auc: MetricLine,
    pub aucpr: MetricLine,
    pub n_test: usize,
    pub scores: Vec<f64>,
    pub seed: u64,
    pub replicates: usize,
}

pub const BOOTSTRAP_REPLICATES: usize = 1000;

impl EvalReport {
    /// Point estimates plus 95% bootstrap intervals. An interval is widened to
    /// include its point estimate when resampling skews it past the point.
    pub fn compute(scores: &[f64], labels: &[bool], replicates: usize, seed: u64) -> Result<Self, EvalError> {
        let line = |metric: &'static str, f: fn(&[f64], &[bool]) -> Result<f64, EvalError>, stream: u64| {
            let point = f(scores, labels)?;
            let (lo, hi) = bootstrap_ci(f, scores, labels, replicates, 0.95, seed.wrapping_add(stream))?;
            Ok::<_, EvalError>(MetricLine {
                metric,
                point,
                ci_low: lo.min(point),
                ci_high: hi.max(point),
            })
        };
        Ok(Self {
            auc: line("auc", auc, 0)?,
            aucpr: line("aucpr", aucpr, 1)?,
            n_test: scores.len(),
            scores: scores.to_vec(),
            seed,
            replicates,
        })
    }

    /// `metric,point,ci_low,ci_high`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,point,ci_low,ci_high\n");
        for m in [&self.auc, &self.aucpr] {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                m.metric,
                format_number(m.point),
                format_number(m.ci_low),
                format_number(m.ci_high)
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "n_test = {}, bootstrap B = {}, seed = {}\n{:<8}{:>10}{:>22}\n",
            self.n_test, self.replicates, self.seed, "metric", "point", "95% interval"
        );
        for m in [&self.auc, &self.aucpr] {
            let _ = writeln!(s, "{:<8}{:>10.4}      [{:.4}, {:.4}]", m.metric, m.point, m.ci_low, m.ci_high);
        }
        s
    }
}
