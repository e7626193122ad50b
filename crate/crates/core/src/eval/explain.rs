use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::autodiff::{Tape, Tensor};
use crate::fusion::{Batch, FusionError, Model};

/// Stability constant in the contribution denominators.
pub const CONTRIBUTION_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContributionRecord {
    pub c_network: f64,
    pub c_tabular: f64,
    pub norm_network: f64,
    pub norm_tabular: f64,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative norms of the two attended representations of one instance.
pub fn contribution(r_network: &[f64], r_tabular: &[f64], eps: f64) -> ContributionRecord {
    let (n, t) = (l2(r_network), l2(r_tabular));
    ContributionRecord {
        c_network: n / (t + n + eps),
        c_tabular: t / (t + n + eps),
        norm_network: n,
        norm_tabular: t,
    }
}

/// Per-loan contributions over `batches`, in batch order.
pub fn modality_contribution(model: &Model, batches: &[Batch]) -> Result<Vec<ContributionRecord>, FusionError> {
    let mut out = Vec::new();
    for batch in batches {
        let mut tape = Tape::new();
        let vars = model.params.bind_frozen(&mut tape);
        let (r_n, r_t) = model.attended_pair(&mut tape, &vars, batch)?;
        let (rn, rt) = (tape.value(r_n), tape.value(r_t));
        let b = batch.len();
        let (wn, wt) = (rn.len() / b, rt.len() / b);
        for i in 0..b {
            out.push(contribution(
                &rn.data()[i * wn..(i + 1) * wn],
                &rt.data()[i * wt..(i + 1) * wt],
                CONTRIBUTION_EPS,
            ));
        }
    }
    Ok(out)
}

/// Histogram densities of `values` over `[0, 1]` as `(bin centre, density)`.
pub fn histogram_density(values: &[f64], bins: usize) -> Vec<(f64, f64)> {
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let width = 1.0 / bins as f64;
    let n = values.len().max(1) as f64;
    counts
        .iter()
        .enumerate()
        .map(|(k, &c)| ((k as f64 + 0.5) * width, c as f64 / (n * width)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    pub values: Vec<f64>,
    /// Mean model output over the background.
    pub base: f64,
    pub prediction: f64,
    pub warnings: Vec<String>,
}

/// Largest feature count accepted by [`shapley_exact`].
pub const EXACT_LIMIT: usize = 20;

fn check_inputs(instance: &[f64], background: &[Vec<f64>]) -> Result<(), EvalError> {
    if background.is_empty() {
        return Err(EvalError::Invalid("Shapley background is empty".into()));
    }
    if let Some(b) = background.iter().find(|b| b.len() != instance.len()) {
        return Err(EvalError::Invalid(format!(
            "background row has {} features, instance has {}",
            b.len(),
            instance.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Exact Shapley values by enumerating every coalition. The value of a
/// coalition is the mean output with coalition features from `instance`
/// and the rest from each background row.
pub fn shapley_exact<F>(f: F, instance: &[f64], background: &[Vec<f64>]) -> Result<Attribution, EvalError>
where
    F: Fn(&[Vec<f64>]) -> Vec<f64>,
{
    check_inputs(instance, background)?;
    let d = instance.len();
    if d > EXACT_LIMIT {
        return Err(EvalError::Invalid(format!(
            "exact Shapley enumeration refused for {d} features (limit {EXACT_LIMIT}); use sampling"
        )));
    }
    let coalitions = 1usize << d;
    let mut value = vec![0.0; coalitions];
    // evaluate in chunks to bound memory
    let per_chunk = (4096 / background.len()).max(1);
    let mut mask = 0;
    while mask < coalitions {
        let end = (mask + per_chunk).min(coalitions);
        let mut rows = Vec::with_capacity((end - mask) * background.len());
        for m in mask..end {
            for b in background {
                rows.push((0..d).map(|j| if m >> j & 1 == 1 { instance[j] } else { b[j] }).collect());
            }
        }
        let out = f(&rows);
        for (k, m) in (mask..end).enumerate() {
            value[m] = mean(&out[k * background.len()..(k + 1) * background.len()]);
        }
        mask = end;
    }
    // weight(|S|) = |S|! (d - |S| - 1)! / d!
    let mut weight = vec![0.0; d];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut x = 1.0 / d as f64;
        // 1 / (d * C(d-1, s))
        for k in 0..s {
            x *= (k + 1) as f64 / (d - 1 - k) as f64;
        }
        *w = x;
    }
    let mut phi = vec![0.0; d];
    for m in 0..coalitions {
        let size = m.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if m >> i & 1 == 0 {
                *p += weight[size] * (value[m | 1 << i] - value[m]);
            }
        }
    }
    Ok(Attribution {
        values: phi,
        base: value[0],
        prediction: value[coalitions - 1],
        warnings: Vec::new(),
    })
}

/// Monte-Carlo permutation estimate: each sample walks a random feature
/// order from a random background row to the instance.
pub fn shapley_sampling<F>(
    f: F,
    instance: &[f64],
    background: &[Vec<f64>],
    n_samples: usize,
    seed: u64,
) -> Result<Attribution, EvalError>
where
    F: Fn(&[Vec<f64>]) -> Vec<f64>,
{
    check_inputs(instance, background)?;
    if n_samples == 0 {
        return Err(EvalError::Invalid("Shapley sampling needs at least one permutation".into()));
    }
    let d = instance.len();
    let mut warnings = Vec::new();
    if n_samples < d {
        warnings.push(format!(
            "{n_samples} permutations for {d} features; some features may be visited rarely"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = vec![0.0; d];
    let mut perm: Vec<usize> = (0..d).collect();
    let per_chunk = (8192 / (d + 1)).max(1);
    let mut done = 0;
    while done < n_samples {
        let take = per_chunk.min(n_samples - done);
        let mut rows = Vec::with_capacity(take * (d + 1));
        let mut orders = Vec::with_capacity(take);
        for _ in 0..take {
            perm.shuffle(&mut rng);
            let mut z = background[rng.random_range(0..background.len())].clone();
            rows.push(z.clone());
            for &j in &perm {
                z[j] = instance[j];
                rows.push(z.clone());
            }
            orders.push(perm.clone());
        }
        let out = f(&rows);
        for (s, order) in orders.iter().enumerate() {
            let path = &out[s * (d + 1)..(s + 1) * (d + 1)];
            for (k, &j) in order.iter().enumerate() {
                phi[j] += path[k + 1] - path[k];
            }
        }
        done += take;
    }
    phi.iter_mut().for_each(|p| *p /= n_samples as f64);
    let base = mean(&f(background));
    let prediction = f(&[instance.to_vec()])[0];
    Ok(Attribution {
        values: phi,
        base,
        prediction,
        warnings,
    })
}

/// Scores tabular rows for one loan of `batch` while its network embeddings
/// stay at their actual values.
pub struct TabularScorer<'a> {
    model: &'a Model,
    embeddings: Vec<Tensor>,
}

impl<'a> TabularScorer<'a> {
    pub fn new(model: &'a Model, batch: &Batch, index: usize) -> Result<Self, FusionError> {
        if index >= batch.len() {
            return Err(FusionError::Invalid(format!("instance {index} outside batch of {}", batch.len())));
        }
        let mut tape = Tape::new();
        let vars = model.params.bind_frozen(&mut tape);
        let embeddings = model
            .embed(&mut tape, &vars, batch, false)?
            .into_iter()
            .map(|v| {
                let t = tape.value(v);
                Tensor::row_vector(t.row(index))
            })
            .collect();
        Ok(Self { model, embeddings })
    }

    pub fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, FusionError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let k = rows.len();
        let d = rows[0].len();
        if d != self.model.input_dim {
            return Err(FusionError::FeatureMismatch {
                expected: self.model.input_dim,
                got: d,
            });
        }
        let mut tape = Tape::new();
        let vars = self.model.params.bind_frozen(&mut tape);
        let x = tape.constant(Tensor::new(vec![k, d], rows.concat())?);
        let emb = self
            .embeddings
            .iter()
            .map(|e| {
                let data: Vec<f64> = std::iter::repeat_n(e.data(), k).flatten().copied().collect();
                Ok(tape.constant(Tensor::new(vec![k, e.len()], data)?))
            })
            .collect::<Result<Vec<_>, FusionError>>()?;
        let p = self.model.head(&mut tape, &vars, x, &emb, false)?;
        Ok(tape.value(p).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_norms_split_evenly() {
        let c = contribution(&[3.0, 4.0], &[0.0, 5.0], CONTRIBUTION_EPS);
        assert!((c.c_network - 0.5).abs() < 1e-9 && (c.c_tabular - 0.5).abs() < 1e-9);
        let c = contribution(&[1.0], &[0.0], CONTRIBUTION_EPS);
        assert!((c.c_network - 1.0).abs() < 1e-7);
    }

    #[test]
    fn additive_model_single_background() {
        let beta = [2.0, -1.0, 0.5];
        let f = |rows: &[Vec<f64>]| -> Vec<f64> {
            rows.iter().map(|r| r.iter().zip(&beta).map(|(x, b)| x * b).sum()).collect()
        };
        let x = [1.0, 2.0, 3.0];
        let b = vec![vec![0.5, 0.0, 1.0]];
        let a = shapley_exact(f, &x, &b).unwrap();
        for i in 0..3 {
            assert!((a.values[i] - beta[i] * (x[i] - b[0][i])).abs() < 1e-12);
        }
    }

    #[test]
    fn refuses_wide_exact_mode_and_warns_on_few_samples() {
        let f = |rows: &[Vec<f64>]| vec![0.0; rows.len()];
        assert!(shapley_exact(f, &[0.0; 21], &[vec![0.0; 21]]).is_err());
        let a = shapley_sampling(f, &[0.0; 4], &[vec![0.0; 4]], 2, 0).unwrap();
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let h = histogram_density(&[0.1, 0.2, 0.95, 1.0], 10);
        let area: f64 = h.iter().map(|(_, y)| y * 0.1).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }
}
