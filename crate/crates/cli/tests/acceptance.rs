//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not on the known-red list.
//!
//! `cargo test -p multicredit-cli --test acceptance` runs all of them;
//! numbers after `--` select a subset, e.g. `-- 2 9`.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use multicredit::autodiff::{ParamSet, Tape, Tensor};
use multicredit::data::{
    generate_synthetic, null_rule, temporal_split, CompanySize, FeatureKind, LoanRecord, LoanTable, NullRule,
    PipelineStats, RawColumn, SplitConfig, SynthConfig,
};
use multicredit::eval::{
    auc, aucpr, exposure_density, modality_contribution, shapley_exact, shapley_sampling, CONTRIBUTION_EPS,
};
use multicredit::experiment::{run, Prepared};
use multicredit::fusion::{
    all_variants, bce, bce_loss, cross_attention, loss_grad_check, toy_batch, AttentionBlock, EdgeMode, Mode,
    ModelSpec, Strategy, TrainSettings,
};
use multicredit::gnn::{
    attention_matrix, gat_attention, gat_forward, gin_aggregate, gin_forward, mean_aggregate, Adjacency, Epsilon,
    GatHead, GatParams, GinParams, GnnConfig, GnnKind, GnnStack, HeadCombine, LEAKY_SLOPE,
};
use multicredit::graph::{Direction, GraphBuilder, Layer, LayerKind};
use multicredit::{Model, YearMonth};
use multicredit_cli::run_from;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Check = Result<String, String>;

/// Sub-criteria expected to fail, with the analysis in the decisions ledger.
/// They still print as FAIL; a criterion only stops blocking when every
/// failing part is listed here.
const KNOWN_RED: &[(&str, &str)] = &[(
    "9b",
    "bimodal does not beat the unimodal GNN by 0.01 on the synthetic data; see notes/decisions.md",
)];

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Vec<Vec<f64>> {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64, weighted: bool) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && rng.random::<f64>() < p {
                edges.push((s, d, if weighted { rng.random_range(0.3..4.0) } else { 1.0 }));
            }
        }
    }
    edges
}

fn tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).expect("rectangular rows")
}

fn proj(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    (0..w[0].len()).map(|k| x.iter().zip(w).map(|(v, row)| v * row[k]).sum()).collect()
}

fn proj_t(x: &[f64], w: &Tensor) -> Vec<f64> {
    (0..w.cols()).map(|c| x.iter().enumerate().map(|(r, v)| v * w.get2(r, c)).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let top = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn max_diff(t: &Tensor, rows: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, r) in rows.iter().enumerate() {
        for (k, v) in r.iter().enumerate() {
            worst = worst.max((t.get2(i, k) - v).abs());
        }
    }
    worst
}

fn small_spec() -> ModelSpec {
    ModelSpec {
        hidden: 4,
        heads: 2,
        net_a: vec![8],
        net_b: vec![8],
        fnn: vec![6],
        dnn: vec![6],
        token_width: 4,
        key_dim: 3,
        dropout: 0.0,
        ..ModelSpec::default()
    }
}

fn c1_gradients() -> Check {
    let start = Instant::now();
    let batch = toy_batch(10, 4, 5, &[(Layer::Ft, true), (Layer::Co, false)], 4);
    let variants = all_variants(&small_spec());
    let bimodal = variants.iter().filter(|s| s.mode == Mode::Bimodal).count();
    let unimodal = variants.iter().filter(|s| s.mode == Mode::Unimodal).count();
    require(bimodal == 8 && unimodal == 2 && variants.len() == 12, || {
        format!("{bimodal} bimodal, {unimodal} unimodal, {} total variants", variants.len())
    })?;
    let mut worst = (0.0, String::new());
    for spec in &variants {
        let model = Model::assemble(spec, 5).map_err(|e| e.to_string())?;
        let err = loss_grad_check(&model, &batch, 1e-4).map_err(|e| e.to_string())?;
        if err > worst.0 {
            worst = (err, spec.label());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    require(worst.0 < 1e-3, || format!("{}: relative error {:.2e}", worst.1, worst.0))?;
    require(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("12 variants, worst relative error {:.2e} ({}), {secs:.1} s", worst.0, worst.1))
}

struct HeadValues {
    w: Vec<Vec<f64>>,
    a_dst: Vec<f64>,
    a_src: Vec<f64>,
}

fn gat_oracle(x: &[Vec<f64>], edges: &[(usize, usize, f64)], h: &HeadValues) -> Vec<Vec<f64>> {
    let wh: Vec<Vec<f64>> = x.iter().map(|r| proj(r, &h.w)).collect();
    let leaky = |v: f64| if v > 0.0 { v } else { LEAKY_SLOPE * v };
    (0..x.len())
        .map(|i| {
            let mut senders = vec![(i, 1.0)];
            senders.extend(edges.iter().filter(|e| e.1 == i).map(|e| (e.0, e.2)));
            let e: Vec<f64> = senders
                .iter()
                .map(|&(j, w)| leaky(dot(&h.a_dst, &wh[i]) + dot(&h.a_src, &wh[j])) + w.ln())
                .collect();
            let alpha = softmax(&e);
            (0..h.w[0].len())
                .map(|k| senders.iter().zip(&alpha).map(|(&(j, _), a)| a * wh[j][k]).sum())
                .collect()
        })
        .collect()
}

fn c2_gat(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (n, d, dim, heads) = (rng.random_range(1..9), rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..4));
        let x = matrix(rng, n, d);
        let edges = random_edges(rng, n, 0.35, trial % 2 == 0);
        let values: Vec<HeadValues> = (0..heads)
            .map(|_| HeadValues {
                w: matrix(rng, d, dim),
                a_dst: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                a_src: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let mut ps = ParamSet::new();
        let ids = values
            .iter()
            .enumerate()
            .map(|(k, v)| GatHead {
                w: ps.add(format!("w{k}"), tensor(&v.w)),
                a_dst: ps.add(format!("d{k}"), Tensor::column(&v.a_dst)),
                a_src: ps.add(format!("s{k}"), Tensor::column(&v.a_src)),
            })
            .collect();
        let combine = if trial % 3 == 0 { HeadCombine::Concat } else { HeadCombine::Average };
        let params = GatParams {
            heads: ids,
            combine,
            slope: LEAKY_SLOPE,
            dropout: 0.0,
        };
        let mut tape = Tape::new();
        let vars = ps.bind_frozen(&mut tape);
        let xv = tape.constant(tensor(&x));
        let adj = Adjacency::new(n, &edges).map_err(|e| e.to_string())?;
        let z = gat_forward(&mut tape, &vars, xv, &adj, &params, false).map_err(|e| e.to_string())?;
        let per: Vec<_> = values.iter().map(|v| gat_oracle(&x, &edges, v)).collect();
        let expect: Vec<Vec<f64>> = (0..n)
            .map(|i| match combine {
                HeadCombine::Concat => per.iter().flat_map(|h| h[i].clone()).collect(),
                HeadCombine::Average => (0..dim).map(|k| per.iter().map(|h| h[i][k]).sum::<f64>() / heads as f64).collect(),
            })
            .collect();
        worst = worst.max(max_diff(tape.value(z), &expect));
    }
    Ok(worst)
}

fn c2_gin(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (n, d, hid, out) = (rng.random_range(1..9), rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..4));
        let x = matrix(rng, n, d);
        let edges = random_edges(rng, n, 0.35, trial % 2 == 0);
        let eps = rng.random_range(-0.5..0.5);
        let (w1, w2) = (matrix(rng, d, hid), matrix(rng, hid, out));
        let b1: Vec<f64> = (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b2: Vec<f64> = (0..out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut ps = ParamSet::new();
        let epsilon = if trial % 3 == 0 {
            Epsilon::Learnable(ps.add("eps", Tensor::filled(&[1, 1], eps)))
        } else {
            Epsilon::Fixed(eps)
        };
        let mlp = vec![
            (ps.add("w1", tensor(&w1)), ps.add("b1", Tensor::row_vector(&b1))),
            (ps.add("w2", tensor(&w2)), ps.add("b2", Tensor::row_vector(&b2))),
        ];
        let params = GinParams {
            epsilon,
            mlp,
            dropout: 0.0,
        };
        let mut tape = Tape::new();
        let vars = ps.bind_frozen(&mut tape);
        let xv = tape.constant(tensor(&x));
        let adj = Adjacency::new(n, &edges).map_err(|e| e.to_string())?;
        let z = gin_forward(&mut tape, &vars, xv, &adj, &params, false).map_err(|e| e.to_string())?;
        let expect: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut pre: Vec<f64> = x[i].iter().map(|v| (1.0 + eps) * v).collect();
                for &(s, _, w) in edges.iter().filter(|e| e.1 == i) {
                    pre.iter_mut().zip(&x[s]).for_each(|(p, v)| *p += w * v);
                }
                let h: Vec<f64> = proj(&pre, &w1).iter().zip(&b1).map(|(a, b)| (a + b).max(0.0)).collect();
                proj(&h, &w2).iter().zip(&b2).map(|(a, b)| a + b).collect()
            })
            .collect();
        worst = worst.max(max_diff(tape.value(z), &expect));
    }
    Ok(worst)
}

/// Scaled dot-product attention of query tokens over key/value tokens.
fn attend(q: &[Vec<f64>], kv: &[Vec<f64>], wq: &Tensor, wk: &Tensor, wv: &Tensor, dk: usize) -> Vec<f64> {
    let keys: Vec<Vec<f64>> = kv.iter().map(|t| proj_t(t, wk)).collect();
    let values: Vec<Vec<f64>> = kv.iter().map(|t| proj_t(t, wv)).collect();
    let mut out = Vec::new();
    for t in q {
        let query = proj_t(t, wq);
        let a = softmax(&keys.iter().map(|k| dot(&query, k) / (dk as f64).sqrt()).collect::<Vec<_>>());
        for c in 0..wv.cols() {
            out.push(values.iter().zip(&a).map(|(v, w)| w * v[c]).sum());
        }
    }
    out
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn tokens_of(t: &Tensor, i: usize, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|j| t.data()[(i * n + j) * m..(i * n + j + 1) * m].to_vec()).collect()
}

fn c2_attention(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (b, nq, nk) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5));
        let (m, dk) = (rng.random_range(1..6), rng.random_range(1..5));
        let mut ps = ParamSet::new();
        let block = AttentionBlock::new(&mut ps, "att", m, dk, rng);
        for t in ps.tensors_mut() {
            *t = random_tensor(rng, t.shape());
        }
        let (q, kv) = (random_tensor(rng, &[b, nq, m]), random_tensor(rng, &[b, nk, m]));
        let mut tape = Tape::new();
        let vars = ps.bind_frozen(&mut tape);
        let (qv, kvv) = (tape.constant(q.clone()), tape.constant(kv.clone()));
        let r = cross_attention(&mut tape, &vars, qv, kvv, &block).map_err(|e| e.to_string())?;
        let (wq, wk, wv) = (ps.get(block.wq), ps.get(block.wk), ps.get(block.wv));
        let expect: Vec<f64> = (0..b)
            .flat_map(|i| attend(&tokens_of(&q, i, nq, m), &tokens_of(&kv, i, nk, m), wq, wk, wv, dk))
            .collect();
        for (x, y) in tape.value(r).data().iter().zip(&expect) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

fn c2_bce(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..20);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..0.999)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<bool>()))).collect();
        let expect = -p.iter().zip(&y).map(|(p, y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln()).sum::<f64>() / n as f64;
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::column(&p));
        let l = bce_loss(&mut tape, pv, &y).map_err(|e| e.to_string())?;
        worst = worst.max((tape.value(l).item() - expect).abs());
        worst = worst.max((bce(&p, &y).map_err(|e| e.to_string())? - expect).abs());
    }
    Ok(worst)
}

fn c2_contribution() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let spec = ModelSpec {
            strategy: if trial % 2 == 0 { Strategy::HybridConcatAtt } else { Strategy::SimpleConcatAtt },
            train: TrainSettings {
                seed: trial,
                ..ModelSpec::default().train
            },
            ..small_spec()
        };
        let model = Model::assemble(&spec, 5).map_err(|e| e.to_string())?;
        let batch = toy_batch(9, 3, 5, &[(Layer::Ft, true), (Layer::Co, false)], 100 + trial);
        let records = modality_contribution(&model, std::slice::from_ref(&batch)).map_err(|e| e.to_string())?;
        let mut tape = Tape::new();
        let vars = model.params.bind_frozen(&mut tape);
        let emb = model.embed(&mut tape, &vars, &batch, false).map_err(|e| e.to_string())?;
        let x = tape.constant(batch.tabular.clone());
        let t = model.tokens(&mut tape, &vars, x, &emb, false).map_err(|e| e.to_string())?;
        let block = model.attention_block().ok_or("no attention block")?;
        let (wq, wk, wv) = (model.params.get(block.wq), model.params.get(block.wk), model.params.get(block.wv));
        let (net, tab) = (tape.value(t.network_flat), tape.value(t.tabular_flat));
        let m = block.token_width;
        for (i, rec) in records.iter().enumerate() {
            let nt: Vec<Vec<f64>> = net.row(i).chunks(m).map(<[f64]>::to_vec).collect();
            let tt: Vec<Vec<f64>> = tab.row(i).chunks(m).map(<[f64]>::to_vec).collect();
            let norm = |v: &[f64]| dot(v, v).sqrt();
            let n = norm(&attend(&tt, &nt, wq, wk, wv, block.key_dim));
            let tn = norm(&attend(&nt, &tt, wq, wk, wv, block.key_dim));
            worst = worst
                .max((rec.c_network - n / (n + tn + CONTRIBUTION_EPS)).abs())
                .max((rec.c_tabular - tn / (n + tn + CONTRIBUTION_EPS)).abs());
        }
    }
    Ok(worst)
}

fn c2_transcription() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let parts = [
        ("gat_forward", c2_gat(&mut rng)?),
        ("gin_forward", c2_gin(&mut rng)?),
        ("cross_attention", c2_attention(&mut rng)?),
        ("bce_loss", c2_bce(&mut rng)?),
        ("modality_contribution", c2_contribution()?),
    ];
    let text = parts.iter().map(|(n, d)| format!("{n} {d:.1e}")).collect::<Vec<_>>().join(", ");
    require(parts.iter().all(|(_, d)| *d < 1e-9), || format!("max abs difference: {text}"))?;
    Ok(format!("100 trials each, max abs difference: {text}"))
}

fn c3_attention_laws() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(1..12);
        let edges = random_edges(&mut rng, n, 0.3, trial % 2 == 0);
        let adj = Adjacency::new(n, &edges).map_err(|e| e.to_string())?;
        let mut ps = ParamSet::new();
        let head = GatHead {
            w: ps.add_glorot("w", 3, 4, &mut rng),
            a_dst: ps.add_glorot("d", 4, 1, &mut rng),
            a_src: ps.add_glorot("s", 4, 1, &mut rng),
        };
        let mut tape = Tape::new();
        let vars = ps.bind_frozen(&mut tape);
        let x = tape.constant(tensor(&matrix(&mut rng, n, 3)));
        let (alpha, _) = gat_attention(&mut tape, &vars, x, &adj, &head, LEAKY_SLOPE).map_err(|e| e.to_string())?;
        let dense = attention_matrix(&mut tape, &vars, x, &adj, &head, LEAKY_SLOPE).map_err(|e| e.to_string())?;
        let (alpha, dense) = (tape.value(alpha), tape.value(dense));
        let mut sums = vec![0.0; n];
        for (k, (_, d)) in edges.iter().map(|e| (e.0, e.1)).chain((0..n).map(|i| (i, i))).enumerate() {
            sums[d] += alpha.data()[k];
        }
        for s in &sums {
            worst_sum = worst_sum.max((s - 1.0).abs());
        }
        for d in 0..n {
            let indeg = edges.iter().filter(|e| e.1 == d).count();
            for s in 0..n {
                let linked = s == d || edges.iter().any(|e| e.0 == s && e.1 == d);
                let a = dense.get2(d, s);
                require(linked || a == 0.0, || format!("masked entry ({d}, {s}) = {a:e} in trial {trial}"))?;
                if indeg == 0 && s == d {
                    require(a == 1.0, || format!("isolated node {d} has self weight {a} in trial {trial}"))?;
                }
            }
        }
    }
    require(worst_sum < 1e-9, || format!("row sums off by {worst_sum:e}"))?;
    Ok(format!("100 graphs: row sums within {worst_sum:.1e}, masked entries exactly 0, isolated alpha_ii = 1"))
}

fn c4_equivariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for kind in [GnnKind::Gat, GnnKind::Gin] {
        for trial in 0..50 {
            let n = 20;
            let cfg = GnnConfig {
                kind,
                hidden: 4,
                heads: 2,
                depth: 1 + trial % 2,
                gin_epsilon: if trial % 3 == 0 { Some(0.2) } else { None },
                dropout: 0.0,
            };
            let mut ps = ParamSet::new();
            let stack = GnnStack::new(&mut ps, "g", 5, &cfg, &mut rng).map_err(|e| e.to_string())?;
            let x = matrix(&mut rng, n, 5);
            let adj = Adjacency::new(n, &random_edges(&mut rng, n, 0.15, trial % 2 == 0)).map_err(|e| e.to_string())?;
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut xp = vec![Vec::new(); n];
            for (i, row) in x.iter().enumerate() {
                xp[perm[i]] = row.clone();
            }
            let out = |x: &[Vec<f64>], adj: &Adjacency| -> Result<Tensor, String> {
                let mut tape = Tape::new();
                let vars = ps.bind_frozen(&mut tape);
                let xv = tape.constant(tensor(x));
                let z = stack.forward(&mut tape, &vars, xv, adj, false).map_err(|e| e.to_string())?;
                Ok(tape.value(z).clone())
            };
            let (z, zp) = (out(&x, &adj)?, out(&xp, &adj.permuted(&perm))?);
            for i in 0..n {
                for k in 0..z.cols() {
                    worst = worst.max((z.get2(i, k) - zp.get2(perm[i], k)).abs());
                }
            }
        }
    }
    require(worst < 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("GAT and GIN, 50 random 20-node graphs each, max deviation {worst:.1e}"))
}

fn c5_star_discrimination() -> Check {
    let feature = vec![0.5, -0.25, 1.5];
    let center = |leaves: usize, mean: bool| -> Result<Vec<f64>, String> {
        let mut tape = Tape::new();
        let x = tape.constant(tensor(&vec![feature.clone(); leaves + 1]));
        let edges: Vec<_> = (1..=leaves).map(|l| (l, 0, 1.0)).collect();
        let adj = Adjacency::new(leaves + 1, &edges).map_err(|e| e.to_string())?;
        let h = if mean {
            mean_aggregate(&mut tape, x, &adj)
        } else {
            gin_aggregate(&mut tape, &[], x, &adj, Epsilon::Fixed(0.0))
        }
        .map_err(|e| e.to_string())?;
        Ok(tape.value(h).row(0).to_vec())
    };
    let (g2, g3) = (center(2, false)?, center(3, false)?);
    let (m2, m3) = (center(2, true)?, center(3, true)?);
    require(g2 != g3, || format!("GIN centers equal: {g2:?}"))?;
    require(m2 == m3, || format!("mean centers differ: {m2:?} vs {m3:?}"))?;
    Ok(format!("GIN center {g2:?} vs {g3:?}; mean center {m2:?} both"))
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut doubled, mut pairs) = (0u64, 0u64);
    for (i, _) in labels.iter().enumerate().filter(|(_, &y)| y) {
        for (j, _) in labels.iter().enumerate().filter(|(_, &y)| !y) {
            pairs += 1;
            doubled += match scores[i].partial_cmp(&scores[j]) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    doubled as f64 / (2 * pairs) as f64
}

fn c6_metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tied = 0;
    for case in 0..1000 {
        let n = rng.random_range(2..60);
        let levels = if case % 2 == 0 { 5 } else { 1000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        labels[0] = true;
        labels[1] = false;
        if scores.iter().map(|v| v.to_bits()).collect::<BTreeSet<_>>().len() < n {
            tied += 1;
        }
        let (got, want) = (auc(&scores, &labels).map_err(|e| e.to_string())?, pairwise_auc(&scores, &labels));
        require(got == want, || format!("case {case}: auc {got} vs pairwise {want}"))?;
    }
    // precision at each positive, averaged over positives; tied scores
    // enter as one step
    let tables: [(&[f64], &[bool], f64); 10] = [
        (&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false], 5.0 / 6.0),
        (&[0.9, 0.8, 0.1], &[true, true, false], 1.0),
        (&[0.9, 0.8, 0.1], &[false, false, true], 1.0 / 3.0),
        (&[0.5, 0.5, 0.5, 0.5], &[true, false, false, true], 0.5),
        (&[0.9, 0.5, 0.5, 0.1], &[false, true, false, true], 5.0 / 12.0),
        (&[5.0, 4.0, 3.0, 2.0, 1.0], &[false, false, true, false, false], 1.0 / 3.0),
        (&[0.9, 0.8, 0.7, 0.6, 0.5], &[true, true, false, false, true], 13.0 / 15.0),
        (&[0.9, 0.9, 0.2], &[true, false, true], 7.0 / 12.0),
        (&[0.3, 0.2], &[true, true], 1.0),
        (&[0.6, 0.9, 0.7, 0.8], &[false, true, true, false], 5.0 / 6.0),
    ];
    for (i, (s, y, want)) in tables.iter().enumerate() {
        let got = aucpr(s, y).map_err(|e| e.to_string())?;
        require((got - want).abs() < 1e-12, || format!("aucpr table {i}: {got} vs {want}"))?;
    }
    Ok(format!("auc exact on 1000 cases ({tied} with ties); aucpr matches 10 tables"))
}

fn c7_shapley() -> Check {
    let scorer = |rows: &[Vec<f64>]| -> Vec<f64> {
        rows.iter()
            .map(|x| (x[0] + x[1] + 0.5 * x[0] * x[1] + 2.0 * x[2] * x[3] - x[4] + x[5].powi(2) + 0.3 * x[6] * x[2]).tanh())
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let bg: Vec<Vec<f64>> = (0..6)
            .map(|_| {
                let mut b: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                b[1] = b[0];
                b
            })
            .collect();
        let mut x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        x[1] = x[0];
        let a = shapley_exact(scorer, &x, &bg).map_err(|e| e.to_string())?;
        let base = scorer(&bg).iter().sum::<f64>() / bg.len() as f64;
        let efficiency = (a.values.iter().sum::<f64>() - (scorer(&[x.clone()])[0] - base)).abs();
        worst = worst.max(efficiency).max((a.values[0] - a.values[1]).abs()).max(a.values[7].abs());
    }
    require(worst < 1e-6, || format!("axiom violation {worst:e}"))?;
    let f = |rows: &[Vec<f64>]| -> Vec<f64> {
        rows.iter().map(|x| (x[0] * x[1] + 2.0 * x[2] - x[3] * x[4] + 0.5 * x[5]).tanh()).collect()
    };
    let bg: Vec<Vec<f64>> = matrix(&mut rng, 5, 6);
    let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let exact = shapley_exact(f, &x, &bg).map_err(|e| e.to_string())?;
    let approx = shapley_sampling(f, &x, &bg, 2000, 5).map_err(|e| e.to_string())?;
    let mad = exact.values.iter().zip(&approx.values).map(|(a, b)| (a - b).abs()).sum::<f64>() / 6.0;
    require(mad < 0.05, || format!("sampling MAD {mad}"))?;
    Ok(format!("axioms within {worst:.1e} on 8 features; sampling MAD {mad:.4} at 2000 permutations"))
}

fn c8_pipeline() -> Check {
    const FRACTIONS: [f64; 6] = [0.04, 0.05, 0.39, 0.40, 0.94, 0.95];
    let expected = |kind: FeatureKind, f: f64| match kind {
        FeatureKind::Numerical if f < 0.05 => NullRule::ImputeMedian,
        FeatureKind::Categorical if f < 0.05 => NullRule::ImputeMode,
        FeatureKind::Numerical if f < 0.40 => NullRule::ImputeMedianWithDummy,
        FeatureKind::Categorical if f < 0.40 => NullRule::NaLevel,
        _ if f < 0.95 => NullRule::DropWithDummy,
        _ => NullRule::Drop,
    };
    let n = 100;
    let month = YearMonth::new(2020, 1).ok_or("bad month")?;
    let records = (0..n)
        .map(|i| LoanRecord {
            loan_id: format!("L{i:03}"),
            company_id: format!("C{i:03}"),
            origination_month: month,
            company_size: CompanySize::Small,
            default: i % 4 == 0,
        })
        .collect();
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for f in FRACTIONS {
        let nulls = (f * n as f64).round() as usize;
        names.push(format!("num_{nulls}"));
        columns.push(RawColumn::Numeric((0..n).map(|i| (i >= nulls).then_some(((i * 37 + nulls * 11) % 101) as f64)).collect()));
        names.push(format!("cat_{nulls}"));
        columns.push(RawColumn::Categorical(
            (0..n).map(|i| (i >= nulls).then(|| ["a", "b", "c"][(i * 7 + nulls) % 3].to_string())).collect(),
        ));
    }
    let table = LoanTable::new(records, names, columns).map_err(|e| e.to_string())?;
    let stats = PipelineStats::fit(&table, &(0..n).collect::<Vec<_>>()).map_err(|e| e.to_string())?;
    for (k, f) in FRACTIONS.iter().enumerate() {
        for (o, kind) in [(0, FeatureKind::Numerical), (1, FeatureKind::Categorical)] {
            let fs = &stats.features[2 * k + o];
            require(fs.rule == expected(kind, *f) && null_rule(kind, *f) == expected(kind, *f), || {
                format!("{} at {f}: {:?}, expected {:?}", fs.name, fs.rule, expected(kind, *f))
            })?;
        }
    }
    let data = generate_synthetic(&SynthConfig {
        n_companies: 1500,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let loans = &data.loans.records;
    let split = temporal_split(loans, &SplitConfig::default()).map_err(|e| e.to_string())?;
    let companies = |rows: &[usize]| -> BTreeSet<&str> { rows.iter().map(|&r| loans[r].company_id.as_str()).collect() };
    let (tr, va, te) = (companies(&split.train), companies(&split.validation), companies(&split.test));
    require(tr.is_disjoint(&va) && te.is_disjoint(&tr) && te.is_disjoint(&va), || "company sets overlap".into())?;
    let a = PipelineStats::fit(&data.loans, &split.train).map_err(|e| e.to_string())?;
    let b = PipelineStats::fit(&data.loans, &split.train).map_err(|e| e.to_string())?;
    let c = PipelineStats::from_text(&a.to_text()).map_err(|e| e.to_string())?;
    require(a == b && a == c, || "refit or reload changed the fitted statistics".into())?;
    require(
        a.transform_rows(&data.loans, &split.test).map_err(|e| e.to_string())?
            == c.transform_rows(&data.loans, &split.test).map_err(|e| e.to_string())?,
        || "reloaded statistics transform differently".into(),
    )?;
    Ok(format!(
        "12 crafted columns match the decision table; split companies disjoint ({} / {} / {}); refit and reload idempotent",
        tr.len(),
        va.len(),
        te.len()
    ))
}

/// Outcome of the synthetic ordering run, reused by criterion 10.
struct OrderingRun {
    check: Check,
    failed_parts: Vec<&'static str>,
    contributions: Option<Vec<(f64, f64)>>,
}

fn c9_ordering() -> OrderingRun {
    let mut contributions = None;
    let mut failed_parts = Vec::new();
    let check = (|| -> Check {
        let start = Instant::now();
        let data = generate_synthetic(&SynthConfig::default()).map_err(|e| e.to_string())?;
        let companies = data.loans.records.iter().map(|r| r.company_id.as_str()).collect::<BTreeSet<_>>().len();
        let loans = data.loans.len();
        let rate = data.default_rate;
        require((rate - 0.0363).abs() <= 0.005, || format!("default rate {rate:.4} outside 3.63% +- 0.5 pp"))?;
        let prepared = Prepared::new(data.loans, data.transactions, data.ownerships, &SplitConfig::default())
            .map_err(|e| e.to_string())?;
        let s4 = ModelSpec::default();
        let specs = [
            ("S4 GAT ft+co", s4.clone()),
            ("DNN", ModelSpec { mode: Mode::BaselineDnn, ..s4.clone() }),
            ("unimodal GAT ft+co", ModelSpec { mode: Mode::Unimodal, ..s4.clone() }),
            (
                "S4 undirected unweighted",
                ModelSpec {
                    edge_mode: EdgeMode {
                        directed: false,
                        weighted: false,
                    },
                    ..s4.clone()
                },
            ),
        ];
        let outcomes = specs
            .par_iter()
            .map(|(_, spec)| {
                let ds = prepared.dataset(spec).map_err(|e| e.to_string())?;
                run(spec, &prepared, &ds).map_err(|e| e.to_string())
            })
            .collect::<Result<Vec<_>, String>>()?;
        let aucs: Vec<f64> = outcomes.iter().map(|o| o.test_auc).collect();
        let (s4_auc, dnn, uni, undirected) = (aucs[0], aucs[1], aucs[2], aucs[3]);

        let s4_model = &outcomes[0].trained.model;
        let ds = prepared.dataset(&s4).map_err(|e| e.to_string())?;
        let batches = ds
            .batches(&prepared.split.test, s4.train.batch_size, s4.depth, true, None)
            .map_err(|e| e.to_string())?;
        contributions = Some(
            modality_contribution(s4_model, &batches)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|c| (c.c_network, c.c_tabular))
                .collect(),
        );

        let records = &prepared.loans.records;
        let mut scores = vec![None; records.len()];
        for (&r, &p) in prepared.split.test.iter().zip(&outcomes[0].test_scores) {
            scores[r] = Some(p);
        }
        let builder = GraphBuilder::new(records, &prepared.transactions, &prepared.ownerships);
        let months: BTreeSet<YearMonth> = prepared.split.test.iter().map(|&r| records[r].origination_month).collect();
        let sets = months
            .into_iter()
            .map(|m| builder.build(m, &[LayerKind::ft(true, true)]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let defaulted = prepared.loans.labels();
        let group = |d| -> Result<_, String> {
            exposure_density(&scores, &sets, &defaulted, d, false)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| format!("no test loans with {d:?} exposure"))
        };
        let (inc, out) = (group(Direction::In)?, group(Direction::Out)?);

        let summary = format!(
            "{companies} companies, {loans} loans, rate {rate:.4}; test AUC S4 {s4_auc:.4}, DNN {dnn:.4}, \
             unimodal {uni:.4}, S4 undirected {undirected:.4}; exposure mean in {:.4} (n={}) vs out {:.4} (n={}); {:.0} s",
            inc.mean_score,
            inc.count,
            out.mean_score,
            out.count,
            start.elapsed().as_secs_f64()
        );
        let parts = [
            ("9a", s4_auc >= dnn + 0.02, format!("S4 - DNN = {:+.4} (need >= 0.02)", s4_auc - dnn)),
            ("9b", s4_auc >= uni + 0.01, format!("S4 - unimodal = {:+.4} (need >= 0.01)", s4_auc - uni)),
            ("9c", s4_auc >= undirected, format!("directed - undirected = {:+.4} (need >= 0)", s4_auc - undirected)),
            (
                "9c",
                inc.mean_score > out.mean_score,
                format!("in - out exposure mean = {:+.4} (need > 0)", inc.mean_score - out.mean_score),
            ),
        ];
        failed_parts = parts.iter().filter(|p| !p.1).map(|p| p.0).collect();
        let failed: Vec<String> = parts.iter().filter(|p| !p.1).map(|p| format!("{}: {}", p.0, p.2)).collect();
        if failed.is_empty() {
            Ok(summary)
        } else {
            Err(format!("{}; {summary}", failed.join("; ")))
        }
    })();
    if check.is_ok() {
        failed_parts.clear();
    }
    OrderingRun {
        check,
        failed_parts,
        contributions,
    }
}

fn c10_contribution(contributions: Option<&[(f64, f64)]>) -> Check {
    let cs = contributions.ok_or("no trained S4 model from criterion 9")?;
    require(!cs.is_empty(), || "no test loans".into())?;
    let worst = cs.iter().map(|(n, t)| (n + t - 1.0).abs()).fold(0.0, f64::max);
    require(worst <= 1e-6, || format!("C_N + C_T off by {worst:e}"))?;
    let frac = |pred: &dyn Fn(f64) -> bool, pick: fn(&(f64, f64)) -> f64| {
        cs.iter().filter(|c| pred(pick(c))).count() as f64 / cs.len() as f64
    };
    let below = |v| v < 0.4;
    let above = |v| v > 0.6;
    let shares = [
        ("C_N<0.4", frac(&below, |c| c.0)),
        ("C_N>0.6", frac(&above, |c| c.0)),
        ("C_T<0.4", frac(&below, |c| c.1)),
        ("C_T>0.6", frac(&above, |c| c.1)),
    ];
    let text = shares.iter().map(|(n, f)| format!("{n} {:.1}%", 100.0 * f)).collect::<Vec<_>>().join(", ");
    require(shares.iter().all(|(_, f)| *f > 0.0), || format!("empty side: {text}"))?;
    Ok(format!("{} test loans, sums within {worst:.1e}; {text}", cs.len()))
}

fn c11_determinism() -> Check {
    let toy = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/toy.conf");
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |n: &str| root.path().join(n).to_string_lossy().into_owned();
    let cli = |args: &[&str]| -> Result<(), String> {
        run_from(std::iter::once("multicredit").chain(args.iter().copied()))
            .map(|_| ())
            .map_err(|e| format!("{args:?}: {e:#}"))
    };
    cli(&["synth", "--config", toy, "--out", &p("data")])?;
    cli(&["train", "--config", toy, "--data", &p("data"), "--out", &p("m1")])?;
    let manifest = p("m1/manifest.txt");
    cli(&["train", "--config", &manifest, "--data", &p("data"), "--out", &p("m2")])?;
    for (m, e) in [("m1", "e1"), ("m2", "e2")] {
        cli(&["eval", "--config", toy, "--model", &p(m), "--data", &p("data"), "--out", &p(e)])?;
    }
    let mut compared = Vec::new();
    for (a, b) in [("m1/model.bin", "m2/model.bin"), ("m1/history.csv", "m2/history.csv"), ("e1/metrics.csv", "e2/metrics.csv"), ("e1/scores.csv", "e2/scores.csv")] {
        let (x, y) = (fs::read(p(a)).map_err(|e| e.to_string())?, fs::read(p(b)).map_err(|e| e.to_string())?);
        require(x == y, || format!("{a} and {b} differ"))?;
        compared.push(a.rsplit('/').next().unwrap_or(a));
    }
    Ok(format!("two train+eval runs from one manifest: {} byte-identical", compared.join(", ")))
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        )),
    }
}

fn main() -> ExitCode {
    let selected: BTreeSet<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u8| selected.is_empty() || selected.contains(&n);
    let titles = [
        "gradient integrity",
        "equation transcription",
        "attention laws",
        "permutation equivariance",
        "aggregation discrimination",
        "metric oracles",
        "Shapley axioms",
        "pipeline conformance",
        "directional ordering",
        "modality contribution",
        "determinism",
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut ordering: Option<OrderingRun> = None;
    let mut blocking = 0;
    for n in 1..=11u8 {
        if !wanted(n) && !(n == 9 && wanted(10)) {
            continue;
        }
        let start = Instant::now();
        let result = match n {
            1 => guarded(c1_gradients),
            2 => guarded(c2_transcription),
            3 => guarded(c3_attention_laws),
            4 => guarded(c4_equivariance),
            5 => guarded(c5_star_discrimination),
            6 => guarded(c6_metrics),
            7 => guarded(c7_shapley),
            8 => guarded(c8_pipeline),
            9 => {
                let r = panic::catch_unwind(c9_ordering).unwrap_or(OrderingRun {
                    check: Err("panicked".into()),
                    failed_parts: Vec::new(),
                    contributions: None,
                });
                let c = r.check.clone();
                ordering = Some(r);
                c
            }
            10 => guarded(|| c10_contribution(ordering.as_ref().and_then(|o| o.contributions.as_deref()))),
            _ => guarded(c11_determinism),
        };
        if !wanted(n) {
            continue;
        }
        let secs = start.elapsed().as_secs_f64();
        let title = titles[usize::from(n - 1)];
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {title}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("criterion {n:>2} FAIL  {title}: {detail} [{secs:.1}s]");
                let parts = match (n, &ordering) {
                    (9, Some(o)) => o.failed_parts.clone(),
                    _ => Vec::new(),
                };
                let known: Vec<_> = parts.iter().filter_map(|p| KNOWN_RED.iter().find(|k| k.0 == *p)).collect();
                if !parts.is_empty() && known.len() == parts.len() {
                    for (id, why) in known {
                        println!("             known red {id}: {why}");
                    }
                } else {
                    blocking += 1;
                }
            }
        }
    }
    if blocking == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{blocking} criterion(s) failed outside the known-red list");
        ExitCode::FAILURE
    }
}
