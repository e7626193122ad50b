//! The subcommands. Each one reads its inputs, writes its artifacts into a
//! fresh output directory and finishes with a manifest.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use multicredit::data::{
    format_number, generate_synthetic, temporal_split, write_loans, write_ownerships, write_transactions, SplitConfig,
    SynthConfig, SPLIT_KEYS,
};
use multicredit::eval::{
    exposure_density, histogram_density, modality_contribution, series_csv, shapley_exact, shapley_sampling,
    Attribution, EvalReport, ExposureGroup, TabularScorer, EXACT_LIMIT,
};
use multicredit::experiment::Prepared;
use multicredit::fusion::{predict, train, write_history, Dataset, FusionError, MODEL_KEYS};
use multicredit::graph::{Direction, GraphBuilder, LayerKind};
use multicredit::{Config, Model, ModelSpec};
use rayon::prelude::*;

use crate::manifest::RunManifest;
use crate::settings::{expand_grid, Partition, RunSettings, ShapMode, Trial, GRID_PREFIX, RUN_KEYS};
use crate::workspace::{
    DataSet, ModelDir, OutDir, LOANS_FILE, MODEL_FILE, OWNERSHIP_FILE, PIPELINE_FILE, TRANSACTIONS_FILE,
};

fn ms(since: Instant) -> u128 {
    since.elapsed().as_millis()
}

fn csv_text(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

/// Keys of `config` from `keys`, copied into a fresh config.
fn subset(config: &Config, keys: &[&str]) -> Config {
    config
        .iter()
        .filter(|(k, _)| keys.contains(k))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn overlay(base: &mut Config, top: &Config) {
    for (k, v) in top.iter() {
        base.set(k, v);
    }
}

pub fn synth(config: &Config, out: &Path, force: bool) -> Result<RunManifest> {
    let started = Instant::now();
    let sc = SynthConfig::from_config(config)?;
    let mut dir = OutDir::create(out, force, &[], RunManifest::new("synth", sc.to_config()))?;
    let data = generate_synthetic(&sc)?;
    dir.write(LOANS_FILE, &csv_text(|b| Ok(write_loans(&data.loans, b)?))?)?;
    dir.write(TRANSACTIONS_FILE, &csv_text(|b| Ok(write_transactions(&data.transactions, b)?))?)?;
    dir.write(OWNERSHIP_FILE, &csv_text(|b| Ok(write_ownerships(&data.ownerships, b)?))?)?;
    let m = &mut dir.manifest;
    m.seeds.push(("synth".into(), sc.seed));
    m.results.extend([
        ("loans".into(), data.loans.len().to_string()),
        ("transactions".into(), data.transactions.len().to_string()),
        ("ownerships".into(), data.ownerships.len().to_string()),
        ("default_rate".into(), format_number(data.default_rate)),
        ("intercept".into(), format_number(data.intercept)),
    ]);
    m.timings_ms.push(("total".into(), ms(started)));
    println!(
        "{} loans ({} defaults, rate {:.4}), {} transactions, {} ownership rows -> {}",
        data.loans.len(),
        data.loans.labels().iter().filter(|&&d| d).count(),
        data.default_rate,
        data.transactions.len(),
        data.ownerships.len(),
        out.display()
    );
    dir.finish()
}

pub fn prep(config: &Config, data_dir: &Path, out: &Path, force: bool) -> Result<RunManifest> {
    let started = Instant::now();
    let sc = SplitConfig::from_config(config)?;
    let mut dir = OutDir::create(out, force, &[data_dir], RunManifest::new("prep", sc.to_config()))?;
    let data = DataSet::read(data_dir)?;
    let split = temporal_split(&data.loans.records, &sc)?;
    let stats = multicredit::data::PipelineStats::fit(&data.loans, &split.train)?;
    dir.write(PIPELINE_FILE, stats.to_text().as_bytes())?;
    let mut rows: Vec<(usize, &str)> = [(&split.train, "train"), (&split.validation, "validation"), (&split.test, "test")]
        .iter()
        .flat_map(|(rows, name)| rows.iter().map(move |&r| (r, *name)))
        .collect();
    rows.sort_unstable();
    let mut s = String::from("loan_id,partition\n");
    for (r, name) in rows {
        let _ = writeln!(s, "{},{name}", data.loans.records[r].loan_id);
    }
    dir.write("split.csv", s.as_bytes())?;
    let mut d = String::from("column,reason\n");
    for (col, reason) in &stats.dropped {
        let _ = writeln!(d, "{col},{reason}");
    }
    dir.write("dropped.csv", d.as_bytes())?;
    for w in &stats.warnings {
        dir.warn(w.clone());
    }
    let m = &mut dir.manifest;
    m.seeds.push(("split".into(), sc.seed));
    m.inputs = data.digests.clone();
    m.results.extend([
        ("train".into(), split.train.len().to_string()),
        ("validation".into(), split.validation.len().to_string()),
        ("test".into(), split.test.len().to_string()),
        ("features".into(), stats.feature_names().len().to_string()),
        ("dropped".into(), stats.dropped.len().to_string()),
    ]);
    m.timings_ms.push(("total".into(), ms(started)));
    println!(
        "train {}, validation {}, test {}; {} model features, {} columns dropped -> {}",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        stats.feature_names().len(),
        stats.dropped.len(),
        out.display()
    );
    dir.finish()
}

/// The effective config written to a training manifest: the user's keys
/// with the resolved spec and split on top.
fn effective(config: &Config, spec: &ModelSpec, split: &SplitConfig) -> Config {
    let mut c: Config = config
        .iter()
        .filter(|(k, _)| !k.starts_with(GRID_PREFIX))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    overlay(&mut c, &spec.to_config());
    overlay(&mut c, &split.to_config());
    c
}

pub fn train_cmd(config: &Config, data_dir: &Path, out: &Path, force: bool) -> Result<RunManifest> {
    let started = Instant::now();
    if config.keys().any(|k| k.starts_with(GRID_PREFIX)) {
        bail!("grid keys found; use `grid` to search over them");
    }
    let spec = ModelSpec::from_config(config)?;
    let sc = SplitConfig::from_config(config)?;
    let mut dir = OutDir::create(out, force, &[data_dir], RunManifest::new("train", effective(config, &spec, &sc)))?;
    let data = DataSet::read(data_dir)?;
    data.check_spec(&spec)?;
    let prepared = Prepared::new(data.loans, data.transactions, data.ownerships, &sc)?;
    let model = Model::assemble(&spec, prepared.features.cols())?;
    let loaded = Instant::now();
    let dataset = prepared.dataset(&spec)?;
    let graphs = ms(loaded);
    let fit = Instant::now();
    let trained = train(model, &dataset, &prepared.split.train, &prepared.split.validation)?;
    let fit_ms = ms(fit);

    let mut params = Vec::new();
    trained.model.params.write_to(&mut params)?;
    dir.write(MODEL_FILE, &params)?;
    dir.write(PIPELINE_FILE, prepared.stats.to_text().as_bytes())?;
    dir.write("history.csv", &csv_text(|b| Ok(write_history(&trained.history, b)?))?)?;
    for w in &prepared.stats.warnings {
        dir.warn(w.clone());
    }
    let h = &trained.history;
    let best_auc = h.epochs[h.best_epoch - 1].val_auc;
    let m = &mut dir.manifest;
    m.seeds.extend([("split".into(), sc.seed), ("train".into(), spec.train.seed)]);
    m.inputs = data.digests;
    m.results.extend([
        ("model".into(), spec.label()),
        ("parameters".into(), trained.model.params.scalar_count().to_string()),
        ("features".into(), prepared.features.cols().to_string()),
        ("best_epoch".into(), h.best_epoch.to_string()),
        ("val_auc".into(), format_number(best_auc)),
        ("epochs".into(), h.epochs.len().to_string()),
        ("stopped_early".into(), h.stopped_early.to_string()),
        ("train".into(), prepared.split.train.len().to_string()),
        ("validation".into(), prepared.split.validation.len().to_string()),
    ]);
    m.timings_ms.extend([
        ("graphs".into(), graphs),
        ("train".into(), fit_ms),
        ("total".into(), ms(started)),
    ]);
    println!(
        "{}: best epoch {} of {}, validation AUC {:.4}{} -> {}",
        spec.label(),
        h.best_epoch,
        h.epochs.len(),
        best_auc,
        if h.stopped_early { " (stopped early)" } else { "" },
        out.display()
    );
    dir.finish()
}

/// Outcome of one grid trial.
#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: Trial,
    pub val_auc: f64,
    pub best_epoch: usize,
    pub epochs: usize,
}

/// Trials ranked by validation AUC, best first; ties go to the lexically
/// smaller assignment string.
pub fn rank_trials(results: &mut [TrialResult]) {
    results.sort_by(|a, b| {
        b.val_auc
            .total_cmp(&a.val_auc)
            .then_with(|| a.trial.label().cmp(&b.trial.label()))
    });
}

pub fn grid(config: &Config, data_dir: &Path, out: &Path, force: bool) -> Result<RunManifest> {
    let started = Instant::now();
    let settings = RunSettings::from_config(config)?;
    let trials = expand_grid(config, settings.grid_cap)?;
    let specs = trials
        .iter()
        .map(|t| ModelSpec::from_config(&t.config).with_context(|| format!("trial {}: {}", t.index, t.label())))
        .collect::<Result<Vec<_>>>()?;
    let sc = SplitConfig::from_config(config)?;
    let mut dir = OutDir::create(out, force, &[data_dir], RunManifest::new("grid", config.clone()))?;
    let data = DataSet::read(data_dir)?;
    for s in &specs {
        data.check_spec(s)?;
    }
    let prepared = Prepared::new(data.loans, data.transactions, data.ownerships, &sc)?;
    for (t, s) in trials.iter().zip(&specs) {
        Model::assemble(s, prepared.features.cols()).with_context(|| format!("trial {}: {}", t.index, t.label()))?;
    }
    eprintln!("grid: {} trials", trials.len());
    let mut results = trials
        .par_iter()
        .zip(&specs)
        .map(|(t, spec)| -> Result<TrialResult> {
            let dataset = prepared.dataset(spec)?;
            let model = Model::assemble(spec, prepared.features.cols())?;
            let trained = train(model, &dataset, &prepared.split.train, &prepared.split.validation)
                .with_context(|| format!("trial {}: {}", t.index, t.label()))?;
            let h = &trained.history;
            Ok(TrialResult {
                trial: t.clone(),
                val_auc: h.epochs[h.best_epoch - 1].val_auc,
                best_epoch: h.best_epoch,
                epochs: h.epochs.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rank_trials(&mut results);

    let mut s = String::from("rank,trial,assignments,val_auc,best_epoch,epochs\n");
    for (i, r) in results.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            i + 1,
            r.trial.index,
            r.trial.label(),
            format_number(r.val_auc),
            r.best_epoch,
            r.epochs
        );
    }
    dir.write("trials.csv", s.as_bytes())?;
    let best = &results[0];
    let best_spec = ModelSpec::from_config(&best.trial.config)?;
    let best_config = effective(&best.trial.config, &best_spec, &sc);
    let text = format!(
        "# best of {} trials ({}), validation AUC {}\n{best_config}",
        results.len(),
        if best.trial.label().is_empty() { "no grid keys".to_string() } else { best.trial.label() },
        format_number(best.val_auc)
    );
    dir.write("best.txt", text.as_bytes())?;
    let m = &mut dir.manifest;
    m.seeds.push(("split".into(), sc.seed));
    m.inputs = data.digests;
    m.results.extend([
        ("trials".into(), results.len().to_string()),
        ("best_trial".into(), best.trial.index.to_string()),
        ("best_assignments".into(), best.trial.label()),
        ("best_val_auc".into(), format_number(best.val_auc)),
    ]);
    m.timings_ms.push(("total".into(), ms(started)));
    println!(
        "{} trials; best #{} [{}] validation AUC {:.4} -> {}",
        results.len(),
        best.trial.index,
        best.trial.label(),
        best.val_auc,
        out.display()
    );
    dir.finish()
}

/// Shared setup of the analysis commands.
struct Analysis {
    loaded: ModelDir,
    prepared: Prepared,
    dataset: Dataset,
    settings: RunSettings,
    rows: Vec<usize>,
    dir: OutDir,
    started: Instant,
}

impl Analysis {
    fn open(command: &str, config: &Config, model_dir: &Path, data_dir: &Path, out: &Path, force: bool) -> Result<Self> {
        let started = Instant::now();
        let settings = RunSettings::from_config(config)?;
        let loaded = ModelDir::load(model_dir)?;
        let mut recorded = loaded.manifest.config.clone();
        overlay(&mut recorded, &subset(config, RUN_KEYS));
        let mut dir = OutDir::create(out, force, &[data_dir, model_dir], RunManifest::new(command, recorded))?;
        let mut trained_keys: Vec<&str> = MODEL_KEYS.to_vec();
        trained_keys.extend(SPLIT_KEYS);
        for w in loaded.overridden_keys(&subset(config, &trained_keys)) {
            dir.warn(w);
        }
        let data = DataSet::read(data_dir)?;
        for w in loaded.data_drift(&data) {
            dir.warn(w);
        }
        data.check_spec(&loaded.spec)?;
        let split = temporal_split(&data.loans.records, &loaded.split)?;
        dir.manifest.inputs = data.digests.clone();
        dir.manifest.inputs.push((format!("model/{MODEL_FILE}"), loaded.manifest.artifact(MODEL_FILE).unwrap_or_default().to_string()));
        dir.manifest.inputs.push((format!("model/{PIPELINE_FILE}"), loaded.manifest.artifact(PIPELINE_FILE).unwrap_or_default().to_string()));
        let prepared = Prepared::with_stats(data.loans, data.transactions, data.ownerships, split, loaded.stats.clone())?;
        let dataset = prepared.dataset(&loaded.spec)?;
        let rows = match settings.split {
            Partition::Train => prepared.split.train.clone(),
            Partition::Validation => prepared.split.validation.clone(),
            Partition::Test => prepared.split.test.clone(),
        };
        if settings.split != Partition::Test {
            let banner = format!(
                "evaluating on the {} split, which the model was fitted or tuned on; these numbers are optimistic",
                settings.split
            );
            eprintln!("{}\nWARNING: {banner}\n{}", "=".repeat(72), "=".repeat(72));
            dir.manifest.warnings.push(banner);
        }
        if rows.is_empty() {
            bail!("the {} split is empty", settings.split);
        }
        dir.manifest.seeds.push(("split".into(), loaded.split.seed));
        dir.manifest.results.push(("split".into(), settings.split.to_string()));
        dir.manifest.results.push(("loans".into(), rows.len().to_string()));
        Ok(Self {
            loaded,
            prepared,
            dataset,
            settings,
            rows,
            dir,
            started,
        })
    }

    fn loan_id(&self, row: usize) -> &str {
        &self.prepared.loans.records[row].loan_id
    }

    fn finish(mut self) -> Result<RunManifest> {
        self.dir.manifest.timings_ms.push(("total".into(), ms(self.started)));
        self.dir.finish()
    }
}

pub fn eval(config: &Config, model_dir: &Path, data_dir: &Path, out: &Path, force: bool) -> Result<RunManifest> {
    let mut a = Analysis::open("eval", config, model_dir, data_dir, out, force)?;
    let scores = predict(&a.loaded.model, &a.dataset, &a.rows)?;
    let labels = a.prepared.labels(&a.rows);
    let seed = a.loaded.spec.train.seed;
    let report = EvalReport::compute(&scores, &labels, a.settings.bootstrap_replicates, seed)?;
    a.dir.write("metrics.csv", report.to_csv().as_bytes())?;
    let mut s = String::from("loan_id,score,label\n");
    for ((&r, &p), &y) in a.rows.iter().zip(&scores).zip(&labels) {
        let _ = writeln!(s, "{},{},{}", a.loan_id(r), format_number(p), u8::from(y));
    }
    a.dir.write("scores.csv", s.as_bytes())?;
    let m = &mut a.dir.manifest;
    m.seeds.push(("bootstrap".into(), seed));
    m.results.extend([
        ("auc".into(), format_number(report.auc.point)),
        ("aucpr".into(), format_number(report.aucpr.point)),
    ]);
    println!("{}\n{}", a.loaded.spec.label(), report.to_table());
    a.finish()
}

pub fn contrib(config: &Config, model_dir: &Path, data_dir: &Path, out: &Path, force: bool) -> Result<RunManifest> {
    let loaded = ModelDir::load(model_dir)?;
    if loaded.model.attention_block().is_none() {
        return Err(FusionError::NoAttention(loaded.spec.strategy).into());
    }
    let mut a = Analysis::open("contrib", config, model_dir, data_dir, out, force)?;
    let spec = &a.loaded.spec;
    let batches = a.dataset.batches(&a.rows, spec.train.batch_size, spec.depth, true, None)?;
    let records = modality_contribution(&a.loaded.model, &batches)?;
    let order: Vec<usize> = batches.iter().flat_map(|b| b.rows.iter().copied()).collect();
    let mut paired: Vec<_> = order.into_iter().zip(records).collect();
    paired.sort_by_key(|(r, _)| *r);
    let mut s = String::from("loan_id,c_network,c_tabular,norm_network,norm_tabular\n");
    for (r, c) in &paired {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            a.loan_id(*r),
            format_number(c.c_network),
            format_number(c.c_tabular),
            format_number(c.norm_network),
            format_number(c.norm_tabular)
        );
    }
    a.dir.write("contribution.csv", s.as_bytes())?;
    let cn: Vec<f64> = paired.iter().map(|(_, c)| c.c_network).collect();
    let ct: Vec<f64> = paired.iter().map(|(_, c)| c.c_tabular).collect();
    let bins = a.settings.density_bins;
    let (hn, ht) = (histogram_density(&cn, bins), histogram_density(&ct, bins));
    a.dir.write(
        "contribution_density.csv",
        series_csv([("c_network", hn.as_slice()), ("c_tabular", ht.as_slice())]).as_bytes(),
    )?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mn, mt) = (mean(&cn), mean(&ct));
    a.dir.manifest.results.extend([
        ("mean_c_network".into(), format_number(mn)),
        ("mean_c_tabular".into(), format_number(mt)),
    ]);
    println!("{} loans: mean C_N {mn:.4}, mean C_T {mt:.4}", paired.len());
    a.finish()
}

/// `count` rows spread evenly over `rows`, keeping their order.
pub fn evenly_spaced(rows: &[usize], count: usize) -> Vec<usize> {
    if count >= rows.len() {
        return rows.to_vec();
    }
    (0..count).map(|i| rows[i * rows.len() / count]).collect()
}

pub fn explain(
    config: &Config,
    model_dir: &Path,
    data_dir: &Path,
    out: &Path,
    force: bool,
) -> Result<RunManifest> {
    let mut a = Analysis::open("explain", config, model_dir, data_dir, out, force)?;
    let names = a.prepared.features.names.clone();
    let d = names.len();
    let exact = match a.settings.shap_mode {
        ShapMode::Exact => true,
        ShapMode::Sampling => false,
        ShapMode::Auto => d <= EXACT_LIMIT,
    };
    let instances = evenly_spaced(&a.rows, a.settings.shap_instances);
    let background: Vec<Vec<f64>> = evenly_spaced(&a.prepared.split.train, a.settings.shap_background)
        .iter()
        .map(|&r| a.prepared.features.row(r).to_vec())
        .collect();
    if background.is_empty() {
        bail!("no training rows for the Shapley background");
    }
    let spec = &a.loaded.spec;
    let seed = spec.train.seed;
    let samples = a.settings.shap_samples;
    let attributions = instances
        .par_iter()
        .enumerate()
        .map(|(i, &row)| -> Result<Attribution> {
            let batch = a
                .dataset
                .batches(&[row], 1, spec.depth, spec.mode.uses_graph(), None)?
                .pop()
                .context("empty batch")?;
            let scorer = TabularScorer::new(&a.loaded.model, &batch, 0)?;
            let f = |rows: &[Vec<f64>]| scorer.score(rows).unwrap_or_else(|_| vec![f64::NAN; rows.len()]);
            let x = a.prepared.features.row(row);
            let attr = if exact {
                shapley_exact(f, x, &background)?
            } else {
                shapley_sampling(f, x, &background, samples, seed.wrapping_add(i as u64))?
            };
            if attr.values.iter().any(|v| !v.is_finite()) || !attr.prediction.is_finite() {
                bail!("scoring failed while explaining loan {}", a.loan_id(row));
            }
            Ok(attr)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut s = String::from("loan_id,feature,value,shap\n");
    let mut total = vec![0.0; d];
    let mut warnings = BTreeSet::new();
    for (&row, attr) in instances.iter().zip(&attributions) {
        let x = a.prepared.features.row(row);
        for j in 0..d {
            let _ = writeln!(s, "{},{},{},{}", a.loan_id(row), names[j], format_number(x[j]), format_number(attr.values[j]));
            total[j] += attr.values[j].abs();
        }
        warnings.extend(attr.warnings.iter().cloned());
    }
    a.dir.write("shap_values.csv", s.as_bytes())?;
    let mut ranking: Vec<(String, f64)> = names
        .iter()
        .zip(&total)
        .map(|(n, t)| (n.clone(), t / instances.len() as f64))
        .collect();
    ranking.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    let mut r = String::from("rank,feature,mean_abs_shap\n");
    for (i, (n, v)) in ranking.iter().enumerate() {
        let _ = writeln!(r, "{},{n},{}", i + 1, format_number(*v));
    }
    a.dir.write("shap_ranking.csv", r.as_bytes())?;
    for w in warnings {
        a.dir.warn(w);
    }
    let m = &mut a.dir.manifest;
    m.seeds.push(("shapley".into(), seed));
    m.results.extend([
        ("method".into(), if exact { "exact" } else { "sampling" }.to_string()),
        ("instances".into(), instances.len().to_string()),
        ("background".into(), background.len().to_string()),
        ("features".into(), d.to_string()),
    ]);
    println!(
        "{} Shapley values for {} loans over {d} features; top: {}",
        if exact { "exact" } else { "sampled" },
        instances.len(),
        ranking.iter().take(5).map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(", ")
    );
    a.finish()
}

pub fn exposure(config: &Config, model_dir: &Path, data_dir: &Path, out: &Path, force: bool) -> Result<RunManifest> {
    let mut a = Analysis::open("exposure", config, model_dir, data_dir, out, force)?;
    let scores = predict(&a.loaded.model, &a.dataset, &a.rows)?;
    let mut by_row = vec![None; a.prepared.loans.len()];
    for (&r, &p) in a.rows.iter().zip(&scores) {
        by_row[r] = Some(p);
    }
    let records = &a.prepared.loans.records;
    let months: BTreeSet<_> = a.rows.iter().map(|&r| records[r].origination_month).collect();
    let builder = GraphBuilder::new(records, &a.prepared.transactions, &a.prepared.ownerships);
    let sets = months
        .into_iter()
        .map(|m| builder.build(m, &[LayerKind::ft(true, true)]))
        .collect::<Result<Vec<_>, _>>()?;
    let defaulted = a.prepared.loans.labels();
    let weighted = a.settings.exposure_weighted;
    let groups: Vec<(&str, Option<ExposureGroup>)> = [("in", Direction::In), ("out", Direction::Out)]
        .into_iter()
        .map(|(name, dir)| Ok((name, exposure_density(&by_row, &sets, &defaulted, dir, weighted)?)))
        .collect::<Result<_>>()?;
    let series: Vec<(&str, &[(f64, f64)])> = groups
        .iter()
        .filter_map(|(n, g)| g.as_ref().map(|g| (*n, g.density.as_slice())))
        .collect();
    a.dir.write("exposure_density.csv", series_csv(series).as_bytes())?;
    let mut s = String::from("direction,count,mean_score,bandwidth\n");
    for (name, g) in &groups {
        match g {
            Some(g) => {
                let _ = writeln!(s, "{name},{},{},{}", g.count, format_number(g.mean_score), format_number(g.bandwidth));
                println!("{name:>3}: {} exposed loans, mean score {:.4}", g.count, g.mean_score);
            }
            None => {
                let _ = writeln!(s, "{name},0,,");
                a.dir.warn(format!("no scored loans with {name}-exposure to a defaulter"));
            }
        }
    }
    a.dir.write("exposure_summary.csv", s.as_bytes())?;
    a.dir.manifest.results.push(("weighted".into(), weighted.to_string()));
    a.finish()
}
