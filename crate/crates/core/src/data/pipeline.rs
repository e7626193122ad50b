//! Training-split-fitted cleaning: outlier capping, null handling, min-max
//! scaling, one-hot encoding and correlation pruning.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{DataError, FeatureKind, FeatureMatrix, LoanTable, RawColumn};

pub const CORRELATION_THRESHOLD: f64 = 0.70;
pub const NA_LEVEL: &str = "N/A";

/// Linear interpolation between order statistics; `sorted` must be ascending.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Caps {
    pub p1: f64,
    pub p99: f64,
}

impl Caps {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            p1: percentile(&v, 0.01),
            p99: percentile(&v, 0.99),
        })
    }

    pub fn apply(&self, v: f64) -> f64 {
        v.clamp(self.p1, self.p99)
    }
}

/// Result of [`cap_outliers`]; `caps` is `None` when the column had no values.
#[derive(Clone, Debug, PartialEq)]
pub struct Capped {
    pub column: Vec<Option<f64>>,
    pub caps: Option<Caps>,
    pub warning: Option<String>,
}

/// Clamps into `[p1, p99]`, fitting the caps from `column` unless `fitted` is given.
pub fn cap_outliers(column: &[Option<f64>], fitted: Option<Caps>) -> Capped {
    let caps = fitted.or_else(|| Caps::fit(column.iter().flatten().copied()));
    match caps {
        None => Capped {
            column: column.to_vec(),
            caps: None,
            warning: Some("all values null; capping skipped".into()),
        },
        Some(c) => Capped {
            column: column.iter().map(|v| v.map(|x| c.apply(x))).collect(),
            caps: Some(c),
            warning: None,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            Self { min: 0.0, max: 0.0 }
        } else {
            Self { min, max }
        }
    }

    /// `(x - min)/(max - min)` clamped to `[0, 1]`; constant ranges map to 0.
    pub fn apply(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if range <= 0.0 {
            0.0
        } else {
            ((v - self.min) / range).clamp(0.0, 1.0)
        }
    }
}

pub fn minmax_scale(column: &[f64], fitted: Option<MinMax>) -> (Vec<f64>, MinMax) {
    let mm = fitted.unwrap_or_else(|| MinMax::fit(column));
    (column.iter().map(|&v| mm.apply(v)).collect(), mm)
}

/// Null-handling policy keyed on feature kind and training null fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NullRule {
    ImputeMode,
    ImputeMedian,
    NaLevel,
    ImputeMedianWithDummy,
    DropWithDummy,
    Drop,
}

impl NullRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ImputeMode => "impute_mode",
            Self::ImputeMedian => "impute_median",
            Self::NaLevel => "na_level",
            Self::ImputeMedianWithDummy => "impute_median_with_dummy",
            Self::DropWithDummy => "drop_with_dummy",
            Self::Drop => "drop",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Self::ImputeMode,
            Self::ImputeMedian,
            Self::NaLevel,
            Self::ImputeMedianWithDummy,
            Self::DropWithDummy,
            Self::Drop,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }

    pub fn action(&self) -> FeatureAction {
        match self {
            Self::ImputeMode | Self::ImputeMedian | Self::NaLevel => FeatureAction::Kept,
            Self::ImputeMedianWithDummy => FeatureAction::KeptWithDummy,
            Self::DropWithDummy => FeatureAction::DroppedWithDummy,
            Self::Drop => FeatureAction::Dropped,
        }
    }

    pub fn keeps_values(&self) -> bool {
        matches!(self.action(), FeatureAction::Kept | FeatureAction::KeptWithDummy)
    }

    pub fn adds_dummy(&self) -> bool {
        matches!(
            self.action(),
            FeatureAction::KeptWithDummy | FeatureAction::DroppedWithDummy
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureAction {
    Kept,
    KeptWithDummy,
    DroppedWithDummy,
    Dropped,
}

/// Bands are closed on the left: `[0, .05)`, `[.05, .40)`, `[.40, .95)`, `[.95, 1]`.
pub fn null_rule(kind: FeatureKind, null_fraction: f64) -> NullRule {
    match (kind, null_fraction) {
        (FeatureKind::Categorical, f) if f < 0.05 => NullRule::ImputeMode,
        (FeatureKind::Numerical, f) if f < 0.05 => NullRule::ImputeMedian,
        (FeatureKind::Categorical, f) if f < 0.40 => NullRule::NaLevel,
        (FeatureKind::Numerical, f) if f < 0.40 => NullRule::ImputeMedianWithDummy,
        (_, f) if f < 0.95 => NullRule::DropWithDummy,
        _ => NullRule::Drop,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NullFill {
    Median(f64),
    Mode(String),
    NaLevel,
    Nothing,
}

/// Column(s) produced by [`handle_nulls`].
#[derive(Clone, Debug, PartialEq)]
pub struct NullOutcome {
    pub rule: NullRule,
    pub fill: NullFill,
    /// Imputed column when the feature is kept.
    pub values: Option<RawColumn>,
    /// 1.0 where the raw value was missing.
    pub missing_dummy: Option<Vec<f64>>,
}

fn mode(values: impl Iterator<Item = String>) -> Option<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    // BTreeMap iteration is sorted, so max_by_key with `>` keeps the smallest label on ties.
    counts
        .into_iter()
        .fold(None, |best: Option<(String, usize)>, (k, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((k, c)),
        })
        .map(|(k, _)| k)
}

fn median(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(percentile(&v, 0.5))
}

/// Applies the null policy for `null_fraction` to `column`, fitting the
/// imputation value from the column unless `fitted` is supplied.
pub fn handle_nulls(column: &RawColumn, null_fraction: f64, fitted: Option<&NullFill>) -> NullOutcome {
    let rule = null_rule(column.kind(), null_fraction);
    let missing_dummy = rule.adds_dummy().then(|| {
        (0..column.len())
            .map(|r| if column.is_null(r) { 1.0 } else { 0.0 })
            .collect()
    });
    let (fill, values) = match (column, rule) {
        (_, r) if !r.keeps_values() => (NullFill::Nothing, None),
        (RawColumn::Numeric(v), _) => {
            let m = match fitted {
                Some(NullFill::Median(m)) => *m,
                _ => median(v.iter().flatten().copied()).unwrap_or(0.0),
            };
            let filled = v.iter().map(|x| Some(x.unwrap_or(m))).collect();
            (NullFill::Median(m), Some(RawColumn::Numeric(filled)))
        }
        (RawColumn::Categorical(v), NullRule::NaLevel) => {
            let filled = v
                .iter()
                .map(|x| Some(x.clone().unwrap_or_else(|| NA_LEVEL.to_string())))
                .collect();
            (NullFill::NaLevel, Some(RawColumn::Categorical(filled)))
        }
        (RawColumn::Categorical(v), _) => {
            let m = match fitted {
                Some(NullFill::Mode(m)) => m.clone(),
                _ => mode(v.iter().flatten().cloned()).unwrap_or_else(|| NA_LEVEL.to_string()),
            };
            let filled = v.iter().map(|x| Some(x.clone().unwrap_or_else(|| m.clone()))).collect();
            (NullFill::Mode(m), Some(RawColumn::Categorical(filled)))
        }
    };
    NullOutcome {
        rule,
        fill,
        values,
        missing_dummy,
    }
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Greedy correlation pruning.
///
/// Pairs with `|ρ| > threshold` are visited in descending `|ρ|` (index order
/// breaks ties); from each pair whose members both survive so far, the one
/// less correlated with `target` is dropped (the later index on exact ties).
/// Returns kept column indices in ascending order.
pub fn prune_correlated(columns: &[Vec<f64>], target: &[f64], threshold: f64) -> Vec<usize> {
    let n = columns.len();
    let target_corr: Vec<f64> = columns.iter().map(|c| pearson(c, target).abs()).collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(&columns[i], &columns[j]).abs();
            if r > threshold {
                pairs.push((r, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut kept = vec![true; n];
    for (_, i, j) in pairs {
        if !(kept[i] && kept[j]) {
            continue;
        }
        if target_corr[i] >= target_corr[j] {
            kept[j] = false;
        } else {
            kept[i] = false;
        }
    }
    (0..n).filter(|&i| kept[i]).collect()
}

/// Fitted statistics of one raw feature.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub name: String,
    pub kind: FeatureKind,
    pub null_fraction: f64,
    pub rule: NullRule,
    pub caps: Option<Caps>,
    pub fill: NullFill,
    pub scale: Option<MinMax>,
    pub levels: Vec<String>,
}

/// A model input column derived from a raw feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OutputColumn {
    Value(String),
    Missing(String),
    Level(String, String),
}

impl OutputColumn {
    pub fn feature(&self) -> &str {
        match self {
            Self::Value(f) | Self::Missing(f) | Self::Level(f, _) => f,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Value(f) => f.clone(),
            Self::Missing(f) => format!("{f}_missing"),
            Self::Level(f, l) => {
                let slug: String = l
                    .to_lowercase()
                    .chars()
                    .filter_map(|c| match c {
                        'a'..='z' | '0'..='9' => Some(c),
                        '/' => None,
                        _ => Some('_'),
                    })
                    .collect();
                format!("{f}_{slug}")
            }
        }
    }

    fn encode(&self) -> String {
        match self {
            Self::Value(f) => format!("value:{f}"),
            Self::Missing(f) => format!("missing:{f}"),
            Self::Level(f, l) => format!("level:{f}:{l}"),
        }
    }

    fn decode(s: &str) -> Option<Self> {
        let mut it = s.splitn(3, ':');
        match (it.next()?, it.next()?, it.next()) {
            ("value", f, None) => Some(Self::Value(f.into())),
            ("missing", f, None) => Some(Self::Missing(f.into())),
            ("level", f, Some(l)) => Some(Self::Level(f.into(), l.into())),
            _ => None,
        }
    }
}

/// Everything fitted on the training split; applied unchanged to any split.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineStats {
    pub correlation_threshold: f64,
    pub features: Vec<FeatureStats>,
    pub outputs: Vec<OutputColumn>,
    /// `(column name, reason)` for every dropped raw feature or pruned column.
    pub dropped: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl PipelineStats {
    /// Fits every statistic on `train_rows` of `table` only.
    pub fn fit(table: &LoanTable, train_rows: &[usize]) -> Result<Self, DataError> {
        if train_rows.is_empty() {
            return Err(DataError::Invalid("cannot fit pipeline on an empty training split".into()));
        }
        let mut features = Vec::new();
        let mut candidates = Vec::new();
        let mut dropped = Vec::new();
        let mut warnings = Vec::new();
        for (name, column) in table.feature_names.iter().zip(&table.columns) {
            let train = subset(column, train_rows);
            let nulls = (0..train.len()).filter(|&r| train.is_null(r)).count();
            let null_fraction = nulls as f64 / train.len() as f64;
            let mut stats = FeatureStats {
                name: name.clone(),
                kind: column.kind(),
                null_fraction,
                rule: null_rule(column.kind(), null_fraction),
                caps: None,
                fill: NullFill::Nothing,
                scale: None,
                levels: Vec::new(),
            };
            if let RawColumn::Numeric(v) = &train {
                if stats.rule.keeps_values() {
                    let capped = cap_outliers(v, None);
                    if let Some(w) = capped.warning {
                        warnings.push(format!("{name}: {w}"));
                    }
                    stats.caps = capped.caps;
                    let outcome = handle_nulls(&RawColumn::Numeric(capped.column), null_fraction, None);
                    stats.fill = outcome.fill;
                    if let Some(RawColumn::Numeric(filled)) = outcome.values {
                        let filled: Vec<f64> = filled.into_iter().flatten().collect();
                        stats.scale = Some(MinMax::fit(&filled));
                    }
                }
            } else {
                let outcome = handle_nulls(&train, null_fraction, None);
                stats.fill = outcome.fill;
                if let Some(RawColumn::Categorical(filled)) = outcome.values {
                    let mut levels: Vec<String> = filled.into_iter().flatten().collect();
                    levels.sort();
                    levels.dedup();
                    stats.levels = levels;
                }
            }
            match stats.rule.action() {
                FeatureAction::Dropped => dropped.push((
                    name.clone(),
                    format!("null fraction {null_fraction:.4} >= 0.95"),
                )),
                FeatureAction::DroppedWithDummy => dropped.push((
                    name.clone(),
                    format!("null fraction {null_fraction:.4} in [0.40, 0.95); missing dummy added"),
                )),
                _ => {}
            }
            if stats.rule.keeps_values() {
                match stats.kind {
                    FeatureKind::Numerical => candidates.push(OutputColumn::Value(name.clone())),
                    FeatureKind::Categorical => candidates.extend(
                        stats
                            .levels
                            .iter()
                            .map(|l| OutputColumn::Level(name.clone(), l.clone())),
                    ),
                }
            }
            if stats.rule.adds_dummy() {
                candidates.push(OutputColumn::Missing(name.clone()));
            }
            features.push(stats);
        }
        let mut stats = Self {
            correlation_threshold: CORRELATION_THRESHOLD,
            features,
            outputs: candidates,
            dropped,
            warnings,
        };
        let train_matrix = stats.transform_rows(table, train_rows)?;
        let target: Vec<f64> = train_rows
            .iter()
            .map(|&r| if table.records[r].default { 1.0 } else { 0.0 })
            .collect();
        let columns: Vec<Vec<f64>> = (0..train_matrix.cols()).map(|c| train_matrix.column(c)).collect();
        let kept = prune_correlated(&columns, &target, stats.correlation_threshold);
        let mut outputs = Vec::with_capacity(kept.len());
        let mut k = kept.iter().peekable();
        for (c, out) in stats.outputs.iter().enumerate() {
            if k.peek() == Some(&&c) {
                k.next();
                outputs.push(out.clone());
            } else {
                let partner = kept
                    .iter()
                    .map(|&o| (o, pearson(&columns[c], &columns[o]).abs()))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(o, r)| format!("{} (|rho|={r:.3})", train_matrix.names[o]))
                    .unwrap_or_default();
                stats
                    .dropped
                    .push((out.name(), format!("correlated with {partner}")));
            }
        }
        stats.outputs = outputs;
        Ok(stats)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.outputs.iter().map(OutputColumn::name).collect()
    }

    pub fn transform(&self, table: &LoanTable) -> Result<FeatureMatrix, DataError> {
        let all: Vec<usize> = (0..table.len()).collect();
        self.transform_rows(table, &all)
    }

    pub fn transform_rows(&self, table: &LoanTable, rows: &[usize]) -> Result<FeatureMatrix, DataError> {
        let lookup: BTreeMap<&str, (&FeatureStats, &RawColumn)> = self
            .features
            .iter()
            .map(|f| {
                let pos = table
                    .feature_names
                    .iter()
                    .position(|n| *n == f.name)
                    .ok_or_else(|| DataError::Invalid(format!("input lacks feature `{}`", f.name)))?;
                let col = &table.columns[pos];
                if col.kind() != f.kind && col.kind() == FeatureKind::Categorical {
                    return Err(DataError::Invalid(format!(
                        "feature `{}` was fitted as {} but input is {}",
                        f.name,
                        f.kind,
                        col.kind()
                    )));
                }
                Ok((f.name.as_str(), (f, col)))
            })
            .collect::<Result<_, DataError>>()?;
        let d = self.outputs.len();
        let mut values = vec![0.0; rows.len() * d];
        for (c, out) in self.outputs.iter().enumerate() {
            let (stats, col) = lookup[out.feature()];
            for (i, &r) in rows.iter().enumerate() {
                values[i * d + c] = match out {
                    OutputColumn::Missing(_) => {
                        if col.is_null(r) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    OutputColumn::Value(_) => {
                        let raw = match col {
                            RawColumn::Numeric(v) => v[r],
                            RawColumn::Categorical(_) => None,
                        };
                        let fill = match stats.fill {
                            NullFill::Median(m) => m,
                            _ => 0.0,
                        };
                        let mut x = raw.unwrap_or(fill);
                        if let Some(caps) = stats.caps {
                            x = caps.apply(x);
                        }
                        stats.scale.map_or(x, |s| s.apply(x))
                    }
                    OutputColumn::Level(_, level) => {
                        let value = match col {
                            RawColumn::Categorical(v) => v[r].clone(),
                            RawColumn::Numeric(v) => v[r].map(|x| x.to_string()),
                        };
                        let value = value.unwrap_or_else(|| match &stats.fill {
                            NullFill::Mode(m) => m.clone(),
                            _ => NA_LEVEL.to_string(),
                        });
                        if value == *level {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
            }
        }
        Ok(FeatureMatrix {
            names: self.feature_names(),
            rows: rows.len(),
            values,
        })
    }

    /// Human-readable `feature.statistic = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "_pipeline.percentile = linear");
        let _ = writeln!(s, "_pipeline.correlation_threshold = {}", self.correlation_threshold);
        for f in &self.features {
            let n = &f.name;
            let _ = writeln!(s, "{n}.kind = {}", f.kind);
            let _ = writeln!(s, "{n}.null_fraction = {}", f.null_fraction);
            let _ = writeln!(s, "{n}.null_rule = {}", f.rule.as_str());
            if let Some(c) = f.caps {
                let _ = writeln!(s, "{n}.p1 = {}", c.p1);
                let _ = writeln!(s, "{n}.p99 = {}", c.p99);
            }
            match &f.fill {
                NullFill::Median(m) => {
                    let _ = writeln!(s, "{n}.median = {m}");
                }
                NullFill::Mode(m) => {
                    let _ = writeln!(s, "{n}.mode = {m}");
                }
                NullFill::NaLevel => {
                    let _ = writeln!(s, "{n}.fill = {NA_LEVEL}");
                }
                NullFill::Nothing => {}
            }
            if let Some(mm) = f.scale {
                let _ = writeln!(s, "{n}.min = {}", mm.min);
                let _ = writeln!(s, "{n}.max = {}", mm.max);
            }
            if !f.levels.is_empty() {
                let _ = writeln!(s, "{n}.levels = {}", f.levels.join("|"));
            }
        }
        for (i, o) in self.outputs.iter().enumerate() {
            let _ = writeln!(s, "_output.{i:04} = {}", o.encode());
        }
        for (i, (name, reason)) in self.dropped.iter().enumerate() {
            let _ = writeln!(s, "_dropped.{i:04} = {name}: {reason}");
        }
        for (i, w) in self.warnings.iter().enumerate() {
            let _ = writeln!(s, "_warning.{i:04} = {w}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let bad = |line: usize, msg: &str| DataError::Invalid(format!("pipeline stats line {line}: {msg}"));
        let mut features: Vec<FeatureStats> = Vec::new();
        let mut stats = Self {
            correlation_threshold: CORRELATION_THRESHOLD,
            features: Vec::new(),
            outputs: Vec::new(),
            dropped: Vec::new(),
            warnings: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once(" = ").ok_or_else(|| bad(ln, "missing ` = `"))?;
            let (feature, stat) = key.rsplit_once('.').ok_or_else(|| bad(ln, "key lacks `.`"))?;
            let num = || value.parse::<f64>().map_err(|_| bad(ln, "expected a number"));
            match feature {
                "_pipeline" => {
                    if stat == "correlation_threshold" {
                        stats.correlation_threshold = num()?;
                    }
                    continue;
                }
                "_output" => {
                    stats
                        .outputs
                        .push(OutputColumn::decode(value).ok_or_else(|| bad(ln, "bad output column"))?);
                    continue;
                }
                "_dropped" => {
                    let (n, r) = value.split_once(": ").unwrap_or((value, ""));
                    stats.dropped.push((n.to_string(), r.to_string()));
                    continue;
                }
                "_warning" => {
                    stats.warnings.push(value.to_string());
                    continue;
                }
                _ => {}
            }
            if stat == "kind" {
                let kind: FeatureKind = value.parse()?;
                features.push(FeatureStats {
                    name: feature.to_string(),
                    kind,
                    null_fraction: 0.0,
                    rule: NullRule::Drop,
                    caps: None,
                    fill: NullFill::Nothing,
                    scale: None,
                    levels: Vec::new(),
                });
                continue;
            }
            let f = features
                .last_mut()
                .filter(|f| f.name == feature)
                .ok_or_else(|| bad(ln, "statistic before its `.kind` line"))?;
            match stat {
                "null_fraction" => f.null_fraction = num()?,
                "null_rule" => f.rule = NullRule::parse(value).ok_or_else(|| bad(ln, "unknown null rule"))?,
                "p1" => f.caps = Some(Caps { p1: num()?, p99: f64::INFINITY }),
                "p99" => {
                    let c = f.caps.as_mut().ok_or_else(|| bad(ln, "p99 without p1"))?;
                    c.p99 = num()?;
                }
                "median" => f.fill = NullFill::Median(num()?),
                "mode" => f.fill = NullFill::Mode(value.to_string()),
                "fill" => f.fill = NullFill::NaLevel,
                "min" => f.scale = Some(MinMax { min: num()?, max: f64::INFINITY }),
                "max" => {
                    let s = f.scale.as_mut().ok_or_else(|| bad(ln, "max without min"))?;
                    s.max = num()?;
                }
                "levels" => f.levels = value.split('|').map(String::from).collect(),
                _ => return Err(bad(ln, "unknown statistic")),
            }
        }
        stats.features = features;
        Ok(stats)
    }
}

fn subset(column: &RawColumn, rows: &[usize]) -> RawColumn {
    match column {
        RawColumn::Numeric(v) => RawColumn::Numeric(rows.iter().map(|&r| v[r]).collect()),
        RawColumn::Categorical(v) => RawColumn::Categorical(rows.iter().map(|&r| v[r].clone()).collect()),
    }
}
