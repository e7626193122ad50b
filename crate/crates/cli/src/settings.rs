//! Config loading, analysis settings and grid expansion.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use multicredit::data::{SPLIT_KEYS, SYNTH_KEYS};
use multicredit::fusion::MODEL_KEYS;
use multicredit::{Config, ConfigError};

use crate::manifest::RESERVED_PREFIXES;

/// Analysis and grid keys.
pub const RUN_KEYS: &[&str] = &[
    "eval_split",
    "bootstrap_replicates",
    "shap_mode",
    "shap_background",
    "shap_instances",
    "shap_samples",
    "density_bins",
    "exposure_weighted",
    "grid_cap",
];

pub const GRID_PREFIX: &str = "grid.";
pub const DEFAULT_GRID_CAP: usize = 512;

/// Global flags shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Globals {
    pub seed: Option<u64>,
    pub jobs: usize,
    pub force: bool,
    pub sets: Vec<String>,
}

/// Reads `path` (a config or a manifest), applies `--set` overrides and
/// `--seed`, and rejects unknown keys.
pub fn load_config(path: Option<&Path>, globals: &Globals) -> Result<Config> {
    let mut config = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let parsed = Config::parse(&text).with_context(|| format!("parsing config {}", p.display()))?;
            parsed
                .iter()
                .filter(|(k, _)| !RESERVED_PREFIXES.iter().any(|r| k.starts_with(r)))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        }
        None => Config::new(),
    };
    for s in &globals.sets {
        config.apply_override(s).with_context(|| format!("--set {s}"))?;
    }
    if let Some(seed) = globals.seed {
        for key in ["synth_seed", "split_seed", "seed"] {
            config.set(key, seed.to_string());
        }
    }
    let known: Vec<&str> = MODEL_KEYS.iter().chain(SYNTH_KEYS).chain(SPLIT_KEYS).chain(RUN_KEYS).copied().collect();
    let unknown = config.unknown_keys(&known, &[GRID_PREFIX]);
    if let Some(k) = unknown.first() {
        return Err(ConfigError::Unknown(k.to_string())).context("checking config keys");
    }
    Ok(config)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            _ => Err(format!("unknown split `{s}` (expected train|validation|test)")),
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapMode {
    Auto,
    Exact,
    Sampling,
}

impl FromStr for ShapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Self::Auto),
            "exact" => Ok(Self::Exact),
            "sampling" => Ok(Self::Sampling),
            _ => Err(format!("unknown Shapley mode `{s}` (expected auto|exact|sampling)")),
        }
    }
}

/// Settings of the analysis commands.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub split: Partition,
    pub bootstrap_replicates: usize,
    pub shap_mode: ShapMode,
    pub shap_background: usize,
    pub shap_instances: usize,
    pub shap_samples: usize,
    pub density_bins: usize,
    pub exposure_weighted: bool,
    pub grid_cap: usize,
}

impl RunSettings {
    pub fn from_config(c: &Config) -> Result<Self, ConfigError> {
        let s = Self {
            split: c.parse_or("eval_split", Partition::Test)?,
            bootstrap_replicates: c.parse_or("bootstrap_replicates", multicredit::eval::BOOTSTRAP_REPLICATES)?,
            shap_mode: c.parse_or("shap_mode", ShapMode::Auto)?,
            shap_background: c.parse_or("shap_background", 50)?,
            shap_instances: c.parse_or("shap_instances", 20)?,
            shap_samples: c.parse_or("shap_samples", 200)?,
            density_bins: c.parse_or("density_bins", 20)?,
            exposure_weighted: c.parse_or("exposure_weighted", false)?,
            grid_cap: c.parse_or("grid_cap", DEFAULT_GRID_CAP)?,
        };
        for (key, v) in [
            ("bootstrap_replicates", s.bootstrap_replicates),
            ("shap_background", s.shap_background),
            ("shap_instances", s.shap_instances),
            ("shap_samples", s.shap_samples),
            ("density_bins", s.density_bins),
        ] {
            if v == 0 {
                return Err(ConfigError::value(key, "must be positive"));
            }
        }
        Ok(s)
    }
}

/// One grid trial: the assignments it makes and its full config.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub assignments: Vec<(String, String)>,
    pub config: Config,
}

impl Trial {
    /// `k=v` pairs joined by `;`, the tie-break key.
    pub fn label(&self) -> String {
        self.assignments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Expands `grid.<key> = v1|v2|...` entries into the Cartesian product of
/// trials, keys in lexical order and the last key varying fastest. A config
/// without grid keys is a single trial.
pub fn expand_grid(config: &Config, cap: usize) -> Result<Vec<Trial>> {
    let mut base = Config::new();
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for (k, v) in config.iter() {
        match k.strip_prefix(GRID_PREFIX) {
            Some(key) => {
                if !MODEL_KEYS.contains(&key) {
                    bail!("grid key `{key}` is not a model key");
                }
                let values: Vec<String> = v.split('|').map(|s| s.trim().to_string()).collect();
                if values.iter().any(String::is_empty) {
                    bail!("grid key `{key}` has an empty value in `{v}`");
                }
                axes.push((key.to_string(), values));
            }
            None => base.set(k, v),
        }
    }
    let total = axes
        .iter()
        .try_fold(1usize, |acc, (_, v)| acc.checked_mul(v.len()))
        .unwrap_or(usize::MAX);
    if total > cap {
        bail!("grid has {total} trials, above the cap of {cap}; narrow the grid or raise grid_cap");
    }
    let mut trials = Vec::with_capacity(total);
    for index in 0..total {
        let mut rest = index;
        let mut assignments = vec![(String::new(), String::new()); axes.len()];
        for (a, (key, values)) in axes.iter().enumerate().rev() {
            assignments[a] = (key.clone(), values[rest % values.len()].clone());
            rest /= values.len();
        }
        let mut c = base.clone();
        for (k, v) in &assignments {
            c.set(k, v.as_str());
        }
        trials.push(Trial {
            index,
            assignments,
            config: c,
        });
    }
    Ok(trials)
}
