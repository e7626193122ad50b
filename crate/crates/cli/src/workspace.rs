//! Input and output directories: data sets, trained model directories and
//! the output directory guard.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use multicredit::autodiff::ParamSet;
use multicredit::data::{
    read_loans, read_ownerships, read_transactions, LoanTable, OwnershipRow, PipelineStats, SplitConfig,
    TransactionRow,
};
use multicredit::{Config, Model, ModelSpec};

use crate::manifest::{digest, digest_file, RunManifest, MANIFEST_FILE};

pub const LOANS_FILE: &str = "loans.csv";
pub const TRANSACTIONS_FILE: &str = "transactions.csv";
pub const OWNERSHIP_FILE: &str = "ownership.csv";
pub const MODEL_FILE: &str = "model.bin";
pub const PIPELINE_FILE: &str = "pipeline.txt";

/// A directory the command writes into, plus the manifest it will leave.
pub struct OutDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
}

impl OutDir {
    /// Creates `path`. A non-empty directory is refused without `force`, and
    /// so is any directory that is also one of the inputs.
    pub fn create(path: &Path, force: bool, inputs: &[&Path], manifest: RunManifest) -> Result<Self> {
        if path.exists() {
            let canonical = fs::canonicalize(path)?;
            for input in inputs {
                if fs::canonicalize(input).is_ok_and(|c| c == canonical) {
                    bail!(
                        "output directory {} is also an input; inputs are never modified, choose another --out",
                        path.display()
                    );
                }
            }
            let occupied = fs::read_dir(path)
                .with_context(|| format!("reading {}", path.display()))?
                .next()
                .is_some();
            if occupied && !force {
                bail!("output directory {} is not empty; pass --force to overwrite", path.display());
            }
        }
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            manifest,
        })
    }

    /// Writes `name` and records its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.push((name.to_string(), digest(bytes)));
        Ok(())
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        eprintln!("warning: {message}");
        self.manifest.warnings.push(message);
    }

    pub fn finish(self) -> Result<RunManifest> {
        let path = self.path.join(MANIFEST_FILE);
        fs::write(&path, self.manifest.to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}

/// Loans with their transaction and ownership relations.
pub struct DataSet {
    pub loans: LoanTable,
    pub transactions: Vec<TransactionRow>,
    pub ownerships: Vec<OwnershipRow>,
    /// `(file name, digest)` of the three files.
    pub digests: Vec<(String, String)>,
}

impl DataSet {
    pub fn read(dir: &Path) -> Result<Self> {
        let open = |name: &str| -> Result<BufReader<File>> {
            let path = dir.join(name);
            Ok(BufReader::new(File::open(&path).with_context(|| format!("opening {}", path.display()))?))
        };
        let loans = read_loans(open(LOANS_FILE)?).with_context(|| format!("reading {}", dir.join(LOANS_FILE).display()))?;
        let transactions = read_transactions(open(TRANSACTIONS_FILE)?)
            .with_context(|| format!("reading {}", dir.join(TRANSACTIONS_FILE).display()))?;
        let ownerships = read_ownerships(open(OWNERSHIP_FILE)?)
            .with_context(|| format!("reading {}", dir.join(OWNERSHIP_FILE).display()))?;
        let digests = [LOANS_FILE, TRANSACTIONS_FILE, OWNERSHIP_FILE]
            .iter()
            .map(|n| Ok((n.to_string(), digest_file(&dir.join(n))?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            loans,
            transactions,
            ownerships,
            digests,
        })
    }

    /// Refuses specs whose relation layers have nothing to build from.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if !spec.mode.uses_graph() {
            return Ok(());
        }
        for kind in spec.layer_kinds() {
            let empty = match kind.layer {
                multicredit::graph::Layer::Ft => self.transactions.is_empty(),
                multicredit::graph::Layer::Co => self.ownerships.is_empty(),
            };
            if empty {
                bail!(
                    "spec `{}` uses the {} layer but the data has no {} rows",
                    spec.label(),
                    kind.layer,
                    match kind.layer {
                        multicredit::graph::Layer::Ft => "transaction",
                        multicredit::graph::Layer::Co => "ownership",
                    }
                );
            }
        }
        Ok(())
    }
}

/// A trained model directory, verified against its manifest.
pub struct ModelDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
    pub spec: ModelSpec,
    pub split: SplitConfig,
    pub stats: PipelineStats,
    pub model: Model,
}

impl ModelDir {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::read(dir)?;
        if manifest.command != "train" {
            bail!(
                "{} holds a `{}` run, not a trained model",
                dir.display(),
                manifest.command
            );
        }
        for name in [MODEL_FILE, PIPELINE_FILE] {
            let recorded = manifest
                .artifact(name)
                .with_context(|| format!("manifest in {} does not list {name}", dir.display()))?;
            let actual = digest_file(&dir.join(name))?;
            if actual != recorded {
                bail!(
                    "digest mismatch for {name}: manifest has {recorded}, file has {actual}; \
                     refusing to score with mismatched model/pipeline"
                );
            }
        }
        let spec = ModelSpec::from_config(&manifest.config).context("model spec in manifest")?;
        let split = SplitConfig::from_config(&manifest.config).context("split settings in manifest")?;
        let stats = PipelineStats::from_text(&fs::read_to_string(dir.join(PIPELINE_FILE))?)
            .with_context(|| format!("reading {}", dir.join(PIPELINE_FILE).display()))?;
        let mut model = Model::assemble(&spec, stats.feature_names().len())?;
        let params = ParamSet::read_from(BufReader::new(File::open(dir.join(MODEL_FILE))?))
            .with_context(|| format!("reading {}", dir.join(MODEL_FILE).display()))?;
        model.load_params(params)?;
        Ok(Self {
            path: dir.to_path_buf(),
            manifest,
            spec,
            split,
            stats,
            model,
        })
    }

    /// Notes where `data` differs from the files the model was trained on.
    pub fn data_drift(&self, data: &DataSet) -> Vec<String> {
        data.digests
            .iter()
            .filter(|(name, d)| self.manifest.input(name).is_some_and(|t| t != d))
            .map(|(name, _)| format!("{name} differs from the file the model was trained on"))
            .collect()
    }

    /// Model and split keys in `config` that disagree with the trained model.
    pub fn overridden_keys(&self, config: &Config) -> Vec<String> {
        config
            .iter()
            .filter(|(k, v)| self.manifest.config.get(k).is_some_and(|t| t != *v))
            .map(|(k, v)| {
                format!(
                    "`{k} = {v}` ignored; the model was trained with `{k} = {}`",
                    self.manifest.config.get(k).unwrap_or_default()
                )
            })
            .collect()
    }
}
