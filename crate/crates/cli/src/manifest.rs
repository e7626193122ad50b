//! Run manifests: the effective configuration plus seeds, digests and
//! timings, in the same `key = value` format as configs so a manifest can be
//! passed back through `--config` to repeat a run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use multicredit::Config;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Key prefixes owned by the manifest; stripped when it is read as a config.
pub const RESERVED_PREFIXES: &[&str] = &["manifest.", "seed.", "input.", "artifact.", "result.", "warning.", "timing."];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Config,
    pub seeds: Vec<(String, u64)>,
    /// `(file name, digest)` of every input read.
    pub inputs: Vec<(String, String)>,
    /// `(file name, digest)` of every file written next to the manifest.
    pub artifacts: Vec<(String, String)>,
    pub results: Vec<(String, String)>,
    pub warnings: Vec<String>,
    pub timings_ms: Vec<(String, u128)>,
}

pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

pub fn digest_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(digest(&bytes))
}

impl RunManifest {
    pub fn new(command: &str, config: Config) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            ..Self::default()
        }
    }

    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts.iter().find(|(n, _)| n == name).map(|(_, d)| d.as_str())
    }

    pub fn input(&self, name: &str) -> Option<&str> {
        self.inputs.iter().find(|(n, _)| n == name).map(|(_, d)| d.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# multicredit run manifest; pass it to --config to repeat the run\n");
        let _ = writeln!(s, "manifest.command = {}", self.command);
        let _ = writeln!(s, "manifest.version = {}", self.version);
        s.push_str(&self.config.to_string());
        for (k, v) in &self.seeds {
            let _ = writeln!(s, "seed.{k} = {v}");
        }
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "input.{k} = {v}");
        }
        for (k, v) in &self.artifacts {
            let _ = writeln!(s, "artifact.{k} = {v}");
        }
        for (k, v) in &self.results {
            let _ = writeln!(s, "result.{k} = {v}");
        }
        for (i, w) in self.warnings.iter().enumerate() {
            let _ = writeln!(s, "warning.{} = {w}", i + 1);
        }
        for (k, v) in &self.timings_ms {
            let _ = writeln!(s, "timing.{k}_ms = {v}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let all = Config::parse(text)?;
        let mut m = Self::default();
        let mut config = Config::new();
        for (k, v) in all.iter() {
            let owned = (|| -> Option<()> {
                let (prefix, rest) = k.split_once('.')?;
                match prefix {
                    "manifest" if rest == "command" => m.command = v.to_string(),
                    "manifest" if rest == "version" => m.version = v.to_string(),
                    "seed" => m.seeds.push((rest.to_string(), v.parse().ok()?)),
                    "input" => m.inputs.push((rest.to_string(), v.to_string())),
                    "artifact" => m.artifacts.push((rest.to_string(), v.to_string())),
                    "result" => m.results.push((rest.to_string(), v.to_string())),
                    "warning" => m.warnings.push(v.to_string()),
                    "timing" => m
                        .timings_ms
                        .push((rest.trim_end_matches("_ms").to_string(), v.parse().ok()?)),
                    _ => return None,
                }
                Some(())
            })();
            if owned.is_none() {
                if RESERVED_PREFIXES.iter().any(|p| k.starts_with(p)) {
                    bail!("malformed manifest entry `{k} = {v}`");
                }
                config.set(k, v);
            }
        }
        m.config = config;
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        let mut config = Config::new();
        config.set("mode", "bimodal");
        config.set("net_a", "64,32");
        let mut m = RunManifest::new("train", config);
        m.seeds.push(("train".into(), 42));
        m.inputs.push(("loans.csv".into(), digest(b"abc")));
        m.artifacts.push(("model.bin".into(), digest(b"xyz")));
        m.results.push(("best_epoch".into(), "7".into()));
        m.warnings.push("something odd".into());
        m.timings_ms.push(("train".into(), 1234));
        assert_eq!(RunManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(
            digest(b"abc"),
            "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
