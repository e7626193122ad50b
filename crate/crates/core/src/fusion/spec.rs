use std::fmt;
use std::str::FromStr;

use crate::config::{format_sizes, parse_sizes, Config, ConfigError};
use crate::gnn::{GnnConfig, GnnKind};
use crate::graph::{Layer, LayerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Unimodal,
    Bimodal,
    BaselineLr,
    BaselineDnn,
}

impl Mode {
    pub fn uses_graph(self) -> bool {
        matches!(self, Self::Unimodal | Self::Bimodal)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unimodal" => Ok(Self::Unimodal),
            "bimodal" => Ok(Self::Bimodal),
            "baseline-lr" => Ok(Self::BaselineLr),
            "baseline-dnn" => Ok(Self::BaselineDnn),
            other => Err(format!("unknown mode `{other}` (unimodal|bimodal|baseline-lr|baseline-dnn)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unimodal => "unimodal",
            Self::Bimodal => "bimodal",
            Self::BaselineLr => "baseline-lr",
            Self::BaselineDnn => "baseline-dnn",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    SimpleConcat,
    SimpleConcatAtt,
    HybridConcat,
    HybridConcatAtt,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Self::SimpleConcat,
        Self::SimpleConcatAtt,
        Self::HybridConcat,
        Self::HybridConcatAtt,
    ];

    pub fn has_attention(self) -> bool {
        matches!(self, Self::SimpleConcatAtt | Self::HybridConcatAtt)
    }

    /// Hybrid strategies concatenate the raw snapshot embeddings before network A.
    pub fn is_hybrid(self) -> bool {
        matches!(self, Self::HybridConcat | Self::HybridConcatAtt)
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple-concat" | "s1" => Ok(Self::SimpleConcat),
            "simple-concat-att" | "s2" => Ok(Self::SimpleConcatAtt),
            "hybrid-concat" | "s3" => Ok(Self::HybridConcat),
            "hybrid-concat-att" | "s4" => Ok(Self::HybridConcatAtt),
            other => Err(format!(
                "unknown strategy `{other}` (simple-concat|simple-concat-att|hybrid-concat|hybrid-concat-att)"
            )),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SimpleConcat => "simple-concat",
            Self::SimpleConcatAtt => "simple-concat-att",
            Self::HybridConcat => "hybrid-concat",
            Self::HybridConcatAtt => "hybrid-concat-att",
        })
    }
}

/// Which modality supplies the attention queries in S2/S4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuerySide {
    Network,
    Tabular,
}

impl FromStr for QuerySide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "network" => Ok(Self::Network),
            "tabular" => Ok(Self::Tabular),
            other => Err(format!("unknown query side `{other}` (network|tabular)")),
        }
    }
}

impl fmt::Display for QuerySide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Network => "network",
            Self::Tabular => "tabular",
        })
    }
}

pub fn parse_layers(s: &str) -> Result<Vec<Layer>, String> {
    match s.to_ascii_lowercase().as_str() {
        "ft" => Ok(vec![Layer::Ft]),
        "co" => Ok(vec![Layer::Co]),
        "ft+co" | "co+ft" | "ft,co" => Ok(vec![Layer::Ft, Layer::Co]),
        other => Err(format!("unknown layer set `{other}` (ft|co|ft+co)")),
    }
}

pub fn format_layers(layers: &[Layer]) -> String {
    layers
        .iter()
        .map(|l| l.to_string().to_ascii_lowercase())
        .collect::<Vec<_>>()
        .join("+")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EdgeMode {
    pub directed: bool,
    pub weighted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub mode: Mode,
    pub gnn: GnnKind,
    pub strategy: Strategy,
    pub layers: Vec<Layer>,
    pub edge_mode: EdgeMode,
    pub depth: usize,
    pub heads: usize,
    pub hidden: usize,
    /// `None` learns epsilon.
    pub gin_epsilon: Option<f64>,
    pub share_instances: bool,
    pub net_a: Vec<usize>,
    pub net_b: Vec<usize>,
    pub fnn: Vec<usize>,
    pub dnn: Vec<usize>,
    pub token_width: usize,
    pub key_dim: usize,
    pub query_side: QuerySide,
    pub dropout: f64,
    pub train: TrainSettings,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            mode: Mode::Bimodal,
            gnn: GnnKind::Gat,
            strategy: Strategy::HybridConcatAtt,
            layers: vec![Layer::Ft, Layer::Co],
            edge_mode: EdgeMode {
                directed: true,
                weighted: true,
            },
            depth: 1,
            heads: 2,
            hidden: 16,
            gin_epsilon: None,
            share_instances: false,
            net_a: vec![64, 32],
            net_b: vec![64, 32],
            fnn: vec![32],
            dnn: vec![64, 32],
            token_width: 16,
            key_dim: 16,
            query_side: QuerySide::Network,
            dropout: 0.25,
            train: TrainSettings {
                learning_rate: 0.005,
                epochs: 100,
                batch_size: 256,
                patience: 10,
                seed: 42,
            },
        }
    }
}

/// Keys read by [`ModelSpec::from_config`].
pub const MODEL_KEYS: &[&str] = &[
    "mode",
    "gnn",
    "strategy",
    "layers",
    "directed",
    "weighted",
    "depth",
    "heads",
    "hidden",
    "gin_epsilon",
    "share_instances",
    "net_a",
    "net_b",
    "fnn",
    "dnn",
    "token_width",
    "key_dim",
    "query_side",
    "dropout",
    "learning_rate",
    "epochs",
    "batch_size",
    "patience",
    "seed",
];

impl ModelSpec {
    pub fn from_config(config: &Config) -> Result<Self, ConfigError> {
        let d = Self::default();
        let sizes = |key: &str, default: &[usize]| -> Result<Vec<usize>, ConfigError> {
            config.get(key).map_or(Ok(default.to_vec()), |v| parse_sizes(key, v))
        };
        let gin_epsilon = match config.get("gin_epsilon") {
            None | Some("learn") => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|e| ConfigError::value("gin_epsilon", format!("`{v}`: {e}")))?,
            ),
        };
        let layers = match config.get("layers") {
            None => d.layers.clone(),
            Some(v) => parse_layers(v).map_err(|e| ConfigError::value("layers", e))?,
        };
        let spec = Self {
            mode: config.parse_or("mode", d.mode)?,
            gnn: config.parse_or("gnn", d.gnn)?,
            strategy: config.parse_or("strategy", d.strategy)?,
            layers,
            edge_mode: EdgeMode {
                directed: config.parse_or("directed", d.edge_mode.directed)?,
                weighted: config.parse_or("weighted", d.edge_mode.weighted)?,
            },
            depth: config.parse_or("depth", d.depth)?,
            heads: config.parse_or("heads", d.heads)?,
            hidden: config.parse_or("hidden", d.hidden)?,
            gin_epsilon,
            share_instances: config.parse_or("share_instances", d.share_instances)?,
            net_a: sizes("net_a", &d.net_a)?,
            net_b: sizes("net_b", &d.net_b)?,
            fnn: sizes("fnn", &d.fnn)?,
            dnn: sizes("dnn", &d.dnn)?,
            token_width: config.parse_or("token_width", d.token_width)?,
            key_dim: config.parse_or("key_dim", d.key_dim)?,
            query_side: config.parse_or("query_side", d.query_side)?,
            dropout: config.parse_or("dropout", d.dropout)?,
            train: TrainSettings {
                learning_rate: config.parse_or("learning_rate", d.train.learning_rate)?,
                epochs: config.parse_or("epochs", d.train.epochs)?,
                batch_size: config.parse_or("batch_size", d.train.batch_size)?,
                patience: config.parse_or("patience", d.train.patience)?,
                seed: config.parse_or("seed", d.train.seed)?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("mode", self.mode.to_string());
        c.set("gnn", self.gnn.to_string());
        c.set("strategy", self.strategy.to_string());
        c.set("layers", format_layers(&self.layers));
        c.set("directed", self.edge_mode.directed.to_string());
        c.set("weighted", self.edge_mode.weighted.to_string());
        c.set("depth", self.depth.to_string());
        c.set("heads", self.heads.to_string());
        c.set("hidden", self.hidden.to_string());
        c.set("gin_epsilon", self.gin_epsilon.map_or("learn".to_string(), |e| e.to_string()));
        c.set("share_instances", self.share_instances.to_string());
        c.set("net_a", format_sizes(&self.net_a));
        c.set("net_b", format_sizes(&self.net_b));
        c.set("fnn", format_sizes(&self.fnn));
        c.set("dnn", format_sizes(&self.dnn));
        c.set("token_width", self.token_width.to_string());
        c.set("key_dim", self.key_dim.to_string());
        c.set("query_side", self.query_side.to_string());
        c.set("dropout", self.dropout.to_string());
        c.set("learning_rate", self.train.learning_rate.to_string());
        c.set("epochs", self.train.epochs.to_string());
        c.set("batch_size", self.train.batch_size.to_string());
        c.set("patience", self.train.patience.to_string());
        c.set("seed", self.train.seed.to_string());
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=2).contains(&self.depth) {
            return Err(ConfigError::value("depth", "must be 1 or 2"));
        }
        for (key, v) in [
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("token_width", self.token_width),
            ("key_dim", self.key_dim),
            ("batch_size", self.train.batch_size),
        ] {
            if v == 0 {
                return Err(ConfigError::value(key, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ConfigError::value("dropout", "must lie in [0, 1)"));
        }
        if !(self.train.learning_rate >= 0.0 && self.train.learning_rate.is_finite()) {
            return Err(ConfigError::value("learning_rate", "must be a non-negative number"));
        }
        if self.mode == Mode::Bimodal && (self.net_a.is_empty() || self.net_b.is_empty()) {
            return Err(ConfigError::value(
                if self.net_a.is_empty() { "net_a" } else { "net_b" },
                "bimodal models need at least one layer in networks A and B",
            ));
        }
        Ok(())
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Ft => LayerKind::ft(self.edge_mode.directed, self.edge_mode.weighted),
                Layer::Co => LayerKind::co(),
            })
            .collect()
    }

    pub fn gnn_config(&self) -> GnnConfig {
        GnnConfig {
            kind: self.gnn,
            hidden: self.hidden,
            heads: self.heads,
            depth: self.depth,
            gin_epsilon: self.gin_epsilon,
            dropout: self.dropout,
        }
    }

    /// Short human label such as `bimodal hybrid-concat-att gat ft+co`.
    pub fn label(&self) -> String {
        match self.mode {
            Mode::BaselineLr | Mode::BaselineDnn => self.mode.to_string(),
            Mode::Unimodal => format!("unimodal {} {}", self.gnn, format_layers(&self.layers)),
            Mode::Bimodal => format!("bimodal {} {} {}", self.strategy, self.gnn, format_layers(&self.layers)),
        }
    }
}
