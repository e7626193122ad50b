//! Multimodal SME credit scoring over multilayer firm networks.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod fusion;
pub mod gnn;
pub mod graph;
pub mod month;

pub use config::{Config, ConfigError};
pub use fusion::{Model, ModelSpec};
pub use month::YearMonth;
