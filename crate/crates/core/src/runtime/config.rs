//! Run configuration and topology documents.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{Family, SolveParams, TopologySpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Syntax { path: String, line: usize, column: usize, message: String },
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Field { path: String, line: usize, column: usize, field: String, message: String },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), message: message.into() }
    }

    /// The offending field path, when one is known.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Field { field, .. } | ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. } | ConfigError::Field { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// T-maze episodes with a seeded reward side.
    Tmaze,
    /// Generated grid tasks solved by the root/worker hierarchy.
    Arclite,
    /// T-maze with an operator preference flip between episodes.
    Corrigibility,
    /// Long T-maze run with a rejected layer-0 write halfway through.
    Stability,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Tmaze => "tmaze",
            Scenario::Arclite => "arclite",
            Scenario::Corrigibility => "corrigibility",
            Scenario::Stability => "stability",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Tabular,
    External,
}

/// Everything a run depends on. Tabular runs are a pure function of this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[arg(long, value_enum, default_value_t = Scenario::Tmaze)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ProviderMode::Tabular)]
    pub provider: ProviderMode,
    /// JSON file with external provider settings; environment variables override it.
    #[arg(long)]
    pub provider_config: Option<PathBuf>,
    /// JSON topology document for the grid hierarchy.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Families drawn for in-library grid tasks.
    #[arg(long, value_delimiter = ',', default_values_t = Family::ALL.to_vec())]
    pub families: Vec<Family>,
    /// Families removed from the hypothesis library.
    #[arg(long, value_delimiter = ',', default_values_t = vec![Family::ColorMap, Family::Tile2x2])]
    pub withheld: Vec<Family>,
    /// In-library grid tasks.
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    /// Grid tasks drawn from withheld families.
    #[arg(long, default_value_t = 0)]
    pub withheld_count: usize,
    #[arg(long, default_value_t = 16)]
    pub episodes: u64,
    /// Tick count for the stability scenario.
    #[arg(long, default_value_t = 10_000)]
    pub ticks: u64,
    /// Prior probability that the T-maze reward is on the left.
    #[arg(long, default_value_t = 0.5)]
    pub prior_left: f64,
    /// Episodes completed before the corrigibility flip.
    #[arg(long, default_value_t = 2)]
    pub flip_episode: u64,
    #[arg(long, default_value_t = 200)]
    pub task_budget: u64,
    #[arg(long, default_value_t = 24)]
    pub max_cycles: u64,
    #[arg(long, default_value_t = 0.95)]
    pub stop_mass: f64,
    #[arg(long, default_value = "runs/latest")]
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Tmaze,
            seed: 7,
            provider: ProviderMode::Tabular,
            provider_config: None,
            topology: None,
            families: Family::ALL.to_vec(),
            withheld: vec![Family::ColorMap, Family::Tile2x2],
            count: 50,
            withheld_count: 0,
            episodes: 16,
            ticks: 10_000,
            prior_left: 0.5,
            flip_episode: 2,
            task_budget: 200,
            max_cycles: 24,
            stop_mass: 0.95,
            output: PathBuf::from("runs/latest"),
        }
    }
}

impl RunConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let mut c = Self { scenario, ..Self::default() };
        if scenario == Scenario::Corrigibility {
            c.prior_left = 0.99;
            c.episodes = 4;
        }
        c
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = parse_located(text, path)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&read(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.prior_left > 0.0 && self.prior_left < 1.0) {
            return Err(ConfigError::invalid("prior_left", "must lie strictly between 0 and 1"));
        }
        if !(self.stop_mass > 0.0 && self.stop_mass <= 1.0) {
            return Err(ConfigError::invalid("stop_mass", "must lie in (0, 1]"));
        }
        if self.task_budget == 0 {
            return Err(ConfigError::invalid("task_budget", "must be positive"));
        }
        if self.max_cycles == 0 {
            return Err(ConfigError::invalid("max_cycles", "must be positive"));
        }
        if self.scenario == Scenario::Arclite {
            if self.count > 0 && self.library_families().is_empty() {
                return Err(ConfigError::invalid("families", "every family is withheld"));
            }
            if self.withheld_count > 0 && self.withheld.is_empty() {
                return Err(ConfigError::invalid("withheld", "withheld_count needs at least one withheld family"));
            }
        }
        if self.scenario == Scenario::Stability && self.ticks < 2 {
            return Err(ConfigError::invalid("ticks", "needs at least 2 ticks"));
        }
        Ok(())
    }

    /// Families that are both requested and present in the library.
    pub fn library_families(&self) -> Vec<Family> {
        self.families.iter().copied().filter(|f| !self.withheld.contains(f)).collect()
    }

    pub fn solve_params(&self) -> SolveParams {
        SolveParams {
            task_budget: self.task_budget,
            max_cycles: self.max_cycles,
            stop_mass: self.stop_mass,
            ..SolveParams::default()
        }
    }

    pub fn topology_spec(&self) -> Result<TopologySpec, ConfigError> {
        match &self.topology {
            Some(p) => load_topology(p),
            None => Ok(TopologySpec::default()),
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn parse_located<T: DeserializeOwned>(text: &str, path: &str) -> Result<T, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let result: Result<T, _> = serde_path_to_error::deserialize(&mut de);
    result.map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let (line, column) = (inner.line(), inner.column());
        if inner.is_syntax() || inner.is_eof() || field == "." {
            ConfigError::Syntax { path: path.to_string(), line, column, message: inner.to_string() }
        } else {
            ConfigError::Field { path: path.to_string(), line, column, field, message: inner.to_string() }
        }
    })
}

/// 1-based line and column of the `nth` occurrence of `needle`.
fn locate(text: &str, needle: &str, nth: usize) -> (usize, usize) {
    let Some((offset, _)) = text.match_indices(needle).nth(nth) else { return (1, 1) };
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

pub fn parse_topology(text: &str, path: &str) -> Result<TopologySpec, ConfigError> {
    let spec: TopologySpec = parse_located(text, path)?;
    let at = |field: String, value: &str, nth: usize, message: String| {
        let (line, column) = locate(text, &format!("\"{value}\""), nth);
        ConfigError::Field { path: path.to_string(), line, column, field, message }
    };
    if spec.root.is_empty() {
        return Err(at("root".into(), "root", 0, "root id must not be empty".into()));
    }
    if spec.topic.is_empty() {
        return Err(at("topic".into(), "topic", 0, "topic must not be empty".into()));
    }
    if spec.workers.is_empty() {
        return Err(at("workers".into(), "workers", 0, "at least one worker is required".into()));
    }
    let mut seen = vec![spec.root.as_str()];
    for (i, w) in spec.workers.iter().enumerate() {
        let field = format!("workers[{i}].id");
        if w.id.is_empty() {
            return Err(at(field, "id", i, "worker id must not be empty".into()));
        }
        if seen.contains(&w.id.as_str()) {
            let nth = seen.iter().filter(|s| **s == w.id).count();
            return Err(at(field, &w.id, nth, format!("duplicate agent id '{}'", w.id)));
        }
        seen.push(&w.id);
    }
    Ok(spec)
}

pub fn load_topology(path: &Path) -> Result<TopologySpec, ConfigError> {
    parse_topology(&read(path)?, &path.display().to_string())
}
