//! Run configuration and the optional configuration directory.
//!
//! The configuration directory may hold `params.json` (hydrodynamic
//! coefficients), `env.json`, `psf.json`, `los.json` and `terminal.json`
//! (terminal-set synthesis settings). Missing files fall back to defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use shipsafe_core::env::scenario::{CaseId, ScenarioSpec};
use shipsafe_core::env::EnvConfig;
use shipsafe_core::policy::LosGains;
use shipsafe_core::psf::PsfConfig;
use shipsafe_core::terminal::TerminalSetSpec;
use shipsafe_core::vessel::HydroParams;
use thiserror::Error;

pub const CONFIG_DIR_ENV: &str = "SHIPSAFE_CONFIG_DIR";
const DEFAULT_CONFIG_DIR: &str = "config";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: schema error: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_owned(),
        source,
    })
}

fn read_optional<T: DeserializeOwned + Default>(dir: Option<&Path>, name: &str) -> Result<T, ConfigError> {
    match dir.map(|d| d.join(name)) {
        Some(path) if path.exists() => read_json(&path),
        _ => Ok(T::default()),
    }
}

/// Directory named by the environment variable, else `./config` when present.
pub fn config_dir() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
        return Some(PathBuf::from(dir));
    }
    let local = PathBuf::from(DEFAULT_CONFIG_DIR);
    local.is_dir().then_some(local)
}

/// Model, environment, filter and synthesis settings shared by all runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Settings {
    pub params: HydroParams,
    pub env: EnvConfig,
    pub psf: PsfConfig,
    pub los: LosGains,
    pub terminal: TerminalSetSpec,
}

impl Settings {
    pub fn load(dir: Option<&Path>) -> Result<Self, ConfigError> {
        if let Some(d) = dir {
            if !d.is_dir() {
                return Err(ConfigError::Invalid(format!(
                    "configuration directory {} does not exist",
                    d.display()
                )));
            }
        }
        let mut s = Self {
            params: read_optional(dir, "params.json")?,
            env: read_optional(dir, "env.json")?,
            psf: read_optional(dir, "psf.json")?,
            los: read_optional(dir, "los.json")?,
            terminal: read_optional(dir, "terminal.json")?,
        };
        // The synthesis always uses the run's vessel and actuator limits.
        s.terminal.params = s.params;
        s.terminal.inputs = s.env.inputs;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.params.validate().map_err(|e| invalid(&e))?;
        self.env.validate().map_err(|e| invalid(&e))?;
        self.psf.validate().map_err(|e| invalid(&e))?;
        if self.psf.inputs != self.env.inputs {
            return Err(ConfigError::Invalid("psf.json and env.json input bounds differ".into()));
        }
        if (self.psf.dt - self.env.dt).abs() > 1e-12 {
            return Err(ConfigError::Invalid("psf.json and env.json time steps differ".into()));
        }
        if (self.terminal.synthesis.dt - self.psf.dt).abs() > 1e-12 {
            return Err(ConfigError::Invalid("terminal-set and filter time steps differ".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyKind {
    LosFollower,
    Adversarial,
    /// Always proposes zero input.
    Zero,
    External {
        command: Vec<String>,
        #[serde(default = "default_agent_timeout")]
        timeout_ms: u64,
    },
    /// Re-emits the proposals logged in a telemetry file.
    Replay { file: PathBuf },
}

fn default_agent_timeout() -> u64 {
    5000
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LosFollower => "los-follower",
            Self::Adversarial => "adversarial",
            Self::Zero => "zero",
            Self::External { .. } => "external",
            Self::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Telemetry {
    Off,
    Ticks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub policy: PolicyKind,
    pub psf: bool,
    pub episodes: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub telemetry: Telemetry,
    /// Measure solve times; off makes every output byte-reproducible.
    pub timing: bool,
    /// Stop an episode after this much simulated time (s), if set.
    pub time_cap: Option<f64>,
}

/// Reads a scenario file; fields it omits take the defaults of its `case`.
pub fn read_scenario_file(path: &Path) -> Result<ScenarioSpec, ConfigError> {
    let parse = |source| ConfigError::Parse {
        path: path.to_owned(),
        source,
    };
    let value: serde_json::Value = read_json(path)?;
    let serde_json::Value::Object(fields) = value else {
        return Err(ConfigError::Invalid(format!(
            "{}: schema error: a scenario must be a JSON object",
            path.display()
        )));
    };
    let case = match fields.get("case") {
        None => CaseId::One,
        Some(c) => serde_json::from_value(c.clone()).map_err(parse)?,
    };
    let mut merged = serde_json::to_value(ScenarioSpec::case(case, 0)).expect("spec serializes");
    let target = merged.as_object_mut().expect("spec is an object");
    for (k, v) in fields {
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(parse)
}

/// Scenario from a case id (`1`, `2`, `3`) or a scenario JSON file.
pub fn load_scenario(case: Option<&str>, file: Option<&Path>) -> Result<ScenarioSpec, ConfigError> {
    let spec = match (case, file) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::Invalid("give either --case or --scenario, not both".into()))
        }
        (_, Some(path)) => read_scenario_file(path)?,
        (Some(id), None) => match CaseId::parse(id) {
            Some(CaseId::Custom) => {
                return Err(ConfigError::Invalid("custom scenarios need --scenario <file>".into()))
            }
            Some(c) => ScenarioSpec::case(c, 0),
            None => {
                return Err(ConfigError::Invalid(format!(
                    "schema error: unknown case id '{id}' (expected 1, 2, 3 or a scenario file)"
                )))
            }
        },
        (None, None) => ScenarioSpec::case(CaseId::One, 0),
    };
    spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(spec)
}
