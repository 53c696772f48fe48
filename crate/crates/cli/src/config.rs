//! Experiment configuration: a flat key = value file plus command-line
//! overrides. No nesting; every knob is a scalar or a comma list.

use std::collections::BTreeMap;
use std::path::PathBuf;

use uoco::ensemble::{BaseTopology, FeedbackMode};

use crate::scenarios::{scenario_by_name, Scenario};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mode: FeedbackMode,
    pub topology: BaseTopology,
    pub out_dir: PathBuf,
    /// Optional scenario-parameter overrides (dimension, magnitudes, ...).
    pub params: Params,
}

/// Scenario knobs a config may override; unset fields keep the scenario's
/// defaults.
#[derive(Debug, Clone, Default)]
pub struct Params {
    pub dim: Option<usize>,
    /// "ball" or "box"; scenarios pick a default when unset.
    pub domain_kind: Option<String>,
    /// Ball radius or box half-width.
    pub domain_scale: Option<f64>,
    pub magnitude: Option<f64>,
    pub curvature: Option<f64>,
    pub sigma2: Option<f64>,
    pub adv2: Option<f64>,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Parse { field: String, message: String },
    Missing { field: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(m) => write!(f, "config I/O error: {m}"),
            ConfigError::Parse { field, message } => {
                write!(f, "config field '{field}': {message}")
            }
            ConfigError::Missing { field } => write!(f, "config field '{field}' is required"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Raw key/value pairs from file and command line, last writer wins.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    pub values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse_file(path: &str) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{path}: {e}")))?;
        let mut raw = RawConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    field: format!("line {}", lineno + 1),
                    message: format!("expected 'key = value', got '{line}'"),
                });
            };
            raw.values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(raw)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    /// Resolves the raw pairs into a validated configuration.
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let scenario_name = self
            .get("scenario")
            .ok_or(ConfigError::Missing { field: "scenario".into() })?;
        let scenario = scenario_by_name(scenario_name).ok_or_else(|| ConfigError::Parse {
            field: "scenario".into(),
            message: format!(
                "unknown scenario '{scenario_name}' (see list-scenarios)"
            ),
        })?;

        let horizons = parse_list::<usize>(self.get("horizons").unwrap_or("1024"), "horizons")?;
        if horizons.is_empty() {
            return Err(ConfigError::Parse {
                field: "horizons".into(),
                message: "at least one horizon is required".into(),
            });
        }
        for t in &horizons {
            if *t == 0 || !t.is_power_of_two() {
                return Err(ConfigError::Parse {
                    field: "horizons".into(),
                    message: format!("horizon {t} is not a power of two"),
                });
            }
        }

        let seeds = parse_list::<u64>(self.get("seeds").unwrap_or(""), "seeds")?;
        if seeds.is_empty() {
            return Err(ConfigError::Parse {
                field: "seeds".into(),
                message: "at least one seed is required".into(),
            });
        }

        let mode = match self.get("mode").unwrap_or("one-grad") {
            "one-grad" => FeedbackMode::OneGradient,
            "multi-grad" => FeedbackMode::MultiGradient,
            other => {
                return Err(ConfigError::Parse {
                    field: "mode".into(),
                    message: format!("expected one-grad or multi-grad, got '{other}'"),
                })
            }
        };
        let topology = match self.get("fidelity").unwrap_or("shared") {
            "shared" => BaseTopology::Shared,
            "full" => BaseTopology::Full,
            other => {
                return Err(ConfigError::Parse {
                    field: "fidelity".into(),
                    message: format!("expected shared or full, got '{other}'"),
                })
            }
        };

        let out_dir = PathBuf::from(self.get("out").unwrap_or("results"));

        let domain_kind = match self.get("domain") {
            None => None,
            Some(k @ ("ball" | "box")) => Some(k.to_string()),
            Some(other) => {
                return Err(ConfigError::Parse {
                    field: "domain".into(),
                    message: format!("expected ball or box, got '{other}'"),
                })
            }
        };
        let params = Params {
            dim: parse_opt(self.get("dim"), "dim")?,
            domain_kind,
            domain_scale: parse_opt(self.get("domain_scale"), "domain_scale")?,
            magnitude: parse_opt(self.get("magnitude"), "magnitude")?,
            curvature: parse_opt(self.get("curvature"), "curvature")?,
            sigma2: parse_opt(self.get("sigma2"), "sigma2")?,
            adv2: parse_opt(self.get("adv2"), "adv2")?,
        };

        Ok(ExperimentConfig { scenario, horizons, seeds, mode, topology, out_dir, params })
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, field: &str) -> Result<Vec<T>, ConfigError> {
    let mut out = Vec::new();
    for piece in text.split(',') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        out.push(piece.parse::<T>().map_err(|_| ConfigError::Parse {
            field: field.into(),
            message: format!("could not parse '{piece}'"),
        })?);
    }
    Ok(out)
}

fn parse_opt<T: std::str::FromStr>(
    value: Option<&str>,
    field: &str,
) -> Result<Option<T>, ConfigError> {
    match value {
        None => Ok(None),
        Some(v) => Ok(Some(v.parse::<T>().map_err(|_| ConfigError::Parse {
            field: field.into(),
            message: format!("could not parse '{v}'"),
        })?)),
    }
}
