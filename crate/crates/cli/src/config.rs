//! Run configuration: strict JSON schema with per-command defaults.

use crate::error::CliError;
use mvsim_core::model::{registry_get, ModelSpec, REGISTRY};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Histogram,
    StrongRate,
    WeakRate,
    RateStudy,
    Moments,
    VariationsCheck,
    CountMultiindex,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Simulate,
        Command::Histogram,
        Command::StrongRate,
        Command::WeakRate,
        Command::RateStudy,
        Command::Moments,
        Command::VariationsCheck,
        Command::CountMultiindex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Histogram => "histogram",
            Command::StrongRate => "strong-rate",
            Command::WeakRate => "weak-rate",
            Command::RateStudy => "rate-study",
            Command::Moments => "moments",
            Command::VariationsCheck => "variations-check",
            Command::CountMultiindex => "count-multiindex",
        }
    }

    pub fn parse(s: &str) -> Option<Command> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    fn default_replicates(self) -> usize {
        match self {
            Command::Simulate | Command::CountMultiindex => 1,
            Command::StrongRate => 256,
            Command::WeakRate | Command::RateStudy => 4096,
            Command::Histogram | Command::Moments => 64,
            Command::VariationsCheck => 200,
        }
    }

    fn default_model(self) -> &'static str {
        match self {
            Command::VariationsCheck => "smooth-gauss",
            _ => "paper-example",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A registry name or an inline coefficient set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Name(String),
    Inline(ModelSpec),
}

impl ModelRef {
    pub fn resolve(&self) -> mvsim_core::Result<ModelSpec> {
        match self {
            ModelRef::Name(name) => registry_get(name),
            ModelRef::Inline(spec) => Ok(spec.clone()),
        }
    }
}

pub const DEFAULT_D_LIST: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];
pub const DEFAULT_MOMENT_D_LIST: [usize; 3] = [16, 256, 2048];
pub const DEFAULT_VARIATION_D_LIST: [usize; 3] = [2, 4, 8];

/// Fully defaulted configuration. Fields irrelevant to `command` keep their
/// defaults and are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub model: ModelRef,
    pub d: usize,
    pub d_list: Vec<usize>,
    pub n_steps: usize,
    pub t_end: f64,
    pub seed: u64,
    pub replicates: usize,
    pub observable: String,
    pub output_dir: PathBuf,
    pub n_bins: usize,
    pub range: Option<[f64; 2]>,
    /// Moment order (`E|X|^{2p}`, variation moments `E|Y|^p`) or tuple length.
    pub p: Option<u32>,
    pub n: u64,
    pub trajectory: bool,
}

const KEYS: [&str; 15] = [
    "command",
    "model",
    "d",
    "d_list",
    "n_steps",
    "t_end",
    "seed",
    "replicates",
    "observable",
    "output_dir",
    "n_bins",
    "range",
    "p",
    "n",
    "trajectory",
];

fn config_err(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn typed<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<Option<T>, CliError> {
    obj.get(key)
        .map(|v| serde_json::from_value(v.clone()).map_err(|e| config_err(format!("/{key}"), e.to_string())))
        .transpose()
}

fn positive(v: &Value, path: &str) -> Result<u64, CliError> {
    match v.as_i64() {
        Some(n) if n > 0 => Ok(n as u64),
        Some(n) => Err(config_err(path, format!("must be positive, got {n}"))),
        None => match v.as_u64() {
            Some(n) => Ok(n),
            None => Err(config_err(path, format!("expected a positive integer, got {v}"))),
        },
    }
}

fn positive_field(obj: &Map<String, Value>, key: &str) -> Result<Option<u64>, CliError> {
    obj.get(key).map(|v| positive(v, &format!("/{key}"))).transpose()
}

fn usize_field(obj: &Map<String, Value>, key: &str) -> Result<Option<usize>, CliError> {
    positive_field(obj, key).map(|v| v.map(|n| n as usize))
}

/// Parses and validates raw JSON text. A run manifest is accepted in place
/// of a config, in which case its echoed config is used.
pub fn validate_config_str(raw: &str) -> Result<RunConfig, CliError> {
    let value: Value = serde_json::from_str(raw).map_err(|e| {
        config_err("", format!("invalid JSON at line {}, column {}: {e}", e.line(), e.column()))
    })?;
    validate_config(&value)
}

pub fn validate_config(raw: &Value) -> Result<RunConfig, CliError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| config_err("", "config must be a JSON object"))?;
    if obj.contains_key("config") && obj.contains_key("rng") {
        return validate_config(&obj["config"]);
    }
    // explicit nulls mean "use the default"
    let obj: Map<String, Value> = obj
        .iter()
        .filter(|(_, v)| !v.is_null())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let obj = &obj;
    if let Some(key) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(config_err(format!("/{key}"), format!("unknown field, expected one of {}", KEYS.join(", "))));
    }

    let command = match obj.get("command") {
        None => return Err(config_err("/command", "missing required field")),
        Some(Value::String(s)) => Command::parse(s).ok_or_else(|| {
            let names: Vec<&str> = Command::ALL.iter().map(|c| c.name()).collect();
            config_err("/command", format!("unknown command `{s}`, expected one of {}", names.join(", ")))
        })?,
        Some(other) => return Err(config_err("/command", format!("expected a string, got {other}"))),
    };

    let model = match typed::<ModelRef>(obj, "model")? {
        None => ModelRef::Name(command.default_model().into()),
        Some(ModelRef::Name(name)) => {
            if !REGISTRY.contains(&name.as_str()) {
                return Err(config_err(
                    "/model",
                    format!("unknown model `{name}`, expected one of {}", REGISTRY.join(", ")),
                ));
            }
            ModelRef::Name(name)
        }
        Some(inline) => inline,
    };

    let d_list = match obj.get("d_list") {
        None => None,
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for (k, v) in items.iter().enumerate() {
                out.push(positive(v, &format!("/d_list/{k}"))? as usize);
            }
            if out.is_empty() {
                return Err(config_err("/d_list", "d_list must not be empty"));
            }
            if out.windows(2).any(|w| w[0] >= w[1]) {
                return Err(config_err("/d_list", "d_list must be ascending"));
            }
            Some(out)
        }
        Some(other) => return Err(config_err("/d_list", format!("expected an array, got {other}"))),
    };
    let default_d_list: &[usize] = match command {
        Command::Moments => &DEFAULT_MOMENT_D_LIST,
        Command::VariationsCheck => &DEFAULT_VARIATION_D_LIST,
        _ => &DEFAULT_D_LIST,
    };
    let default_d = match command {
        Command::Histogram => 2048,
        Command::VariationsCheck => 4,
        _ => 16,
    };

    let t_end = match typed::<f64>(obj, "t_end")? {
        None => 1.0,
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(config_err("/t_end", format!("must be positive and finite, got {t}"))),
    };
    let seed = match obj.get("seed") {
        None => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| config_err("/seed", format!("expected a non-negative integer, got {v}")))?,
    };
    let range = match typed::<[f64; 2]>(obj, "range")? {
        Some([lo, hi]) if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
            return Err(config_err("/range", format!("expected [lo, hi] with lo < hi, got [{lo}, {hi}]")))
        }
        r => r,
    };
    let p = match positive_field(obj, "p")? {
        None => None,
        Some(p) if p > u32::MAX as u64 => return Err(config_err("/p", "too large")),
        Some(p) => Some(p as u32),
    };
    let observable = typed::<String>(obj, "observable")?.unwrap_or_else(|| {
        if command == Command::VariationsCheck { "sum-sin" } else { "paper-g" }.into()
    });

    Ok(RunConfig {
        command,
        model,
        d: usize_field(obj, "d")?.unwrap_or(default_d),
        d_list: d_list.unwrap_or_else(|| default_d_list.to_vec()),
        n_steps: usize_field(obj, "n_steps")?.unwrap_or(64),
        t_end,
        seed,
        replicates: usize_field(obj, "replicates")?.unwrap_or(command.default_replicates()),
        observable,
        output_dir: typed::<PathBuf>(obj, "output_dir")?.unwrap_or_else(|| PathBuf::from("mvsim-out")),
        n_bins: usize_field(obj, "n_bins")?.unwrap_or(99),
        range,
        p,
        n: positive_field(obj, "n")?.unwrap_or(16),
        trajectory: typed::<bool>(obj, "trajectory")?.unwrap_or(true),
    })
}
