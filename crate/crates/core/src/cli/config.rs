use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BsoScan,
    SolverCompare,
    Reversal,
    Teleport,
    PhaseRecover,
    LockScan,
    LockLoop,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::BsoScan,
        Experiment::SolverCompare,
        Experiment::Reversal,
        Experiment::Teleport,
        Experiment::PhaseRecover,
        Experiment::LockScan,
        Experiment::LockLoop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::BsoScan => "bso-scan",
            Experiment::SolverCompare => "solver-compare",
            Experiment::Reversal => "reversal",
            Experiment::Teleport => "teleport",
            Experiment::PhaseRecover => "phase-recover",
            Experiment::LockScan => "lock-scan",
            Experiment::LockLoop => "lock-loop",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Experiment::ALL.into_iter().find(|e| e.name() == name)
    }

    /// Complete parameter table with defaults.
    pub fn parameters(self) -> Vec<ParamSpec> {
        use Kind::*;
        let channel = [
            ParamSpec::new("latency", Float, Value::Float(1.0)),
            ParamSpec::new("jitter", Float, Value::Float(0.0)),
            ParamSpec::new("drop", Float, Value::Float(0.0)),
            ParamSpec::new("retry_cap", Int, Value::Int(16)),
        ];
        let mut p = match self {
            Experiment::BsoScan => vec![
                ParamSpec::new("eta", Float, Value::Float(0.02)),
                ParamSpec::new("omega", Float, Value::Float(1.0)),
                ParamSpec::new("points", Int, Value::Int(64)),
                ParamSpec::new("switch_ratio", Float, Value::Float(10.0)),
            ],
            Experiment::SolverCompare => vec![
                ParamSpec::new("eta", Float, Value::Float(0.02)),
                ParamSpec::new("omega", Float, Value::Float(1.0)),
                ParamSpec::new("phi", Float, Value::Float(0.0)),
                ParamSpec::new("area", Float, Value::Float(PI)),
                ParamSpec::new("samples", Int, Value::Int(65)),
                ParamSpec::new("n_max", Int, Value::Int(4)),
                ParamSpec::new("switch_ratio", Float, Value::Float(10.0)),
            ],
            Experiment::Reversal => vec![
                ParamSpec::new("eta", Float, Value::Float(0.05)),
                ParamSpec::new("omega", Float, Value::Float(1.0)),
                ParamSpec::new("phi", Float, Value::Float(0.0)),
                ParamSpec::new("m_max", Int, Value::Int(20)),
            ],
            Experiment::Teleport => vec![
                ParamSpec::new("phi", Float, Value::Float(PI / 8.0)),
                ParamSpec::new("chi", Float, Value::Float(0.0)),
                ParamSpec::new("eta", Float, Value::Float(0.05)),
                ParamSpec::new("pairs", Int, Value::Int(100_000)),
                ParamSpec::new(
                    "mode",
                    Choice(&["projective", "operational"]),
                    Value::Text("projective".into()),
                ),
                ParamSpec::new(
                    "readout",
                    Choice(&["ground", "reversed"]),
                    Value::Text("ground".into()),
                ),
            ],
            Experiment::PhaseRecover => vec![
                ParamSpec::new("phi", Float, Value::Float(0.3)),
                ParamSpec::new("chi", Float, Value::Float(0.0)),
                ParamSpec::new("eta", Float, Value::Float(0.05)),
                ParamSpec::new("pairs", Int, Value::Int(1_000_000)),
                ParamSpec::new("offset", Float, Value::Float(PI / 4.0)),
            ],
            Experiment::LockScan => vec![
                ParamSpec::new("n_atoms", Int, Value::Int(8)),
                ParamSpec::new("delta", Float, Value::Float(1e-3)),
                ParamSpec::new("eta", Float, Value::Float(0.05)),
                ParamSpec::new("phi", Float, Value::Float(0.0)),
                ParamSpec::new("chi", Float, Value::Float(0.0)),
                ParamSpec::new("samples", Int, Value::Int(10_000)),
                ParamSpec::new("scan_points", Int, Value::Int(32)),
                ParamSpec::new(
                    "sampling",
                    Choice(&["exact", "binomial"]),
                    Value::Text("exact".into()),
                ),
                ParamSpec::new("confidence", Float, Value::Float(0.99)),
            ],
            Experiment::LockLoop => vec![
                ParamSpec::new("n_atoms", Int, Value::Int(8)),
                ParamSpec::new("initial_delta", Float, Value::Float(1e-3)),
                ParamSpec::new("gain", Float, Value::Float(0.5)),
                ParamSpec::new("max_step", Float, Value::Float(1e-2)),
                ParamSpec::new("iterations", Int, Value::Int(20)),
                ParamSpec::new("eta", Float, Value::Float(0.05)),
                ParamSpec::new("samples", Int, Value::Int(10_000)),
                ParamSpec::new("scan_points", Int, Value::Int(32)),
                ParamSpec::new(
                    "sampling",
                    Choice(&["exact", "binomial"]),
                    Value::Text("binomial".into()),
                ),
            ],
        };
        if self.uses_channel() {
            p.extend(channel);
        }
        p
    }

    pub fn uses_channel(self) -> bool {
        matches!(
            self,
            Experiment::Teleport | Experiment::PhaseRecover | Experiment::LockLoop
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Float,
    /// Non-negative integer.
    Int,
    Choice(&'static [&'static str]),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Float(f64),
    Int(u64),
    Text(String),
}

impl Value {
    fn to_toml(&self) -> toml::Value {
        match self {
            Value::Float(x) => toml::Value::Float(*x),
            Value::Int(n) => toml::Value::Integer(*n as i64),
            Value::Text(s) => toml::Value::String(s.clone()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // shortest representation that round-trips
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: Value,
}

impl ParamSpec {
    fn new(key: &'static str, kind: Kind, default: Value) -> Self {
        ParamSpec { key, kind, default }
    }

    fn expected(&self) -> String {
        match self.kind {
            Kind::Float => "a real number".into(),
            Kind::Int => "a non-negative integer".into(),
            Kind::Choice(c) => format!("one of {}", c.join(", ")),
        }
    }

    fn parse_str(&self, raw: &str) -> Result<Value, ConfigError> {
        let bad = || ConfigError::BadValue {
            key: self.key.into(),
            value: raw.into(),
            expected: self.expected(),
        };
        let raw = raw.trim();
        match self.kind {
            Kind::Float => raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Value::Float)
                .ok_or_else(bad),
            Kind::Int => raw
                .replace('_', "")
                .parse::<u64>()
                .map(Value::Int)
                .map_err(|_| bad()),
            Kind::Choice(c) => {
                let s = raw.trim_matches('"');
                c.contains(&s)
                    .then(|| Value::Text(s.into()))
                    .ok_or_else(bad)
            }
        }
    }

    fn parse_toml(&self, v: &toml::Value) -> Result<Value, ConfigError> {
        let bad = || ConfigError::BadValue {
            key: self.key.into(),
            value: v.to_string(),
            expected: self.expected(),
        };
        match (self.kind, v) {
            (Kind::Float, toml::Value::Float(x)) if x.is_finite() => Ok(Value::Float(*x)),
            (Kind::Float, toml::Value::Integer(n)) => Ok(Value::Float(*n as f64)),
            (Kind::Int, toml::Value::Integer(n)) if *n >= 0 => Ok(Value::Int(*n as u64)),
            (Kind::Choice(_), toml::Value::String(s)) => self.parse_str(s),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("parse error for key `{key}`: `{value}` is not {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: String,
    },
    #[error("unknown key `{key}` for experiment {experiment}")]
    UnknownKey { key: String, experiment: Experiment },
    #[error("parse error in flag `--set {flag}`: expected key=value")]
    BadFlag { flag: String },
    #[error("config is for experiment `{found}` but `{requested}` was requested")]
    ExperimentMismatch {
        found: String,
        requested: Experiment,
    },
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub parameters: BTreeMap<String, Value>,
    pub seed: u64,
    pub output_path: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            parameters: experiment
                .parameters()
                .into_iter()
                .map(|p| (p.key.to_string(), p.default))
                .collect(),
            seed: DEFAULT_SEED,
            output_path: PathBuf::from(format!("{}.csv", experiment.name())),
        }
    }

    fn spec(&self, key: &str) -> Result<ParamSpec, ConfigError> {
        self.experiment
            .parameters()
            .into_iter()
            .find(|p| p.key == key)
            .ok_or_else(|| ConfigError::UnknownKey {
                key: key.into(),
                experiment: self.experiment,
            })
    }

    /// Override one parameter from its textual form.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        if key == "seed" {
            self.seed = raw.trim().parse().map_err(|_| ConfigError::BadValue {
                key: "seed".into(),
                value: raw.into(),
                expected: "a 64-bit unsigned integer".into(),
            })?;
            return Ok(());
        }
        let spec = self.spec(key)?;
        self.parameters.insert(key.into(), spec.parse_str(raw)?);
        Ok(())
    }

    /// Apply a flat TOML document of key = value lines.
    pub fn apply_toml(&mut self, text: &str) -> Result<(), ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            ConfigError::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        for (key, v) in &table {
            match key.as_str() {
                "experiment" => {
                    let name = v.as_str().unwrap_or_default();
                    if Experiment::from_name(name) != Some(self.experiment) {
                        return Err(ConfigError::ExperimentMismatch {
                            found: v.to_string(),
                            requested: self.experiment,
                        });
                    }
                }
                "seed" => match v {
                    toml::Value::Integer(n) if *n >= 0 => self.seed = *n as u64,
                    // seeds above i64::MAX do not fit a TOML integer
                    toml::Value::String(s) => self.set("seed", s)?,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: "seed".into(),
                            value: v.to_string(),
                            expected: "a 64-bit unsigned integer".into(),
                        })
                    }
                },
                "version" => {}
                _ => {
                    let spec = self.spec(key)?;
                    self.parameters.insert(key.clone(), spec.parse_toml(v)?);
                }
            }
        }
        Ok(())
    }

    pub fn float(&self, key: &str) -> f64 {
        match self.parameters.get(key) {
            Some(Value::Float(x)) => *x,
            Some(Value::Int(n)) => *n as f64,
            other => panic!("parameter {key} is not a real: {other:?}"),
        }
    }

    pub fn int(&self, key: &str) -> u64 {
        match self.parameters.get(key) {
            Some(Value::Int(n)) => *n,
            other => panic!("parameter {key} is not an integer: {other:?}"),
        }
    }

    pub fn text(&self, key: &str) -> &str {
        match self.parameters.get(key) {
            Some(Value::Text(s)) => s,
            other => panic!("parameter {key} is not text: {other:?}"),
        }
    }

    /// (key, value) pairs for the CSV header, seed first.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let mut v = vec![
            ("experiment".to_string(), self.experiment.name().to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ];
        v.extend(
            self.parameters
                .iter()
                .map(|(k, val)| (k.clone(), val.to_string())),
        );
        v
    }

    /// TOML manifest that reproduces this run through `--config`.
    pub fn manifest(&self) -> String {
        let mut t = toml::Table::new();
        t.insert(
            "experiment".into(),
            toml::Value::String(self.experiment.name().into()),
        );
        t.insert(
            "seed".into(),
            i64::try_from(self.seed)
                .map(toml::Value::Integer)
                .unwrap_or_else(|_| toml::Value::String(self.seed.to_string())),
        );
        t.insert(
            "version".into(),
            toml::Value::String(env!("CARGO_PKG_VERSION").into()),
        );
        for (k, v) in &self.parameters {
            t.insert(k.clone(), v.to_toml());
        }
        toml::to_string(&t).expect("flat table serializes")
    }
}

/// Defaults, then the config file, then `--seed`, then `--set` flags.
pub fn parse_config(
    experiment: Experiment,
    file_text: Option<&str>,
    seed: Option<u64>,
    sets: &[String],
    output_path: Option<PathBuf>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::defaults(experiment);
    if let Some(text) = file_text {
        cfg.apply_toml(text)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    for flag in sets {
        let (k, v) = flag
            .split_once('=')
            .ok_or_else(|| ConfigError::BadFlag { flag: flag.clone() })?;
        let k = k.trim();
        if k.is_empty() || k == "experiment" || k == "version" {
            return Err(ConfigError::BadFlag { flag: flag.clone() });
        }
        cfg.set(k, v)?;
    }
    if let Some(p) = output_path {
        cfg.output_path = p;
    }
    Ok(cfg)
}
