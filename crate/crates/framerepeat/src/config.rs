//! Layered run configuration.
//!
//! Every field has a built-in default, which a TOML file, `REPEATGAIN_*`
//! environment variables and command-line flags override in that order.
//! The source of each effective value is tracked.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use framerepeat_core::losses::LossConfig;
use framerepeat_core::scorer::ScorerConfig;
use framerepeat_core::synthetic::SyntheticSpec;
use framerepeat_core::trainer::{CandidatePolicy, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::oracles::RemoteConfig;

pub const ENV_PREFIX: &str = "REPEATGAIN_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    /// Dataset root.
    pub dataset: String,
    /// Record cache; empty means `<run>/records`.
    pub records: String,
    /// Skip this many samples of the index.
    pub offset: usize,
    /// Use at most this many samples; 0 for all.
    pub limit: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerSection {
    pub n_heads: usize,
    /// 0 means the embedding width.
    pub ffn_hidden: usize,
    pub prior_weight: f64,
    pub ln_eps: f64,
    pub seed: u64,
    pub positional: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub accumulation: usize,
    pub k: usize,
    pub reg_weight: f64,
    pub rank_weight: f64,
    pub margin: f64,
    pub eps: f64,
    pub n_extra_negatives: usize,
    pub seed: u64,
    pub candidates: CandidatePolicy,
    /// Optimizer steps between checkpoints; 0 keeps only epoch-end ones.
    pub checkpoint_every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSection {
    /// `synthetic`, `replay` or `remote`.
    pub kind: String,
    pub endpoint: String,
    pub token: String,
    pub in_flight: usize,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Records replayed by the `replay` oracle.
    pub replay_records: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanSection {
    /// Random frames per sample; 0 scans every frame.
    pub frames: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    pub n_samples: usize,
    #[serde(flatten)]
    pub spec: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSection {
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub k: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSection,
    pub scorer: ScorerSection,
    pub train: TrainSection,
    pub oracle: OracleSection,
    pub scan: ScanSection,
    pub synth: SynthSection,
    pub plan: PlanSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = ScorerConfig::default();
        let t = TrainConfig::default();
        let r = RemoteConfig::default();
        RunConfig {
            data: DataSection { dataset: String::new(), records: String::new(), offset: 0, limit: 0 },
            scorer: ScorerSection {
                n_heads: s.n_heads,
                ffn_hidden: 0,
                prior_weight: s.prior_weight,
                ln_eps: s.ln_eps,
                seed: s.seed,
                positional: s.positional,
            },
            train: TrainSection {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                adam_eps: t.adam_eps,
                epochs: t.epochs,
                accumulation: t.accumulation,
                k: t.k,
                reg_weight: t.loss.reg_weight,
                rank_weight: t.loss.rank_weight,
                margin: t.loss.margin,
                eps: t.loss.eps,
                n_extra_negatives: t.loss.n_extra_negatives,
                seed: t.seed,
                candidates: t.candidates,
                checkpoint_every: 0,
            },
            oracle: OracleSection {
                kind: "synthetic".into(),
                endpoint: r.endpoint,
                token: r.token,
                in_flight: r.in_flight,
                timeout_secs: r.timeout_secs,
                retries: r.retries,
                backoff_ms: r.backoff_ms,
                replay_records: String::new(),
            },
            scan: ScanSection { frames: 0, seed: 0 },
            synth: SynthSection { n_samples: 100, spec: SyntheticSpec::default() },
            plan: PlanSection { k: 8 },
            eval: EvalSection { k: 8, seed: 0 },
        }
    }
}

impl RunConfig {
    /// Scorer configuration for embeddings of width `dim`.
    pub fn scorer_config(&self, dim: usize) -> ScorerConfig {
        let s = &self.scorer;
        ScorerConfig {
            dim,
            n_heads: s.n_heads,
            ffn_hidden: if s.ffn_hidden == 0 { dim } else { s.ffn_hidden },
            prior_weight: s.prior_weight,
            ln_eps: s.ln_eps,
            seed: s.seed,
            positional: s.positional,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            epochs: t.epochs,
            accumulation: t.accumulation,
            k: t.k,
            loss: LossConfig {
                reg_weight: t.reg_weight,
                rank_weight: t.rank_weight,
                margin: t.margin,
                eps: t.eps,
                n_extra_negatives: t.n_extra_negatives,
            },
            seed: t.seed,
            candidates: t.candidates,
        }
    }

    pub fn remote_config(&self) -> RemoteConfig {
        let o = &self.oracle;
        RemoteConfig {
            endpoint: o.endpoint.clone(),
            token: o.token.clone(),
            in_flight: o.in_flight,
            timeout_secs: o.timeout_secs,
            retries: o.retries,
            backoff_ms: o.backoff_ms,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", content = "detail", rename_all = "lowercase")]
pub enum Source {
    Default,
    File(PathBuf),
    Env(String),
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Default => write!(f, "default"),
            Source::File(p) => write!(f, "file {}", p.display()),
            Source::Env(v) => write!(f, "env {v}"),
            Source::Flag => write!(f, "flag"),
        }
    }
}

/// Effective configuration and where each `section.field` came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub provenance: BTreeMap<String, Source>,
}

impl Resolved {
    /// `section.field = value  # source` lines in key order.
    pub fn render(&self) -> String {
        let table = Table::try_from(&self.config).expect("config serializes");
        let mut out = String::new();
        for (key, value) in flatten(&table) {
            let source = self.provenance.get(&key).map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!("{key} = {value}  # {source}\n"));
        }
        out
    }
}

fn flatten(table: &Table) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    for (section, body) in table {
        if let Value::Table(fields) = body {
            for (field, v) in fields {
                out.insert(format!("{section}.{field}"), v.clone());
            }
        }
    }
    out
}

fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

/// Converts `raw` to the TOML type of `like`.
fn coerce_str(key: &str, raw: &str, like: &Value) -> Result<Value> {
    let bad = || Error::Usage(format!("{key}: cannot read {raw:?} as {}", like.type_str()));
    Ok(match like {
        Value::Integer(_) => Value::Integer(raw.trim().parse().map_err(|_| bad())?),
        Value::Float(_) => Value::Float(raw.trim().parse().map_err(|_| bad())?),
        Value::Boolean(_) => match raw.trim() {
            "true" | "1" => Value::Boolean(true),
            "false" | "0" => Value::Boolean(false),
            _ => return Err(bad()),
        },
        _ => Value::String(raw.to_string()),
    })
}

fn coerce_value(key: &str, v: Value, like: &Value) -> Result<Value> {
    match (like, v) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (l, v) if std::mem::discriminant(l) == std::mem::discriminant(&v) => Ok(v),
        (l, v) => Err(Error::Usage(format!(
            "{key}: expected {}, found {}",
            l.type_str(),
            v.type_str()
        ))),
    }
}

/// Layers defaults, `file`, `env` and `flags` (as `section.field` → text).
pub fn resolve(
    file: Option<&Path>,
    env: &BTreeMap<String, String>,
    flags: &[(String, String)],
) -> Result<Resolved> {
    let defaults = flatten(&Table::try_from(RunConfig::default()).expect("defaults serialize"));
    let mut values = defaults.clone();
    let mut provenance: BTreeMap<String, Source> = defaults.keys().map(|k| (k.clone(), Source::Default)).collect();

    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Usage(format!("{}: {e}", path.display())))?;
        for (section, body) in &table {
            let Value::Table(fields) = body else {
                return Err(Error::Usage(format!("{}: top-level key {section} is not a section", path.display())));
            };
            for (field, v) in fields {
                let key = format!("{section}.{field}");
                let like = defaults
                    .get(&key)
                    .ok_or_else(|| Error::Usage(format!("{}: unknown key {key}", path.display())))?;
                values.insert(key.clone(), coerce_value(&key, v.clone(), like)?);
                provenance.insert(key, Source::File(path.to_path_buf()));
            }
        }
    }

    for (key, like) in &defaults {
        let name = env_name(key);
        if let Some(raw) = env.get(&name) {
            values.insert(key.clone(), coerce_str(key, raw, like)?);
            provenance.insert(key.clone(), Source::Env(name));
        }
    }

    for (key, raw) in flags {
        let like = defaults.get(key).ok_or_else(|| Error::Usage(format!("unknown setting {key}")))?;
        values.insert(key.clone(), coerce_str(key, raw, like)?);
        provenance.insert(key.clone(), Source::Flag);
    }

    let mut table = Table::new();
    for (key, v) in values {
        let (section, field) = key.split_once('.').expect("flattened keys are dotted");
        table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("section table")
            .insert(field.to_string(), v);
    }
    let config: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Usage(e.to_string()))?;
    Ok(Resolved { config, provenance })
}

/// `REPEATGAIN_*` variables of the current process.
pub fn process_env() -> BTreeMap<String, String> {
    std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect()
}
