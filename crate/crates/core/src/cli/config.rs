//! Run configuration: a single JSON document, schema-checked, with dotted
//! key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{ChunkSpec, SplitMode, SynthConfig};
use crate::error::{Error, Result};
use crate::spectral::FilterSpec;
use crate::train::TrainConfig;
use crate::unrolled::Architecture;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    /// Primary graph in the graph text format; falls back to the topology
    /// named in the dataset manifest.
    pub path: Option<PathBuf>,
    /// Channels are the edges of the primary graph (bipolar montage).
    pub line_graph: bool,
    /// Weight of the positive edges between consecutive chunks.
    pub temporal_weight: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            path: None,
            line_graph: false,
            temporal_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest used by train, eval and learn-graph.
    pub manifest: Option<PathBuf>,
    pub chunk: ChunkSpec,
    pub topology: TopologyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Directory holding the checkpoints written by `train`.
    pub checkpoints: Option<PathBuf>,
    /// Filter used at inference; `null` keeps the trained filters.
    pub filter: Option<FilterSpec>,
    pub tie_class: u8,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoints: None,
            filter: None,
            tie_class: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub ladder: Vec<usize>,
    /// Krylov dimension at every rung (capped at `n`).
    pub m: usize,
    /// Random chords per node added to a ring.
    pub chords_per_node: usize,
    pub trials: usize,
    /// Largest `n` for which the exact filter is computed for the error
    /// column.
    pub exact_max: usize,
    /// Sizes up to this also get a full-dimension (`m = n`) row.
    pub full_krylov_max: usize,
    pub omega: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ladder: vec![256, 512, 1024, 2048],
            m: 16,
            chords_per_node: 2,
            trials: 5,
            exact_max: 1024,
            full_krylov_max: 256,
            omega: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnGraphConfig {
    /// Checkpoint whose blocks learn the graphs; without one, graphs are
    /// built from raw embedding distances with polarities fitted per class.
    pub model: Option<PathBuf>,
    /// Samples (from the start of the dataset) written out.
    pub max_samples: usize,
    pub polarity_sweeps: usize,
}

impl Default for LearnGraphConfig {
    fn default() -> Self {
        LearnGraphConfig {
            model: None,
            max_samples: 4,
            polarity_sweeps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub split: SplitMode,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub model: Architecture,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub learn_graph: LearnGraphConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            split: SplitMode::Ratio,
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            model: default_architecture(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
            learn_graph: LearnGraphConfig::default(),
        }
    }
}

/// Network sized for short embeddings (tens of samples per node).
pub fn default_architecture() -> Architecture {
    Architecture {
        n_blocks: 1,
        conv_layers: 2,
        channels: 4,
        kernel: 5,
        stride: 1,
        feature_dim: 8,
        ..Architecture::default()
    }
}

/// Overlays `patch` on `base`. Objects merge key by key, except tagged
/// objects whose `kind` changes, which are replaced whole.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let kind_changes = matches!((b.get("kind"), p.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changes {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses `key.path=value`; the value is read as JSON and falls back to a
/// plain string.
fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{s}' is not of the form key.path=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::InvalidConfig(format!("override '{s}' has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn nest(path: &[String], value: Value) -> Value {
    path.iter().rev().fold(value, |acc, k| {
        let mut m = serde_json::Map::new();
        m.insert(k.clone(), acc);
        Value::Object(m)
    })
}

/// Builds the configuration from defaults, an optional JSON document and
/// `key.path=value` overrides, in that order. Unknown keys are rejected
/// with their path.
pub fn resolve_config(text: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
    let mut value = serde_json::to_value(RunConfig::default())?;
    if let Some(t) = text {
        let doc: Value = serde_json::from_str(t)?;
        if !doc.is_object() {
            return Err(Error::InvalidConfig("configuration must be a JSON object".into()));
        }
        merge(&mut value, doc);
    }
    for o in overrides {
        let (path, v) = parse_override(o)?;
        merge(&mut value, nest(&path, v));
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        Error::InvalidConfig(format!("at '{}': {}", e.path(), e.inner()))
    })?;
    cfg.synth.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    resolve_config(text.as_deref(), overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        assert_eq!(resolve_config(None, &[]).unwrap(), RunConfig::default());
        assert_eq!(resolve_config(Some("{}"), &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = resolve_config(Some(r#"{"synth": {"snr": 3}}"#), &[]).unwrap_err();
        assert!(err.to_string().contains("synth.snr"), "{err}");
    }

    #[test]
    fn dotted_overrides_win() {
        let cfg = resolve_config(
            Some(r#"{"synth": {"snr_db": 5.0}}"#),
            &["synth.snr_db=20".into(), "train.epochs=3".into(), "model.graph.kind=positive".into()],
        )
        .unwrap();
        assert_eq!(cfg.synth.snr_db, Some(20.0));
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.graph, crate::unrolled::GraphKind::Positive);
        assert!(resolve_config(None, &["nonsense".into()]).is_err());
    }

    #[test]
    fn tagged_variant_switch_replaces_fields() {
        let cfg = resolve_config(
            Some(r#"{"model": {"graph": {"kind": "unbalanced_logistic", "d_star": 0.3}}}"#),
            &[],
        )
        .unwrap();
        assert_eq!(cfg.model.graph, crate::unrolled::GraphKind::UnbalancedLogistic { d_star: 0.3 });
    }
}
