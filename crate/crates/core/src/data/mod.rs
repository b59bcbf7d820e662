//! Labelled multichannel datasets: chunking into node embeddings, topology
//! assembly, splits, synthetic generation and on-disk IO.
//!
//! # On-disk layout
//!
//! A dataset directory holds `manifest.json` and, per sample, a CSV file
//! (header row of channel names, then one row per time step) with a JSON
//! sidecar `{"sample_rate", "label", "subject_id"}` of the same stem. The
//! manifest lists every sample path with its label and subject, and may
//! name a topology file in the graph text format.

mod split;
mod synth;
mod topology;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use split::{loso_splits, split_loso, split_ratio, Split, SplitMode};
pub use synth::{synth_two_class, SynthConfig, SynthTruth};
pub use topology::{build_line_graph, build_product_graph};

use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "balgraph-dataset/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `channels x time`.
    pub signal: Array2<f64>,
    pub label: u8,
    pub subject: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    pub sample_rate: f64,
    pub channel_names: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn n_times(&self) -> usize {
        self.samples.first().map_or(0, |s| s.signal.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let shape = first.signal.dim();
        if shape.0 != self.channel_names.len() {
            return Err(Error::InvalidConfig(format!(
                "samples have {} channels but {} channel names are given",
                shape.0,
                self.channel_names.len()
            )));
        }
        for (k, s) in self.samples.iter().enumerate() {
            if s.signal.dim() != shape {
                return Err(Error::InvalidConfig(format!(
                    "sample {k} has shape {:?}, expected {shape:?}",
                    s.signal.dim()
                )));
            }
            if s.label > 1 {
                return Err(Error::InvalidConfig(format!("sample {k} has non-binary label {}", s.label)));
            }
            if !s.signal.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidConfig(format!("sample {k} contains non-finite values")));
            }
        }
        Ok(())
    }

    pub fn subjects(&self) -> Vec<usize> {
        self.samples
            .iter()
            .map(|s| s.subject)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: idx.iter().map(|&k| self.samples[k].clone()).collect(),
            sample_rate: self.sample_rate,
            channel_names: self.channel_names.clone(),
        }
    }
}

/// Chunking parameters for turning a `channels x time` recording into node
/// embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkSpec {
    pub n_chunks: usize,
    /// Chunk length; `0` means "everything after trimming, split evenly".
    pub chunk_len: usize,
    pub drop_head: usize,
    pub drop_tail: usize,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        ChunkSpec {
            n_chunks: 1,
            chunk_len: 0,
            drop_head: 0,
            drop_tail: 0,
        }
    }
}

impl ChunkSpec {
    /// Effective chunk length for recordings of `n_times` samples.
    pub fn resolve_len(&self, n_times: usize) -> Result<usize> {
        if self.n_chunks == 0 {
            return Err(Error::InvalidConfig("n_chunks must be at least 1".into()));
        }
        if self.chunk_len > 0 {
            return Ok(self.chunk_len);
        }
        let avail = n_times.saturating_sub(self.drop_head + self.drop_tail);
        let len = avail / self.n_chunks;
        if len == 0 {
            return Err(Error::TooShort {
                len: n_times,
                needed: self.drop_head + self.drop_tail + self.n_chunks,
            });
        }
        Ok(len)
    }
}

/// Splits a `channels x time` signal into `h` chunks of `d` samples after
/// dropping `drop_head` leading samples; trailing samples beyond the chunks
/// are discarded. Row `t * channels + i` holds chunk `t` of channel `i`.
pub fn chunk(signal: ArrayView2<f64>, h: usize, d: usize, drop_head: usize, drop_tail: usize) -> Result<Array2<f64>> {
    let (n_ch, len) = signal.dim();
    let needed = drop_head + drop_tail + h * d;
    if len < needed {
        return Err(Error::TooShort { len, needed });
    }
    let mut out = Array2::zeros((n_ch * h, d));
    for t in 0..h {
        let start = drop_head + t * d;
        for i in 0..n_ch {
            out.row_mut(t * n_ch + i)
                .assign(&signal.slice(ndarray::s![i, start..start + d]));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub label: u8,
    pub subject_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub sample_rate: f64,
    pub channels: Vec<String>,
    /// Primary-graph file (graph text format), relative to the manifest.
    #[serde(default)]
    pub topology: Option<String>,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    sample_rate: f64,
    label: u8,
    subject_id: usize,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn signal_to_csv(names: &[String], signal: &Array2<f64>) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for t in 0..signal.ncols() {
        let row: Vec<String> = signal.column(t).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn signal_from_csv(path: &Path, text: &str) -> Result<(Vec<String>, Array2<f64>)> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (k, line) in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| err(k + 1, format!("'{}': {e}", v.trim()))))
            .collect::<Result<_>>()?;
        if row.len() != names.len() {
            return Err(err(k + 1, format!("expected {} values, found {}", names.len(), row.len())));
        }
        columns.push(row);
    }
    let t = columns.len();
    let signal = Array2::from_shape_fn((names.len(), t), |(i, j)| columns[j][i]);
    Ok((names, signal))
}

/// Writes samples, sidecars, the optional topology and the manifest.
pub fn save_dataset(
    dir: &Path,
    ds: &LabeledDataset,
    topology: Option<&crate::graph::SignedGraph>,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(ds.len());
    for (k, s) in ds.samples.iter().enumerate() {
        let stem = format!("sample_{k:05}");
        write_file(&dir.join(format!("{stem}.csv")), &signal_to_csv(&ds.channel_names, &s.signal))?;
        let side = Sidecar {
            sample_rate: ds.sample_rate,
            label: s.label,
            subject_id: s.subject,
        };
        write_file(&dir.join(format!("{stem}.json")), &(serde_json::to_string_pretty(&side)? + "\n"))?;
        entries.push(ManifestEntry {
            path: format!("{stem}.csv"),
            label: s.label,
            subject_id: s.subject,
        });
    }
    let topo_name = match topology {
        Some(g) => {
            g.save(&dir.join("topology.txt"))?;
            Some("topology.txt".to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        sample_rate: ds.sample_rate,
        channels: ds.channel_names.clone(),
        topology: topo_name,
        samples: entries,
    };
    write_file(&dir.join("manifest.json"), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(manifest)
}

/// Loads a dataset from its manifest. Sidecars, when present, must agree
/// with the manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<(LabeledDataset, Manifest)> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::InvalidConfig(format!(
            "unsupported dataset format '{}', expected '{DATASET_FORMAT}'",
            manifest.format
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let path = base.join(&entry.path);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (names, signal) = signal_from_csv(&path, &text)?;
        if names != manifest.channels {
            return Err(Error::InvalidConfig(format!("{}: channel names differ from the manifest", path.display())));
        }
        let side_path = path.with_extension("json");
        if side_path.exists() {
            let t = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
            let side: Sidecar = serde_json::from_str(&t)?;
            if side.label != entry.label || side.subject_id != entry.subject_id {
                return Err(Error::InvalidConfig(format!(
                    "{}: sidecar disagrees with the manifest",
                    side_path.display()
                )));
            }
        }
        samples.push(Sample {
            signal,
            label: entry.label,
            subject: entry.subject_id,
        });
    }
    let ds = LabeledDataset {
        samples,
        sample_rate: manifest.sample_rate,
        channel_names: manifest.channels.clone(),
    };
    ds.validate()?;
    Ok((ds, manifest))
}

/// Resolves the topology file named in a manifest.
pub fn manifest_topology_path(manifest_path: &Path, manifest: &Manifest) -> Option<PathBuf> {
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.topology.as_ref().map(|t| base.join(t))
}
