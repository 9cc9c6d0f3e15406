use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abstraction::LayerPair;
use crate::comparison::Neighbor;
use crate::error::{Error, Result};
use crate::metrics::{AccuracySeries, ConfusionTable, TransferabilityScore};
use crate::nn::Domain;
use crate::stats::{BoxStats, Histogram};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const SUMMARY: &str = "summary.json";

/// Payload files of one run keyed by relative path, written in one atomic step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtifactFiles(BTreeMap<String, Vec<u8>>);

impl ArtifactFiles {
    pub fn insert_json<T: Serialize>(&mut self, path: impl Into<String>, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.0.insert(path.into(), bytes);
        Ok(())
    }

    pub fn insert_bytes(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        self.0.insert(path.into(), bytes);
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.0.get(path).map(Vec::as_slice)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Write into a hidden temporary directory under `root`, then rename it to
    /// `root/run_id`, replacing an earlier run of the same id.
    pub fn write_atomic(&self, root: &Path, run_id: &str) -> Result<PathBuf> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let pid = std::process::id();
        let tmp = root.join(format!(".{run_id}.tmp-{pid}"));
        let write = || -> Result<()> {
            if tmp.exists() {
                fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
            }
            for (rel, bytes) in &self.0 {
                let path = tmp.join(rel);
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            }
            Ok(())
        };
        if let Err(e) = write() {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let dest = root.join(run_id);
        let old = root.join(format!(".{run_id}.old-{pid}"));
        let replaced = dest.exists();
        if replaced {
            fs::rename(&dest, &old).map_err(|e| Error::io(&dest, e))?;
        }
        fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        if replaced {
            fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
        }
        Ok(dest)
    }

    /// Read every file of a written run back.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> Result<()> {
            let mut entries: Vec<_> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .collect::<std::io::Result<_>>()
                .map_err(|e| Error::io(dir, e))?;
            entries.sort_by_key(|e| e.path());
            for entry in entries {
                let path = entry.path();
                if path.is_dir() {
                    walk(base, &path, out)?;
                } else {
                    let rel = path.strip_prefix(base).expect("under base").to_string_lossy().replace('\\', "/");
                    out.insert(rel, fs::read(&path).map_err(|e| Error::io(&path, e))?);
                }
            }
            Ok(())
        }
        let mut out = BTreeMap::new();
        walk(dir, dir, &mut out)?;
        Ok(Self(out))
    }
}

pub fn similarity_path(class: usize, layer: usize) -> String {
    format!("similarity/c{class}_l{layer}.json")
}

pub fn weights_path(class: usize, pair: usize) -> String {
    format!("weights/c{class}_p{pair}.json")
}

pub fn rankings_path(class: usize, layer: usize, model: Domain) -> String {
    format!("rankings/c{class}_l{layer}_{}.json", model.as_str())
}

pub fn neurons_path(class: usize, layer: usize, model: Domain) -> String {
    format!("neurons/c{class}_l{layer}_{}.json", model.as_str())
}

pub fn attribution_path(class: usize, layer: usize, model: Domain) -> String {
    format!("attribution/c{class}_l{layer}_{}.tlns", model.as_str())
}

pub fn discriminability_path(class: usize) -> String {
    format!("discriminability/c{class}.json")
}

pub fn model_path(model: Domain) -> String {
    format!("models/{}.tlns", model.as_str())
}

/// `classes` must be sorted and deduplicated.
pub fn instances_path(classes: &[usize]) -> String {
    let key: Vec<String> = classes.iter().map(usize::to_string).collect();
    format!("instances/{}.json", key.join("-"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: usize,
    pub name: String,
}

/// A layer whose neurons are attributed, addressed by its ordinal in the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronLayerInfo {
    pub ordinal: usize,
    pub layer: usize,
    pub kind: String,
    pub neurons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairInfo {
    pub ordinal: usize,
    pub from: usize,
    pub to: usize,
    pub layers: LayerPair,
    pub k_row: usize,
    pub k_w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIndex {
    pub class: usize,
    pub layers: Vec<usize>,
    pub pairs: Vec<usize>,
    pub discriminability: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub version: u32,
    pub classes: Vec<ClassInfo>,
    pub neuron_layers: Vec<NeuronLayerInfo>,
    pub pairs: Vec<PairInfo>,
    pub index: Vec<ClassIndex>,
    /// Class selections with a precomputed projection.
    pub projections: Vec<Vec<usize>>,
    pub notes: BTreeMap<String, String>,
}

impl Manifest {
    pub fn class_index(&self, class: usize) -> Option<&ClassIndex> {
        self.index.iter().find(|c| c.class == class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAccuracy {
    pub source_on_target_val: f64,
    pub target_on_target_val: f64,
    pub scratch_on_target_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub series: Vec<AccuracySeries>,
    pub scratch_series: Vec<AccuracySeries>,
    pub transferability: TransferabilityScore,
    pub confusion: ConfusionTable,
    pub overall_accuracy: f64,
    pub final_accuracy: FinalAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronDetail {
    pub id: usize,
    pub aggregated_rank: f64,
    /// 1-based place by descending aggregated rank.
    pub position: usize,
    pub important: bool,
    /// Most similar neuron of the other model.
    pub partner: usize,
    pub similar: Vec<Neighbor>,
    pub attribution: Option<Histogram>,
    pub attribution_box: Option<BoxStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronFile {
    pub class_id: usize,
    pub layer: usize,
    pub model: Domain,
    pub neurons: Vec<NeuronDetail>,
}
