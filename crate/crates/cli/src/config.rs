//! Run configuration: one JSON document plus dotted `--set` overrides.

use std::path::{Path, PathBuf};

use msgwtcn::analysis::{ExperimentConfig, NodeSubset};
use msgwtcn::data::{NormMode, Split, SynthParams, Topology};
use msgwtcn::model::ModelConfig;
use msgwtcn::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed; model initialisation, shuffling, dropout, synthetic
    /// data and replicates all derive from it. Copied into `train.seed`.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
    /// Checkpoint read by evaluate, predict and analyze; defaults to
    /// `<outdir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Split scored by evaluate and predict.
    pub eval_split: Split,
    pub analysis: AnalysisConfig,
    /// Seeded replicates per configuration in ablate and scale-scan.
    pub replicates: usize,
    pub scan: ScanConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            checkpoint: None,
            eval_split: Split::Test,
            analysis: AnalysisConfig::default(),
            replicates: 3,
            scan: ScanConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Edge list CSV `src,dst`.
    pub graph: Option<PathBuf>,
    /// Speed CSV `timestamp,<node>...`.
    pub speeds: Option<PathBuf>,
    /// Chronological train/val/test fractions.
    pub split: [f64; 3],
    pub norm_mode: NormMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { graph: None, speeds: None, split: [0.7, 0.1, 0.2], norm_mode: NormMode::PerNode }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub topology: Topology,
    pub steps: usize,
    pub params: SynthParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { topology: Topology::default(), steps: 4000, params: SynthParams::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Share of nodes flagged per scale in the link ranking.
    pub percentile: f64,
    /// Also write every weight matrix as CSV.
    pub write_matrices: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { percentile: 5.0, write_matrices: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub grid: Vec<f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { grid: (1..=12).map(|i| 0.5 * i as f64).collect() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Node subsets; empty means the whole graph as `full`.
    pub subsets: Vec<NodeSubset>,
    pub scale_sets: Vec<Vec<f64>>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            subsets: Vec::new(),
            scale_sets: vec![
                vec![0.85, 0.85, 0.85],
                vec![3.85, 3.85, 3.85],
                vec![5.85, 5.85, 5.85],
                vec![0.85, 3.85, 5.85],
            ],
        }
    }
}

impl RunConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            train: self.train.clone(),
            replicates: self.replicates,
            split: self.data.split,
            norm_mode: self.data.norm_mode,
        }
    }

    pub fn checkpoint_path(&self, outdir: &Path) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| outdir.join("model.ckpt"))
    }
}

/// Sets `path` (dot separated) inside `root`, creating objects on the way.
/// The value is parsed as JSON and kept as a string when that fails.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got `{assignment}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("`{key}`: `{part}` is inside a non-object value")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::config(format!("`{key}` does not address an object field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Defaults, then the config file, then `--set` overrides, then `--seed`.
pub fn resolve(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut root = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(CliError::config("config file must hold a JSON object"));
    }
    for s in sets {
        apply_override(&mut root, s)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(root).map_err(|e| CliError::config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

/// Help text listing every key with its default.
pub fn keys_help() -> String {
    let json = serde_json::to_string_pretty(&RunConfig::default()).expect("serializable defaults");
    format!(
        "Config keys (JSON file via --config, or --set key.path=value), defaults shown:\n{json}\n\n\
         topology kinds: grid {{width, height}}, two_community {{n1, n2, bridges}}, hybrid_highway_grid {{width, height}}\n\
         model.aggregation: sum | concat_linear; model.laplacian: symmetric_normalized | combinatorial\n\
         data.norm_mode: per_node | global; eval_split: train | val | test"
    )
}
