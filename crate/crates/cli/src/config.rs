//! Experiment configuration: one JSON document with a version field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pmsda_core::synthdata::{generate_benchmark, BenchmarkName, SubjectDomain};
use pmsda_core::TrainConfig;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSelection {
    pub name: String,
    pub n_sources: usize,
}

/// Top-level experiment file. Either `benchmark` (generated data) or
/// `dataset_dir` (previously generated files) selects the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub benchmark: Option<BenchmarkSelection>,
    pub dataset_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    /// Ranking criterion: "cosine" or "mmd".
    pub criterion: String,
    /// Optional model checkpoint used by `rank`.
    pub model_path: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            benchmark: None,
            dataset_dir: None,
            seeds: vec![0],
            out_dir: None,
            criterion: "cosine".to_string(),
            model_path: None,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must not be empty"));
        }
        if self.criterion != "cosine" && self.criterion != "mmd" {
            return Err(CliError::config(format!(
                "unknown criterion {:?} (expected cosine or mmd)",
                self.criterion
            )));
        }
        self.train
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        if let Some(b) = &self.benchmark {
            b.name
                .parse::<BenchmarkName>()
                .map_err(|e| CliError::config(e.to_string()))?;
            if b.n_sources < 3 {
                return Err(CliError::config(format!(
                    "benchmark n_sources must be at least 3, got {}",
                    b.n_sources
                )));
            }
        }
        Ok(())
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| CliError::config("no output directory: set out_dir or pass --out"))
    }

    /// Materialize the dataset for one seed. Generated benchmarks are drawn
    /// per seed; a dataset directory holds one fixed dataset.
    pub fn dataset(&self, seed: u64) -> Result<(Vec<SubjectDomain>, SubjectDomain), CliError> {
        if let Some(dir) = &self.dataset_dir {
            return load_dataset_dir(dir);
        }
        if let Some(b) = &self.benchmark {
            let name: BenchmarkName = b.name.parse().map_err(|e: pmsda_core::Error| {
                CliError::config(e.to_string())
            })?;
            return generate_benchmark(name, b.n_sources, seed)
                .map_err(|e| CliError::config(e.to_string()));
        }
        Err(CliError::config(
            "no dataset: set either benchmark or dataset_dir",
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub benchmark: String,
    pub n_sources: usize,
    pub seed: u64,
    pub target: String,
    pub sources: Vec<String>,
}

pub fn load_dataset_dir(dir: &Path) -> Result<(Vec<SubjectDomain>, SubjectDomain), CliError> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| {
        CliError::io(format!(
            "cannot read manifest {}: {e}",
            manifest_path.display()
        ))
    })?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::io(format!("invalid manifest: {e}")))?;
    let load = |name: &str| -> Result<SubjectDomain, CliError> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        SubjectDomain::from_json(&text).map_err(|e| CliError::io(e.to_string()))
    };
    let target = load(&manifest.target)?;
    let sources = manifest
        .sources
        .iter()
        .map(|s| load(s))
        .collect::<Result<Vec<_>, _>>()?;
    if sources.is_empty() {
        return Err(CliError::io("manifest lists no sources"));
    }
    Ok((sources, target))
}
