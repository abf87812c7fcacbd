//! Run configuration file, seed resolution, and the config echo embedded in
//! every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scdm_core::corrupt::{CorruptionMode, Metric};
use scdm_core::imagediff::{Coupling, VarianceMode};
use scdm_core::schedule::Eta;
use scdm_core::{Error, Result};

/// Defaults file mirrored by the command-line flags; any flag given
/// explicitly wins over the value here.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,

    // label/image schedule
    pub num_steps: Option<usize>,
    pub eta: Option<Eta>,
    pub schedule_kind: Option<String>,
    pub beta_start: Option<f64>,
    pub beta_end: Option<f64>,
    pub cosine_offset: Option<f64>,

    // sampler
    pub sample_steps: Option<usize>,
    pub cfg_scale: Option<f64>,
    pub extrapolation: Option<f64>,
    pub percentile: Option<f64>,
    pub variance: Option<VarianceMode>,
    pub coupling: Option<Coupling>,
    pub force_full_mask: Option<bool>,

    // corruption
    pub corrupt_mode: Option<CorruptionMode>,
    pub ds_factor: Option<usize>,
    pub edge_distance: Option<usize>,
    pub random_rate: Option<f64>,
    pub unlabeled_class: Option<u16>,
    pub metric: Option<Metric>,
    pub ignore_unlabeled_edges: Option<bool>,

    // toy data / training
    pub toy_spec: Option<PathBuf>,
    pub lambda_vlb: Option<f64>,
    pub drop_rate: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub iters: Option<usize>,
    pub hidden: Option<usize>,
    pub emb_dim: Option<usize>,
    pub learned_variance: Option<bool>,
    pub stats_maps: Option<usize>,

    // ablation
    pub pairs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("config {}: {e}", path.display())))
    }
}

/// Seed precedence: explicit flag, then config file, then `SCDM_SEED`,
/// then 0.
pub fn resolve_seed(flag: Option<u64>, config: &RunConfig) -> Result<u64> {
    if let Some(s) = flag.or(config.seed) {
        return Ok(s);
    }
    match std::env::var("SCDM_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .map_err(|_| Error::argument(format!("SCDM_SEED {text:?} is not a u64"))),
        Err(_) => Ok(0),
    }
}

pub fn code_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// The reproducibility block written into every artifact: the command, the
/// seed it resolved, and every parameter that shaped the output.
pub fn config_echo(command: &str, seed: u64, args: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "command": command,
        "seed": seed,
        "code_version": code_version(),
        "args": args,
    })
}

/// Sidecar path for a binary artifact: `x.sim` -> `x.sim.json`.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    artifact.with_file_name(name)
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(format!("report serialization failed: {e}")))?;
    scdm_core::fsx::atomic_write(path, text.as_bytes())
}

pub fn parse_corruption_mode(s: &str) -> Result<CorruptionMode> {
    match s {
        "ds" => Ok(CorruptionMode::Ds),
        "edge" => Ok(CorruptionMode::Edge),
        "random" => Ok(CorruptionMode::Random),
        other => Err(Error::argument(format!(
            "unknown corruption mode {other:?} (ds|edge|random)"
        ))),
    }
}

pub fn parse_metric(s: &str) -> Result<Metric> {
    match s {
        "chebyshev" => Ok(Metric::Chebyshev),
        "manhattan" => Ok(Metric::Manhattan),
        "euclidean" => Ok(Metric::Euclidean),
        other => Err(Error::argument(format!(
            "unknown metric {other:?} (chebyshev|manhattan|euclidean)"
        ))),
    }
}

pub fn parse_variance(s: &str) -> Result<VarianceMode> {
    match s {
        "fixed_small" => Ok(VarianceMode::FixedSmall),
        "fixed_large" => Ok(VarianceMode::FixedLarge),
        "learned" => Ok(VarianceMode::Learned),
        other => Err(Error::argument(format!(
            "unknown variance mode {other:?} (fixed_small|fixed_large|learned)"
        ))),
    }
}

pub fn parse_coupling(s: &str) -> Result<Coupling> {
    match s {
        "coupled" => Ok(Coupling::Coupled),
        "fresh" => Ok(Coupling::Fresh),
        other => Err(Error::argument(format!(
            "unknown coupling {other:?} (coupled|fresh)"
        ))),
    }
}
