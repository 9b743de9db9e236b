//! Flag and config-file merging. Flags win over the file, the file over
//! built-in defaults.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;

use rad_core::memory_bank::{ScalingMode, ScalingProtocol};
use rad_core::retrieval::{uniform_weights, RetrievalConfig};

use crate::InvalidInput;

/// Every field optional; absent fields fall through to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub layers: Option<Vec<u32>>,
    pub weights: Option<Vec<f64>>,
    pub top_k: Option<usize>,
    pub rho: Option<usize>,
    pub pooling_fraction: Option<f64>,
    pub output_resolution: Option<(usize, usize)>,
    pub smoothing_sigma: Option<f64>,
    pub mode: Option<ScalingMode>,
    pub tau: Option<f64>,
    pub shots: Option<usize>,
    pub base_categories: Option<Vec<String>>,
    pub target_categories: Option<Vec<String>>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| InvalidInput(format!("config {}: {e}", path.display())).into())
    }
}

#[derive(Debug, Clone, Args)]
pub struct RetrievalFlags {
    /// Encoder layers to use, e.g. 4,7,10,12.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<u32>>,
    /// Fusion weights, one per layer, summing to 1.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Number of reference images retrieved per test image.
    #[arg(long)]
    pub topk: Option<usize>,
    /// Neighborhood radius in grid cells.
    #[arg(long)]
    pub rho: Option<usize>,
    /// Fraction of pixels averaged into the image score.
    #[arg(long)]
    pub pool_frac: Option<f64>,
    /// Pixel-map size as HxW; defaults to each pack's source resolution.
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(usize, usize)>,
    /// Gaussian smoothing of pixel maps (off by default).
    #[arg(long)]
    pub smooth: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolFlags {
    /// single_class, multi_class, incremental_class or few_shot.
    #[arg(long)]
    pub mode: Option<ScalingMode>,
    /// Fraction of anomaly-free training images to keep.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Training images kept per category in few-shot mode.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Categories kept in full in incremental mode.
    #[arg(long, value_delimiter = ',')]
    pub base: Option<Vec<String>>,
    /// Categories subsampled in incremental mode.
    #[arg(long, value_delimiter = ',')]
    pub target: Option<Vec<String>>,
}

pub fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(h)?, parse(w)?))
}

/// Retrieval settings plus whether the pixel-map size was pinned.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RetrievalConfig,
    pub resolution_pinned: bool,
}

pub fn retrieval_config(flags: &RetrievalFlags, file: &ConfigFile) -> Result<Resolved> {
    let mut cfg = RetrievalConfig::default();
    if let Some(layers) = flags.layers.clone().or_else(|| file.layers.clone()) {
        cfg.weights = uniform_weights(layers.len());
        cfg.layers = layers;
    }
    // File weights belong to the file's layer list; ignore them when the
    // flags replaced that list.
    let file_weights = if flags.layers.is_some() {
        None
    } else {
        file.weights.clone()
    };
    if let Some(w) = flags.weights.clone().or(file_weights) {
        cfg.weights = w;
    }
    if let Some(k) = flags.topk.or(file.top_k) {
        cfg.top_k = k;
    }
    if let Some(r) = flags.rho.or(file.rho) {
        cfg.rho = r;
    }
    if let Some(f) = flags.pool_frac.or(file.pooling_fraction) {
        cfg.pooling_fraction = f;
    }
    let resolution = flags.resolution.or(file.output_resolution);
    if let Some(r) = resolution {
        cfg.output_resolution = r;
    }
    cfg.smoothing_sigma = flags.smooth.or(file.smoothing_sigma);
    cfg.validate()?;
    Ok(Resolved {
        config: cfg,
        resolution_pinned: resolution.is_some(),
    })
}

/// `None` when no protocol was requested at all.
pub fn protocol(flags: &ProtocolFlags, file: &ConfigFile, seed: u64) -> Result<Option<ScalingProtocol>> {
    let Some(mode) = flags.mode.or(file.mode) else {
        if flags.tau.is_some() || flags.shots.is_some() {
            return Err(InvalidInput("--tau/--shots need --mode".into()).into());
        }
        return Ok(None);
    };
    let p = ScalingProtocol {
        mode,
        tau: flags.tau.or(file.tau).unwrap_or(1.0),
        shots: flags.shots.or(file.shots).unwrap_or(1),
        base_categories: flags
            .base
            .clone()
            .or_else(|| file.base_categories.clone())
            .unwrap_or_default(),
        target_categories: flags
            .target
            .clone()
            .or_else(|| file.target_categories.clone())
            .unwrap_or_default(),
        seed,
    };
    p.validate()?;
    Ok(Some(p))
}
