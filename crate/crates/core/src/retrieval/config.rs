use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAYERS: [u32; 4] = [4, 7, 10, 12];
pub const DEFAULT_TOP_K: usize = 150;
pub const DEFAULT_RHO: usize = 1;
pub const DEFAULT_POOLING_FRACTION: f64 = 0.01;
pub const DEFAULT_OUTPUT_RESOLUTION: (usize, usize) = (448, 448);

/// Every knob of the scoring pipeline. `Default` suits 28x28 grids from 448x448 inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub layers: Vec<u32>,
    /// Fusion weight per entry of `layers`; non-negative, summing to 1.
    pub weights: Vec<f64>,
    pub top_k: usize,
    pub rho: usize,
    pub pooling_fraction: f64,
    /// (height, width) of the upsampled pixel map.
    pub output_resolution: (usize, usize),
    /// Gaussian smoothing of the pixel map; off unless set.
    #[serde(default)]
    pub smoothing_sigma: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self::with_layers(DEFAULT_LAYERS.to_vec())
    }
}

impl RetrievalConfig {
    /// Default knobs over `layers` with uniform weights.
    pub fn with_layers(layers: Vec<u32>) -> Self {
        let weights = uniform_weights(layers.len());
        Self {
            layers,
            weights,
            top_k: DEFAULT_TOP_K,
            rho: DEFAULT_RHO,
            pooling_fraction: DEFAULT_POOLING_FRACTION,
            output_resolution: DEFAULT_OUTPUT_RESOLUTION,
            smoothing_sigma: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.layers.is_empty() {
            return bad("layers must be non-empty".into());
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("layer ids must be strictly increasing".into());
        }
        if self.weights.len() != self.layers.len() {
            return bad(format!(
                "{} weights for {} layers",
                self.weights.len(),
                self.layers.len()
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and non-negative".into());
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return bad(format!("weights sum to {sum}, expected 1"));
        }
        if self.top_k == 0 {
            return bad("top_k must be at least 1".into());
        }
        if !(self.pooling_fraction > 0.0 && self.pooling_fraction <= 1.0) {
            return bad(format!(
                "pooling fraction {} outside (0, 1]",
                self.pooling_fraction
            ));
        }
        if self.output_resolution.0 == 0 || self.output_resolution.1 == 0 {
            return bad("output resolution must be positive".into());
        }
        if let Some(s) = self.smoothing_sigma {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("smoothing sigma {s} must be positive"));
            }
        }
        Ok(())
    }
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RetrievalConfig::default();
        c.validate().unwrap();
        assert_eq!(c.layers, vec![4, 7, 10, 12]);
        assert_eq!((c.top_k, c.rho), (150, 1));
        assert_eq!(c.weights, vec![0.25; 4]);
    }

    #[test]
    fn rejects_bad_weights_and_k() {
        let mut c = RetrievalConfig::default();
        c.weights = vec![0.5, 0.5, 0.5, -0.5];
        assert!(c.validate().is_err());
        c.weights = vec![0.3, 0.3, 0.3, 0.3];
        assert!(c.validate().is_err());
        c.weights = uniform_weights(4);
        c.top_k = 0;
        assert!(c.validate().is_err());
        c.top_k = 1;
        c.pooling_fraction = 0.0;
        assert!(c.validate().is_err());
    }
}
