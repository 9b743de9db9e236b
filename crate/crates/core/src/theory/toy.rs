//! Linear encode/decode toys: a bottleneck that compresses benign
//! directions, a least-squares decoder, and the gain the decoder needs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{least_squares, orthonormalize, sigma_max, sigma_min, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    /// Ambient feature dimension.
    pub ambient: usize,
    /// Bottleneck dimension, at most `ambient`.
    pub bottleneck: usize,
    /// Dimension of the benign-variation subspace, at most `bottleneck`.
    pub benign: usize,
    pub samples: usize,
    /// Factor by which the bottleneck shrinks benign directions.
    pub compression: f64,
    /// Standard deviation of isotropic noise added to normal features.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            ambient: 24,
            bottleneck: 8,
            benign: 4,
            samples: 400,
            compression: 0.01,
            noise: 1e-3,
            seed: 0,
        }
    }
}

/// A linear reconstruction `R = decoder · encoder` fitted to `normal`.
#[derive(Debug, Clone)]
pub struct ToyReconstruction {
    /// bottleneck × ambient
    pub encoder: Matrix,
    /// ambient × bottleneck
    pub decoder: Matrix,
    /// samples × ambient, one feature per row
    pub normal: Matrix,
    /// ambient × benign, orthonormal columns
    pub benign_basis: Matrix,
}

impl ToyReconstruction {
    /// Random instance: the encoder is row-orthogonal with the rows that
    /// read the benign subspace scaled by `compression`; normal features
    /// are an offset plus benign variation plus noise; the decoder is the
    /// least-squares fit on them.
    pub fn random(cfg: &ToyConfig) -> Result<Self> {
        let (dim, code, k) = (cfg.ambient, cfg.bottleneck, cfg.benign);
        if !(k >= 1 && k <= code && code <= dim) {
            return Err(Error::Config(format!(
                "toy dimensions must satisfy 1 <= benign ({k}) <= bottleneck ({code}) <= ambient ({dim})"
            )));
        }
        if !(cfg.compression > 0.0 && cfg.compression.is_finite()) {
            return Err(Error::Config(format!(
                "compression {} must be positive",
                cfg.compression
            )));
        }
        if cfg.samples < code {
            return Err(Error::Config(format!(
                "need at least {code} samples to fit the decoder, got {}",
                cfg.samples
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let basis = orthonormalize(&Matrix::gaussian(dim, dim, &mut rng));
        if basis.cols != dim {
            return Err(Error::Config("degenerate random basis".into()));
        }
        let benign_basis = basis.columns(0..k);
        let rotation = orthonormalize(&Matrix::gaussian(code, code, &mut rng));
        let raw = Matrix::from_fn(code, dim, |i, j| {
            if i < k {
                cfg.compression * basis.get(j, i)
            } else {
                basis.get(j, i)
            }
        });
        let encoder = rotation.matmul(&raw);

        let offset: Vec<f64> = if code > k {
            basis.column(k).iter().map(|v| 3.0 * v).collect()
        } else {
            vec![0.0; dim]
        };
        let z = Matrix::gaussian(cfg.samples, k, &mut rng);
        let noise = Matrix::gaussian(cfg.samples, dim, &mut rng).scale(cfg.noise);
        let variation = z.matmul(&benign_basis.transpose());
        let normal = Matrix::from_fn(cfg.samples, dim, |i, j| {
            offset[j] + variation.get(i, j) + noise.get(i, j)
        });
        Ok(Self::fit(encoder, normal, benign_basis))
    }

    /// Fits the decoder for a given encoder by least squares on `normal`.
    pub fn fit(encoder: Matrix, normal: Matrix, benign_basis: Matrix) -> Self {
        let codes = normal.matmul(&encoder.transpose());
        let decoder = least_squares(&codes, &normal).transpose();
        Self {
            encoder,
            decoder,
            normal,
            benign_basis,
        }
    }

    pub fn reconstruction(&self) -> Matrix {
        self.decoder.matmul(&self.encoder)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationReport {
    /// 1 − σ_min of the reconstruction restricted to the benign subspace,
    /// floored at 0.
    pub eta: f64,
    pub sigma_min_encoder_benign: f64,
    pub sigma_max_decoder: f64,
    /// (1 − η) / sigma_min_encoder_benign; infinite when the encoder
    /// annihilates a benign direction.
    pub bound: f64,
    /// sigma_max_decoder − bound.
    pub slack: f64,
    /// η ≥ 1: fidelity fails, the bound says nothing and is not checked.
    pub degenerate: bool,
    /// ‖R·x − x‖ for each normal row.
    pub alpha: Vec<f64>,
    pub delta_app: f64,
    /// Largest difference between the residual score ‖decoder(encoder x) − x‖
    /// and alpha over the normal rows.
    pub residual_gap: f64,
}

impl AmplificationReport {
    pub fn bound_holds(&self, tol: f64) -> bool {
        self.degenerate || self.sigma_max_decoder >= self.bound - tol
    }
}

pub fn amplification_report(toy: &ToyReconstruction) -> AmplificationReport {
    let r = toy.reconstruction();
    let fidelity = sigma_min(&r.matmul(&toy.benign_basis));
    let raw_eta = 1.0 - fidelity;
    let degenerate = raw_eta >= 1.0;
    let eta = raw_eta.max(0.0);
    let sigma_b = sigma_min(&toy.encoder.matmul(&toy.benign_basis));
    let sigma_psi = sigma_max(&toy.decoder);
    let bound = if degenerate {
        0.0
    } else if sigma_b == 0.0 {
        f64::INFINITY
    } else {
        (1.0 - eta) / sigma_b
    };

    let mut alpha = Vec::with_capacity(toy.normal.rows);
    let mut residual_gap = 0.0f64;
    for i in 0..toy.normal.rows {
        let x = toy.normal.row(i);
        let rx = r.matvec(x);
        let a = rx
            .iter()
            .zip(x)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        let decoded = toy.decoder.matvec(&toy.encoder.matvec(x));
        let s = decoded
            .iter()
            .zip(x)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        residual_gap = residual_gap.max((a - s).abs());
        alpha.push(a);
    }
    let delta_app = alpha.iter().sum::<f64>() / alpha.len().max(1) as f64;
    AmplificationReport {
        eta,
        sigma_min_encoder_benign: sigma_b,
        sigma_max_decoder: sigma_psi,
        bound,
        slack: sigma_psi - bound,
        degenerate,
        alpha,
        delta_app,
        residual_gap,
    }
}

pub fn amplification_demo(cfg: &ToyConfig) -> Result<AmplificationReport> {
    Ok(amplification_report(&ToyReconstruction::random(cfg)?))
}
