//! Numerical checks of the distance-to-memory score and of the singular
//! value inequality behind decoder amplification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{sigma_max, sigma_min, Matrix};
use crate::error::{Error, Result};
use crate::feature_io::FeaturePack;
use crate::memory_bank::MemoryBank;
use crate::retrieval::{distance_to_set, score_image, RetrievalConfig};

fn euclid(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Distance from `x` to the nearest member of `memory`.
pub fn retrieval_score(x: &[f64], memory: &[Vec<f64>]) -> Result<f64> {
    Ok(distance_to_set(x, memory)?.0)
}

/// Largest `|score(u) − score(v)| − ‖u − v‖` over `pairs`. A 1-Lipschitz
/// score never exceeds zero.
pub fn check_nonexpansive_with<F>(score: F, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let gaps = pairs
        .par_iter()
        .map(|(u, v)| Ok((score(u)? - score(v)?).abs() - euclid(u, v)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(gaps.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

pub fn check_nonexpansive(memory: &[Vec<f64>], pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if memory.is_empty() {
        return Err(Error::EmptySet);
    }
    check_nonexpansive_with(|x| retrieval_score(x, memory), pairs)
}

/// Largest score of a stored item against its own memory.
pub fn check_saturation(memory: &[Vec<f64>]) -> Result<f64> {
    if memory.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut worst = 0.0f64;
    for z in memory {
        worst = worst.max(retrieval_score(z, memory)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankSaturation {
    pub images: usize,
    pub max_patch_score: f64,
    pub max_image_score: f64,
}

/// Scores every pack against `bank` (which should contain them all) and
/// reports the largest fused cell score and image score.
pub fn check_bank_saturation(
    bank: &MemoryBank,
    packs: &[FeaturePack],
    config: &RetrievalConfig,
) -> Result<BankSaturation> {
    let per_image = packs
        .par_iter()
        .map(|p| {
            let r = score_image(bank, p, config)?;
            let patch = r.fused_grid.data.iter().fold(0.0f64, |m, &v| m.max(v as f64));
            Ok((patch, r.image_score))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BankSaturation {
        images: packs.len(),
        max_patch_score: per_image.iter().map(|p| p.0).fold(0.0, f64::max),
        max_image_score: per_image.iter().map(|p| p.1).fold(0.0, f64::max),
    })
}

/// Largest `score_superset(x) − score_subset(x)` over `samples`; the
/// distance to a larger set never exceeds the distance to a smaller one.
pub fn check_dominance_with<F, G>(subset_score: F, superset_score: G, samples: &[Vec<f64>]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    G: Fn(&[f64]) -> Result<f64> + Sync,
{
    let diffs = samples
        .par_iter()
        .map(|x| Ok(superset_score(x)? - subset_score(x)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(diffs.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

pub fn check_dominance(subset: &[Vec<f64>], superset: &[Vec<f64>], samples: &[Vec<f64>]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(i) = subset.iter().position(|u| !superset.contains(u)) {
        return Err(Error::NotSubset(i));
    }
    check_dominance_with(
        |x| retrieval_score(x, subset),
        |x| retrieval_score(x, superset),
        samples,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvCheck {
    pub trials: usize,
    /// max of (σ_min(AB) − σ_max(A)·σ_min(B)) / (σ_max(A)·σ_max(B))
    pub max_relative_slack: f64,
}

/// σ_min(AB) ≤ σ_max(A)·σ_min(B) on Gaussian pairs with every dimension
/// drawn from 1..=`max_dim`. The slack is scaled by σ_max(A)·σ_max(B),
/// the magnitude of AB.
pub fn check_sv_inequality(trials: usize, max_dim: usize, seed: u64) -> SvCheck {
    let slacks: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ t);
            let (p, q, r) = (
                rng.random_range(1..=max_dim),
                rng.random_range(1..=max_dim),
                rng.random_range(1..=max_dim),
            );
            let a = Matrix::gaussian(p, q, &mut rng);
            let b = Matrix::gaussian(q, r, &mut rng);
            sv_slack(&a, &b)
        })
        .collect();
    SvCheck {
        trials,
        max_relative_slack: slacks.into_iter().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn sv_slack(a: &Matrix, b: &Matrix) -> f64 {
    let scale = sigma_max(a) * sigma_max(b);
    if scale == 0.0 {
        return 0.0;
    }
    (sigma_min(&a.matmul(b)) - sigma_max(a) * sigma_min(b)) / scale
}
