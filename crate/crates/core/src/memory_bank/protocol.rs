//! Subsampling protocols for few-shot and data-scaling studies.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::FeaturePack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    SingleClass,
    MultiClass,
    IncrementalClass,
    FewShot,
}

impl ScalingMode {
    pub fn name(self) -> &'static str {
        match self {
            ScalingMode::SingleClass => "single_class",
            ScalingMode::MultiClass => "multi_class",
            ScalingMode::IncrementalClass => "incremental_class",
            ScalingMode::FewShot => "few_shot",
        }
    }
}

impl std::str::FromStr for ScalingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "single_class" => Ok(ScalingMode::SingleClass),
            "multi_class" => Ok(ScalingMode::MultiClass),
            "incremental_class" => Ok(ScalingMode::IncrementalClass),
            "few_shot" => Ok(ScalingMode::FewShot),
            other => Err(Error::Config(format!("unknown scaling mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingProtocol {
    pub mode: ScalingMode,
    /// Fraction of anomaly-free images kept (all modes but few-shot).
    pub tau: f64,
    /// References kept per category in few-shot mode.
    pub shots: usize,
    pub base_categories: Vec<String>,
    pub target_categories: Vec<String>,
    pub seed: u64,
}

impl ScalingProtocol {
    pub fn multi_class(tau: f64, seed: u64) -> Self {
        Self {
            mode: ScalingMode::MultiClass,
            tau,
            shots: 1,
            base_categories: Vec::new(),
            target_categories: Vec::new(),
            seed,
        }
    }

    pub fn single_class(tau: f64, seed: u64) -> Self {
        Self {
            mode: ScalingMode::SingleClass,
            ..Self::multi_class(tau, seed)
        }
    }

    pub fn few_shot(shots: usize, seed: u64) -> Self {
        Self {
            mode: ScalingMode::FewShot,
            shots,
            ..Self::multi_class(1.0, seed)
        }
    }

    pub fn incremental(base: Vec<String>, target: Vec<String>, tau: f64, seed: u64) -> Self {
        Self {
            mode: ScalingMode::IncrementalClass,
            base_categories: base,
            target_categories: target,
            ..Self::multi_class(tau, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != ScalingMode::FewShot && !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1]", self.tau)));
        }
        if self.mode == ScalingMode::FewShot && self.shots == 0 {
            return Err(Error::Config("shots must be at least 1".into()));
        }
        if self.mode == ScalingMode::IncrementalClass {
            if self.target_categories.is_empty() {
                return Err(Error::Config(
                    "incremental_class needs at least one target category".into(),
                ));
            }
            if let Some(c) = self
                .target_categories
                .iter()
                .find(|c| self.base_categories.contains(c))
            {
                return Err(Error::Config(format!("category {c:?} is both base and target")));
            }
        }
        Ok(())
    }
}

/// ⌈τ·n⌉, never zero for τ > 0 and n > 0. A relative slack of 1e-9 keeps
/// products such as 0.1·30 from rounding up past the exact integer.
pub fn ceil_count(tau: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let x = tau * n as f64;
    let k = (x - 1e-9 * x.max(1.0)).ceil().max(1.0) as usize;
    k.min(n)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seeded Fisher–Yates prefix of `pool` of length `keep`.
fn shuffled_prefix(pool: &[usize], keep: usize, seed: u64, salt: &str) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(salt.as_bytes()));
    let mut pool = pool.to_vec();
    pool.shuffle(&mut rng);
    pool.truncate(keep);
    pool
}

/// Indices into `categories` selected by `protocol`, in ascending order.
pub fn select_indices<S: AsRef<str>>(categories: &[S], protocol: &ScalingProtocol) -> Result<Vec<usize>> {
    protocol.validate()?;
    let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in categories.iter().enumerate() {
        by_category.entry(c.as_ref()).or_default().push(i);
    }
    for c in protocol.base_categories.iter().chain(&protocol.target_categories) {
        if !by_category.contains_key(c.as_str()) {
            return Err(Error::UnknownCategory(c.clone()));
        }
    }

    let mode = protocol.mode.name();
    let seed = protocol.seed;
    let mut selected: BTreeSet<usize> = BTreeSet::new();
    match protocol.mode {
        ScalingMode::SingleClass => {
            for (cat, pool) in &by_category {
                let keep = ceil_count(protocol.tau, pool.len());
                selected.extend(shuffled_prefix(pool, keep, seed, &format!("{mode}/{cat}")));
            }
        }
        ScalingMode::MultiClass => {
            let pool: Vec<usize> = (0..categories.len()).collect();
            let keep = ceil_count(protocol.tau, pool.len());
            selected.extend(shuffled_prefix(&pool, keep, seed, mode));
        }
        ScalingMode::IncrementalClass => {
            for cat in &protocol.base_categories {
                selected.extend(&by_category[cat.as_str()]);
            }
            for cat in &protocol.target_categories {
                let pool = &by_category[cat.as_str()];
                let keep = ceil_count(protocol.tau, pool.len());
                selected.extend(shuffled_prefix(pool, keep, seed, &format!("{mode}/{cat}")));
            }
        }
        ScalingMode::FewShot => {
            for (cat, pool) in &by_category {
                let keep = protocol.shots.min(pool.len());
                selected.extend(shuffled_prefix(pool, keep, seed, &format!("{mode}/{cat}")));
            }
        }
    }
    Ok(selected.into_iter().collect())
}

/// Packs selected from `packs` by `protocol`, in their original order.
pub fn subsample_bank<'a>(
    packs: &'a [FeaturePack],
    protocol: &ScalingProtocol,
) -> Result<Vec<&'a FeaturePack>> {
    let categories: Vec<&str> = packs.iter().map(|p| p.category.as_str()).collect();
    Ok(select_indices(&categories, protocol)?
        .into_iter()
        .map(|i| &packs[i])
        .collect())
}
