//! Executable checks of the properties retrieval scoring relies on, and of
//! the decoder-amplification bound on linear toys.

mod checks;
pub mod linalg;
mod toy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checks::{
    check_bank_saturation, check_dominance, check_dominance_with, check_nonexpansive,
    check_nonexpansive_with, check_saturation, check_sv_inequality, retrieval_score, sv_slack,
    BankSaturation, SvCheck,
};
pub use toy::{amplification_demo, amplification_report, AmplificationReport, ToyConfig, ToyReconstruction};

use crate::error::Result;

/// Tolerance for every exact-arithmetic contract.
pub const CONTRACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySettings {
    pub seed: u64,
    pub pairs: usize,
    pub samples: usize,
    pub sv_trials: usize,
    pub memory_size: usize,
    pub dim: usize,
    /// Swap the distance-to-memory score for twice its value, which is not
    /// 1-Lipschitz, so the non-expansiveness and dominance checks must fail.
    pub inject_fault: bool,
}

impl Default for TheorySettings {
    fn default() -> Self {
        Self {
            seed: 0,
            pairs: 10_000,
            samples: 1_000,
            sv_trials: 1_000,
            memory_size: 256,
            dim: 64,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub limit: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: &str, measured: f64, relation: Relation, limit: f64) -> Self {
        let passed = match relation {
            Relation::AtMost => measured <= limit,
            Relation::AtLeast => measured >= limit,
        };
        Self {
            name: name.into(),
            measured,
            relation,
            limit,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub settings: TheorySettings,
    pub checks: Vec<CheckOutcome>,
    pub amplification: Vec<AmplificationSummary>,
    pub passed: bool,
}

/// One toy instance without the per-row gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplificationSummary {
    pub config: ToyConfig,
    pub eta: f64,
    pub sigma_min_encoder_benign: f64,
    pub sigma_max_decoder: f64,
    pub bound: f64,
    pub slack: f64,
    pub degenerate: bool,
    pub delta_app: f64,
}

fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..d)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

fn toy_grid(seed: u64) -> Vec<ToyConfig> {
    let mut out = Vec::new();
    for (i, compression) in [0.01, 0.001, 0.1, 0.5, 1.0].into_iter().enumerate() {
        for (j, noise) in [1e-3, 0.05, 0.5].into_iter().enumerate() {
            out.push(ToyConfig {
                compression,
                noise,
                seed: seed.wrapping_add((i * 3 + j) as u64),
                ..ToyConfig::default()
            });
        }
    }
    out.push(ToyConfig {
        ambient: 16,
        bottleneck: 16,
        benign: 16,
        compression: 1.0,
        noise: 0.0,
        seed,
        ..ToyConfig::default()
    });
    out
}

/// Runs every check with fresh seeded data and collects pass/fail lines.
pub fn verify_all(settings: &TheorySettings) -> Result<TheoryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let (n, d) = (settings.memory_size, settings.dim);
    let memory = gaussian_rows(&mut rng, n, d, 1.0);
    let fault = settings.inject_fault;
    let score = |x: &[f64]| -> Result<f64> {
        let s = retrieval_score(x, &memory)?;
        Ok(if fault { 2.0 * s } else { s })
    };

    // Far pairs and close pairs, where a non-Lipschitz score shows most.
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..settings.pairs)
        .map(|i| {
            let u = gaussian_rows(&mut rng, 1, d, 1.5).remove(0);
            let step = if i % 2 == 0 { 1.5 } else { 1e-3 };
            let v = u
                .iter()
                .map(|x| x + step * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (u, v)
        })
        .collect();
    let mut checks = vec![CheckOutcome::new(
        "non_expansiveness",
        check_nonexpansive_with(score, &pairs)?,
        Relation::AtMost,
        CONTRACT_TOLERANCE,
    )];

    checks.push(CheckOutcome::new(
        "saturation",
        check_saturation(&memory)?,
        Relation::AtMost,
        1e-6,
    ));
    let mut perturbed = memory.clone();
    let delta = gaussian_rows(&mut rng, 1, d, 1e-3).remove(0);
    for (m, dl) in perturbed[0].iter_mut().zip(&delta) {
        *m += dl;
    }
    let delta_norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    checks.push(CheckOutcome::new(
        "saturation_under_perturbation",
        retrieval_score(&memory[0], &perturbed)? - delta_norm,
        Relation::AtMost,
        CONTRACT_TOLERANCE,
    ));

    let subset: Vec<Vec<f64>> = memory[..n / 2].to_vec();
    let mut superset = subset.clone();
    superset.extend(gaussian_rows(&mut rng, n / 2, d, 1.0));
    let samples = gaussian_rows(&mut rng, settings.samples, d, 1.5);
    let dominance = if fault {
        check_dominance_with(
            |x| retrieval_score(x, &subset),
            |x| Ok(2.0 * retrieval_score(x, &superset)?),
            &samples,
        )?
    } else {
        check_dominance(&subset, &superset, &samples)?
    };
    checks.push(CheckOutcome::new(
        "dominance",
        dominance,
        Relation::AtMost,
        CONTRACT_TOLERANCE,
    ));

    let sv = check_sv_inequality(settings.sv_trials, 32, settings.seed);
    checks.push(CheckOutcome::new(
        "singular_value_inequality",
        sv.max_relative_slack,
        Relation::AtMost,
        CONTRACT_TOLERANCE,
    ));

    let mut bridge = 0.0f64;
    for _ in 0..settings.samples {
        let mut u = gaussian_rows(&mut rng, 1, d, 1.0).remove(0);
        let mut v = gaussian_rows(&mut rng, 1, d, 1.0).remove(0);
        for w in [&mut u, &mut v] {
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter_mut().for_each(|x| *x /= norm);
        }
        let cos: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let dist = retrieval_score(&u, std::slice::from_ref(&v))?;
        bridge = bridge.max((dist * dist - 2.0 * (1.0 - cos)).abs());
    }
    checks.push(CheckOutcome::new(
        "cosine_euclidean_bridge",
        bridge,
        Relation::AtMost,
        1e-6,
    ));

    let mut amplification = Vec::new();
    let mut worst_gap = f64::NEG_INFINITY;
    for cfg in toy_grid(settings.seed) {
        let rep = amplification_demo(&cfg)?;
        if !rep.degenerate {
            worst_gap = worst_gap.max(rep.bound - rep.sigma_max_decoder);
        }
        amplification.push(AmplificationSummary {
            config: cfg,
            eta: rep.eta,
            sigma_min_encoder_benign: rep.sigma_min_encoder_benign,
            sigma_max_decoder: rep.sigma_max_decoder,
            bound: rep.bound,
            slack: rep.slack,
            degenerate: rep.degenerate,
            delta_app: rep.delta_app,
        });
    }
    checks.push(CheckOutcome::new(
        "amplification_bound",
        worst_gap,
        Relation::AtMost,
        CONTRACT_TOLERANCE,
    ));
    let headline = &amplification[0];
    let gain = if headline.eta <= 0.1 {
        headline.sigma_max_decoder
    } else {
        0.0
    };
    checks.push(CheckOutcome::new(
        "amplification_gain",
        gain,
        Relation::AtLeast,
        90.0,
    ));

    let passed = checks.iter().all(|c| c.passed);
    Ok(TheoryReport {
        settings: settings.clone(),
        checks,
        amplification,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TheorySettings {
        TheorySettings {
            pairs: 400,
            samples: 100,
            sv_trials: 50,
            memory_size: 32,
            dim: 8,
            ..TheorySettings::default()
        }
    }

    #[test]
    fn all_checks_pass() {
        let report = verify_all(&small()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(report.passed);
    }

    #[test]
    fn injected_fault_is_caught() {
        let report = verify_all(&TheorySettings {
            inject_fault: true,
            ..small()
        })
        .unwrap();
        assert!(!report.passed);
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(failed, vec!["non_expansiveness", "dominance"]);
    }

    #[test]
    fn deterministic() {
        assert_eq!(verify_all(&small()).unwrap(), verify_all(&small()).unwrap());
    }
}
