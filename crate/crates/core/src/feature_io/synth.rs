//! Seeded synthetic feature datasets with planted anomalies.
//!
//! Every (category, layer, grid position) owns a random unit prototype.
//! Normal patches are the prototype plus a bounded random offset,
//! re-normalized. Anomalous patches are random unit vectors kept only when
//! they lie at least `margin` (chord distance) from every prototype, of any
//! category, inside the `rho`-neighborhood of their cell.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mask::BinaryMask;
use super::pack::{FeaturePack, Label, LayerGrid, Split};
use crate::error::{Error, Result};

const MAX_REJECTIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub categories: usize,
    pub train_per_category: usize,
    pub test_per_category: usize,
    pub height: usize,
    pub width: usize,
    /// (layer id, embedding dimension), layer ids strictly increasing.
    pub layers: Vec<(u32, usize)>,
    pub global_dim: usize,
    /// Fraction of each category's test images that receive a planted defect.
    pub anomaly_fraction: f64,
    /// Number of grid cells covered by each planted defect.
    pub anomaly_patches: usize,
    pub margin: f64,
    pub jitter: f64,
    pub rho: usize,
    pub pixels_per_patch: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            categories: 3,
            train_per_category: 20,
            test_per_category: 10,
            height: 12,
            width: 12,
            layers: vec![(4, 32), (7, 32), (10, 32), (12, 32)],
            global_dim: 32,
            anomaly_fraction: 0.5,
            anomaly_patches: 4,
            margin: 0.8,
            jitter: 0.1,
            rho: 1,
            pixels_per_patch: 8,
        }
    }
}

impl SynthSpec {
    pub fn category_name(c: usize) -> String {
        format!("cat{c:02}")
    }

    pub fn output_resolution(&self) -> (usize, usize) {
        (
            self.height * self.pixels_per_patch,
            self.width * self.pixels_per_patch,
        )
    }

    fn anomalous_per_category(&self) -> usize {
        (self.anomaly_fraction * self.test_per_category as f64).round() as usize
    }

    fn check(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 2.0) {
            return Err(Error::InfeasibleMargin(self.margin));
        }
        let bad = |msg: &str| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.categories == 0 || self.height == 0 || self.width == 0 {
            return bad("categories and grid extents must be positive");
        }
        if self.layers.is_empty() {
            return bad("layers must be non-empty");
        }
        if self.layers.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad("layer ids must be strictly increasing");
        }
        if self.layers.iter().any(|&(_, d)| d < 2) || self.global_dim < 2 {
            return bad("dimensions must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.anomaly_fraction) {
            return bad("anomaly_fraction must lie in [0, 1]");
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad("jitter must be finite and non-negative");
        }
        if self.pixels_per_patch == 0 {
            return bad("pixels_per_patch must be positive");
        }
        if self.anomalous_per_category() > 0
            && (self.anomaly_patches == 0 || self.anomaly_patches > self.height * self.width)
        {
            return bad("anomaly_patches must lie in [1, height*width]");
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic_dataset`]; `masks[i]` belongs to `test[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<FeaturePack>,
    pub test: Vec<FeaturePack>,
    pub masks: Vec<BinaryMask>,
    /// Planted grid cells `(h, w)` per test image.
    pub planted: Vec<Vec<(usize, usize)>>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn jittered(rng: &mut ChaCha8Rng, proto: &[f64], jitter: f64) -> Vec<f64> {
    let dir = random_unit(rng, proto.len());
    let scale = jitter * rng.random::<f64>();
    let v: Vec<f64> = proto.iter().zip(&dir).map(|(p, d)| p + scale * d).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn chord(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Random 4-connected blob of `size` cells.
fn random_blob(rng: &mut ChaCha8Rng, height: usize, width: usize, size: usize) -> Vec<(usize, usize)> {
    let mut cells = vec![(rng.random_range(0..height), rng.random_range(0..width))];
    while cells.len() < size {
        let mut frontier: Vec<(usize, usize)> = Vec::new();
        for &(h, w) in &cells {
            let around = [
                (h.wrapping_sub(1), w),
                (h + 1, w),
                (h, w.wrapping_sub(1)),
                (h, w + 1),
            ];
            for c in around {
                if c.0 < height && c.1 < width && !cells.contains(&c) && !frontier.contains(&c) {
                    frontier.push(c);
                }
            }
        }
        // `size <= height*width`, so the frontier is non-empty until the grid fills.
        cells.push(*frontier.choose(rng).expect("frontier"));
    }
    cells.sort_unstable();
    cells
}

/// Generates a deterministic train/test dataset from `spec` and `seed`.
pub fn generate_synthetic_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = spec.height * spec.width;

    // prototypes[c][l][cell]
    let prototypes: Vec<Vec<Vec<Vec<f64>>>> = (0..spec.categories)
        .map(|_| {
            spec.layers
                .iter()
                .map(|&(_, dim)| (0..cells).map(|_| random_unit(&mut rng, dim)).collect())
                .collect()
        })
        .collect();
    let global_protos: Vec<Vec<f64>> = (0..spec.categories)
        .map(|_| random_unit(&mut rng, spec.global_dim))
        .collect();

    let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    let resolution = spec.output_resolution();
    let source_resolution = (resolution.0 as u32, resolution.1 as u32);

    let make_pack = |rng: &mut ChaCha8Rng,
                     c: usize,
                     split: Split,
                     idx: usize,
                     planted: &[(usize, usize)]|
     -> Result<FeaturePack> {
        let global = jittered(rng, &global_protos[c], spec.jitter);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (l, &(layer_id, dim)) in spec.layers.iter().enumerate() {
            let mut data = Vec::with_capacity(cells * dim);
            for cell in 0..cells {
                let (h, w) = (cell / spec.width, cell % spec.width);
                let v = if planted.contains(&(h, w)) {
                    anomalous_vector(rng, spec, &prototypes, l, h, w)?
                } else {
                    jittered(rng, &prototypes[c][l][cell], spec.jitter)
                };
                data.extend(to_f32(&v));
            }
            layers.push(LayerGrid::new(layer_id, spec.height, spec.width, dim, data));
        }
        let label = if planted.is_empty() {
            Label::Normal
        } else {
            Label::Anomalous
        };
        let split_name = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let category = SynthSpec::category_name(c);
        let image_id = format!("{category}_{split_name}_{idx:04}");
        Ok(FeaturePack {
            mask_ref: (label == Label::Anomalous).then(|| format!("masks/{image_id}.png")),
            image_id,
            category,
            split,
            label,
            global_descriptor: to_f32(&global),
            layers,
            source_resolution,
        })
    };

    let mut train = Vec::with_capacity(spec.categories * spec.train_per_category);
    for c in 0..spec.categories {
        for i in 0..spec.train_per_category {
            train.push(make_pack(&mut rng, c, Split::Train, i, &[])?);
        }
    }

    let n_anomalous = spec.anomalous_per_category();
    let ppp = spec.pixels_per_patch;
    let mut test = Vec::new();
    let mut masks = Vec::new();
    let mut planted_all = Vec::new();
    for c in 0..spec.categories {
        for i in 0..spec.test_per_category {
            let planted = if i < n_anomalous {
                random_blob(&mut rng, spec.height, spec.width, spec.anomaly_patches)
            } else {
                Vec::new()
            };
            test.push(make_pack(&mut rng, c, Split::Test, i, &planted)?);
            masks.push(BinaryMask::from_fn(resolution.0, resolution.1, |y, x| {
                planted.contains(&(y / ppp, x / ppp))
            }));
            planted_all.push(planted);
        }
    }

    Ok(SynthDataset {
        train,
        test,
        masks,
        planted: planted_all,
    })
}

fn anomalous_vector(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    prototypes: &[Vec<Vec<Vec<f64>>>],
    layer: usize,
    h: usize,
    w: usize,
) -> Result<Vec<f64>> {
    let dim = spec.layers[layer].1;
    let h_range = h.saturating_sub(spec.rho)..=(h + spec.rho).min(spec.height - 1);
    let w_range = w.saturating_sub(spec.rho)..=(w + spec.rho).min(spec.width - 1);
    for _ in 0..MAX_REJECTIONS {
        let v = random_unit(rng, dim);
        let clear = prototypes.iter().all(|cat| {
            h_range.clone().all(|hh| {
                w_range
                    .clone()
                    .all(|ww| chord(&v, &cat[layer][hh * spec.width + ww]) >= spec.margin)
            })
        });
        if clear {
            return Ok(v);
        }
    }
    Err(Error::Synth(format!(
        "could not place an anomaly {} away from its neighborhood prototypes in dimension {dim}",
        spec.margin
    )))
}
