//! Whole-image scoring: one global retrieval, then per-layer patch scores
//! fused into a single grid.

use rayon::prelude::*;

use super::config::RetrievalConfig;
use super::search::{cosine_score, dot, global_topk, membership, window};
use crate::anomaly_map::{gaussian_smooth, image_score, upsample_map, AnomalyResult, ScoreMap};
use crate::error::{Error, Result};
use crate::feature_io::{ensure_valid, FeaturePack, LayerGrid};
use crate::memory_bank::{LayerStore, MemoryBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringPath {
    /// Position-ranged scan over the selected images, four rows per pass.
    Blocked,
    /// Every bank row tested against the spatial and membership predicates.
    Naive,
}

/// Scores `pack` against `bank`.
pub fn score_image(bank: &MemoryBank, pack: &FeaturePack, config: &RetrievalConfig) -> Result<AnomalyResult> {
    score_with(bank, pack, config, ScoringPath::Blocked)
}

/// Reference implementation of [`score_image`] with no position grouping.
pub fn score_image_bruteforce(
    bank: &MemoryBank,
    pack: &FeaturePack,
    config: &RetrievalConfig,
) -> Result<AnomalyResult> {
    score_with(bank, pack, config, ScoringPath::Naive)
}

pub fn score_with(
    bank: &MemoryBank,
    pack: &FeaturePack,
    config: &RetrievalConfig,
    path: ScoringPath,
) -> Result<AnomalyResult> {
    config.validate()?;
    ensure_valid(pack)?;
    let neighbors = global_topk(bank, &pack.global_descriptor, config.top_k)?;
    let topk: Vec<usize> = neighbors.iter().map(|n| n.index).collect();
    score_with_neighbors(bank, pack, config, &topk, path)
}

/// Scores `pack` with a caller-supplied reference set instead of the
/// global retrieval. Indices outside the bank are ignored.
pub fn score_with_neighbors(
    bank: &MemoryBank,
    pack: &FeaturePack,
    config: &RetrievalConfig,
    topk: &[usize],
    path: ScoringPath,
) -> Result<AnomalyResult> {
    config.validate()?;
    let (height, width) = bank.grid();
    let mut stores = Vec::with_capacity(config.layers.len());
    let mut queries = Vec::with_capacity(config.layers.len());
    for &id in &config.layers {
        let store = bank
            .layer(id)
            .ok_or_else(|| Error::Config(format!("bank has no layer {id}")))?;
        let query = pack
            .layer(id)
            .ok_or_else(|| Error::Config(format!("pack {} has no layer {id}", pack.image_id)))?;
        if (query.height, query.width) != (height, width) {
            return Err(Error::Shape(format!(
                "pack {} grid {}x{} differs from bank grid {height}x{width}",
                pack.image_id, query.height, query.width
            )));
        }
        if query.dim != store.dim {
            return Err(Error::Shape(format!(
                "pack {} layer {id} has dimension {}, bank stores {}",
                pack.image_id, query.dim, store.dim
            )));
        }
        stores.push(store);
        queries.push(query);
    }

    let mut selected: Vec<usize> = topk.iter().copied().filter(|&i| i < bank.num_images()).collect();
    selected.sort_unstable();
    selected.dedup();
    if selected.is_empty() {
        return Err(Error::EmptyCandidates {
            layer: config.layers[0],
            h: 0,
            w: 0,
        });
    }

    let mut layer_grids = Vec::with_capacity(stores.len());
    let mut nn_ids = Vec::with_capacity(stores.len());
    let mut fused = vec![0.0f64; height * width];
    for ((store, query), &weight) in stores.iter().zip(&queries).zip(&config.weights) {
        let cells = match path {
            ScoringPath::Blocked => layer_blocked(bank, store, query, &selected, config.rho)?,
            ScoringPath::Naive => layer_naive(bank, store, query, &selected, config.rho)?,
        };
        let mut grid = Vec::with_capacity(cells.len());
        let mut rows = Vec::with_capacity(cells.len());
        for (acc, (score, row)) in fused.iter_mut().zip(cells) {
            *acc += weight * score;
            grid.push(score as f32);
            rows.push(row);
        }
        layer_grids.push(ScoreMap::new(height, width, grid)?);
        nn_ids.push(rows);
    }
    let fused_grid = ScoreMap::new(height, width, fused.into_iter().map(|v| v as f32).collect())?;

    let mut pixel_map = upsample_map(&fused_grid, config.output_resolution)?;
    if let Some(sigma) = config.smoothing_sigma {
        pixel_map = gaussian_smooth(&pixel_map, sigma);
    }
    let image_score = image_score(&pixel_map, config.pooling_fraction)?;
    Ok(AnomalyResult {
        image_id: pack.image_id.clone(),
        category: pack.category.clone(),
        layer_ids: config.layers.clone(),
        layer_grids,
        fused_grid,
        pixel_map,
        image_score,
        topk_images: topk.to_vec(),
        nn_ids,
    })
}

#[inline]
fn better(sim: f64, row: usize, best: &mut (f64, usize)) {
    if sim > best.0 || (sim == best.0 && row < best.1) {
        *best = (sim, row);
    }
}

/// Four dot products sharing one pass over the query; each accumulator
/// follows the same order as [`dot`].
#[inline]
fn dot4(q: &[f32], r: [&[f32]; 4]) -> [f64; 4] {
    let n = q.len();
    let (r0, r1, r2, r3) = (&r[0][..n], &r[1][..n], &r[2][..n], &r[3][..n]);
    let mut acc = [0.0f64; 4];
    for c in 0..n {
        let x = q[c] as f64;
        acc[0] += x * r0[c] as f64;
        acc[1] += x * r1[c] as f64;
        acc[2] += x * r2[c] as f64;
        acc[3] += x * r3[c] as f64;
    }
    acc
}

fn finish(best: (f64, usize), layer: u32, h: usize, w: usize) -> Result<(f64, u32)> {
    if best.1 == usize::MAX {
        return Err(Error::EmptyCandidates { layer, h, w });
    }
    Ok((cosine_score(best.0), best.1 as u32))
}

fn layer_blocked(
    bank: &MemoryBank,
    store: &LayerStore,
    query: &LayerGrid,
    selected: &[usize],
    rho: usize,
) -> Result<Vec<(f64, u32)>> {
    let (height, width) = bank.grid();
    (0..height * width)
        .into_par_iter()
        .map(|cell| {
            let (h, w) = (cell / width, cell % width);
            let q = query.patch(h, w);
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for hh in window(h, rho, height) {
                for ww in window(w, rho, width) {
                    let base = bank.position_range(hh, ww).start;
                    let mut blocks = selected.chunks_exact(4);
                    for b in &mut blocks {
                        let rows = [base + b[0], base + b[1], base + b[2], base + b[3]];
                        let sims = dot4(q, rows.map(|r| store.row(r)));
                        for (sim, row) in sims.into_iter().zip(rows) {
                            better(sim, row, &mut best);
                        }
                    }
                    for &i in blocks.remainder() {
                        let row = base + i;
                        better(dot(q, store.row(row)), row, &mut best);
                    }
                }
            }
            finish(best, store.layer_id, h, w)
        })
        .collect()
}

fn layer_naive(
    bank: &MemoryBank,
    store: &LayerStore,
    query: &LayerGrid,
    selected: &[usize],
    rho: usize,
) -> Result<Vec<(f64, u32)>> {
    let (height, width) = bank.grid();
    let member = membership(bank.num_images(), selected);
    let mut out = Vec::with_capacity(height * width);
    for h in 0..height {
        for w in 0..width {
            let q = query.patch(h, w);
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for n in 0..store.num_rows() {
                let (hn, wn) = store.coords[n];
                let dist = (hn as usize).abs_diff(h).max((wn as usize).abs_diff(w));
                if dist > rho || !member[store.image_index[n] as usize] {
                    continue;
                }
                let r = store.row(n);
                let mut sim = 0.0f64;
                for c in 0..q.len() {
                    sim += q[c] as f64 * r[c] as f64;
                }
                better(sim, n, &mut best);
            }
            out.push(finish(best, store.layer_id, h, w)?);
        }
    }
    Ok(out)
}
