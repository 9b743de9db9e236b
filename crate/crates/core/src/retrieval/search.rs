//! Retrieval primitives: image-level top-K, spatial candidate sets and
//! nearest-neighbor scores.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::memory_bank::MemoryBank;

/// Inner product of two `f32` vectors accumulated in `f64`, in index order.
///
/// Each product of two `f32` values is exact in `f64`, so any code path that
/// sums the same pairs in the same order gets bit-identical similarities.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
}

/// The `min(k, N)` bank images most similar to `global`, by descending
/// similarity with ties going to the lower index.
pub fn global_topk(bank: &MemoryBank, global: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    let n = bank.num_images();
    if n == 0 {
        return Err(Error::EmptyBank);
    }
    if global.len() != bank.global_dim() {
        return Err(Error::Shape(format!(
            "global descriptor has dimension {}, bank expects {}",
            global.len(),
            bank.global_dim()
        )));
    }
    let mut all: Vec<Neighbor> = (0..n)
        .map(|i| Neighbor {
            index: i,
            similarity: dot(global, bank.global(i)),
        })
        .collect();
    let by_rank = |a: &Neighbor, b: &Neighbor| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap_or(Ordering::Equal)
            .then(a.index.cmp(&b.index))
    };
    let k = k.min(n);
    if k < n {
        all.select_nth_unstable_by(k - 1, by_rank);
        all.truncate(k);
    }
    all.sort_unstable_by(by_rank);
    Ok(all)
}

/// Bank rows admissible for one query cell of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub layer_id: u32,
    pub position: (usize, usize),
    /// Ascending row ids into the layer store.
    pub rows: Vec<usize>,
}

/// Clipped ℓ∞ window of radius `rho` around `center` in a grid of `extent`.
#[inline]
pub(crate) fn window(center: usize, rho: usize, extent: usize) -> std::ops::RangeInclusive<usize> {
    center.saturating_sub(rho)..=(center + rho).min(extent - 1)
}

pub(crate) fn membership(n: usize, topk: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &i in topk {
        if i < n {
            mask[i] = true;
        }
    }
    mask
}

/// Rows of `layer_id` within the ℓ∞ ball of radius `rho` around `position`
/// whose source image is in `topk`. The window is clipped at grid borders.
pub fn candidate_set(
    bank: &MemoryBank,
    layer_id: u32,
    position: (usize, usize),
    rho: usize,
    topk: &[usize],
) -> Result<CandidateSet> {
    let (height, width) = bank.grid();
    let (h, w) = position;
    if h >= height || w >= width {
        return Err(Error::OutOfGrid { h, w, height, width });
    }
    let store = bank
        .layer(layer_id)
        .ok_or_else(|| Error::Config(format!("bank has no layer {layer_id}")))?;
    let member = membership(bank.num_images(), topk);
    let mut rows = Vec::new();
    for hh in window(h, rho, height) {
        for ww in window(w, rho, width) {
            rows.extend(
                bank.position_range(hh, ww)
                    .filter(|&r| member[store.image_index[r] as usize]),
            );
        }
    }
    Ok(CandidateSet {
        layer_id,
        position,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMatch {
    /// 1 − max cosine similarity, clamped to [0, 2].
    pub score: f64,
    /// Bank row achieving the maximum; ties go to the lowest row id.
    pub row: usize,
}

pub(crate) fn cosine_score(similarity: f64) -> f64 {
    (1.0 - similarity).clamp(0.0, 2.0)
}

/// 1-NN cosine dissimilarity of `query` against `candidates`.
pub fn patch_score(bank: &MemoryBank, query: &[f32], candidates: &CandidateSet) -> Result<PatchMatch> {
    let store = bank
        .layer(candidates.layer_id)
        .ok_or_else(|| Error::Config(format!("bank has no layer {}", candidates.layer_id)))?;
    if query.len() != store.dim {
        return Err(Error::Shape(format!(
            "query has dimension {}, layer {} stores {}",
            query.len(),
            store.layer_id,
            store.dim
        )));
    }
    let mut best: Option<(f64, usize)> = None;
    for &row in &candidates.rows {
        let s = dot(query, store.row(row));
        let better = match best {
            None => true,
            Some((bs, br)) => s > bs || (s == bs && row < br),
        };
        if better {
            best = Some((s, row));
        }
    }
    let (sim, row) = best.ok_or(Error::EmptyCandidates {
        layer: candidates.layer_id,
        h: candidates.position.0,
        w: candidates.position.1,
    })?;
    Ok(PatchMatch {
        score: cosine_score(sim),
        row,
    })
}

/// Minimum Euclidean distance from `query` to the rows of `set`, with the
/// index of the first closest row.
pub fn distance_to_set(query: &[f64], set: &[Vec<f64>]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, u) in set.iter().enumerate() {
        if u.len() != query.len() {
            return Err(Error::Shape(format!(
                "set row {i} has dimension {}, query {}",
                u.len(),
                query.len()
            )));
        }
        let d2: f64 = query.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.is_none_or(|(bd, _)| d2 < bd) {
            best = Some((d2, i));
        }
    }
    best.map(|(d2, i)| (d2.sqrt(), i)).ok_or(Error::EmptySet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::{generate_synthetic_dataset, SynthSpec};
    use crate::memory_bank::build_bank;

    fn bank(n: usize, h: usize, w: usize) -> (MemoryBank, Vec<crate::feature_io::FeaturePack>) {
        let spec = SynthSpec {
            categories: 2,
            train_per_category: n / 2,
            test_per_category: 2,
            height: h,
            width: w,
            layers: vec![(4, 8)],
            global_dim: 8,
            jitter: 0.5,
            anomaly_patches: 1,
            ..SynthSpec::default()
        };
        let data = generate_synthetic_dataset(&spec, 11).unwrap();
        (build_bank(&data.train, &[4]).unwrap(), data.test)
    }

    #[test]
    fn topk_with_k_at_least_n_returns_everything() {
        let (b, test) = bank(6, 2, 2);
        let got = global_topk(&b, &test[0].global_descriptor, 100).unwrap();
        let mut idx: Vec<usize> = got.iter().map(|n| n.index).collect();
        idx.sort_unstable();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
        assert!(got.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn stored_descriptor_retrieves_itself_first() {
        let (b, _) = bank(6, 2, 2);
        let g = b.global(4).to_vec();
        let got = global_topk(&b, &g, 3).unwrap();
        assert_eq!(got[0].index, 4);
        assert!((got[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn topk_matches_exhaustive_sort() {
        let (b, test) = bank(8, 2, 2);
        for pack in &test {
            let g = &pack.global_descriptor;
            let mut oracle: Vec<(f64, usize)> = (0..8)
                .map(|i| {
                    let s: f64 = g
                        .iter()
                        .zip(b.global(i))
                        .map(|(a, c)| *a as f64 * *c as f64)
                        .sum();
                    (s, i)
                })
                .collect();
            oracle.sort_by(|a, c| c.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&c.1)));
            let got: Vec<usize> = global_topk(&b, g, 3).unwrap().iter().map(|n| n.index).collect();
            let want: Vec<usize> = oracle[..3].iter().map(|x| x.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn ties_resolve_to_lower_index() {
        let (mut b, _) = bank(4, 1, 1);
        let g = b.global(0).to_vec();
        for i in 1..4 {
            let dim = b.global_dim;
            b.globals[i * dim..(i + 1) * dim].copy_from_slice(&g);
        }
        let got: Vec<usize> = global_topk(&b, &g, 2).unwrap().iter().map(|n| n.index).collect();
        assert_eq!(got, vec![0, 1]);
    }

    #[test]
    fn rho_zero_keeps_only_the_center() {
        let (b, _) = bank(6, 4, 4);
        let topk = [0, 2, 5];
        let c = candidate_set(&b, 4, (2, 1), 0, &topk).unwrap();
        assert_eq!(c.rows.len(), 3);
        let store = b.layer(4).unwrap();
        assert!(c.rows.iter().all(|&r| store.coords[r] == (2, 1)));
    }

    #[test]
    fn corner_window_is_clipped() {
        let (b, _) = bank(4, 28, 28);
        let topk = [1, 3];
        let c = candidate_set(&b, 4, (0, 0), 1, &topk).unwrap();
        // brute-force enumeration of the admissible cells
        let cells = (0..28usize)
            .flat_map(|h| (0..28usize).map(move |w| (h, w)))
            .filter(|&(h, w)| h.max(w) <= 1)
            .count();
        assert_eq!(cells, 4);
        assert_eq!(c.rows.len(), cells * topk.len());
    }

    #[test]
    fn large_rho_covers_the_grid() {
        let (b, _) = bank(4, 3, 5);
        let c = candidate_set(&b, 4, (1, 2), 5, &[0, 1, 2, 3]).unwrap();
        assert_eq!(c.rows, (0..4 * 15).collect::<Vec<_>>());
    }

    #[test]
    fn out_of_grid_and_empty_candidates() {
        let (b, _) = bank(4, 3, 3);
        assert!(matches!(
            candidate_set(&b, 4, (3, 0), 1, &[0]),
            Err(Error::OutOfGrid { .. })
        ));
        let empty = candidate_set(&b, 4, (0, 0), 1, &[]).unwrap();
        let q = b.layer(4).unwrap().row(0).to_vec();
        assert!(matches!(
            patch_score(&b, &q, &empty),
            Err(Error::EmptyCandidates { layer: 4, h: 0, w: 0 })
        ));
    }

    fn unit_bank(vectors: &[[f32; 2]]) -> MemoryBank {
        use crate::feature_io::{FeaturePack, Label, LayerGrid, Split};
        let packs: Vec<FeaturePack> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| FeaturePack {
                image_id: format!("i{i}"),
                category: "c".into(),
                split: Split::Train,
                label: Label::Normal,
                mask_ref: None,
                global_descriptor: vec![1.0, 0.0],
                layers: vec![LayerGrid::new(4, 1, 1, 2, v.to_vec())],
                source_resolution: (16, 16),
            })
            .collect();
        build_bank(&packs, &[4]).unwrap()
    }

    #[test]
    fn cosine_scores_at_the_extremes() {
        for (stored, query, expected) in [
            ([1.0, 0.0], [1.0, 0.0], 0.0),
            ([1.0, 0.0], [0.0, 1.0], 1.0),
            ([1.0, 0.0], [-1.0, 0.0], 2.0),
        ] {
            let b = unit_bank(&[stored]);
            let c = candidate_set(&b, 4, (0, 0), 0, &[0]).unwrap();
            let m = patch_score(&b, &query, &c).unwrap();
            assert_eq!(m.score, expected);
            assert_eq!(m.row, 0);
        }
    }

    #[test]
    fn patch_ties_go_to_lowest_row() {
        let b = unit_bank(&[[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]);
        let c = candidate_set(&b, 4, (0, 0), 0, &[0, 1, 2]).unwrap();
        assert_eq!(patch_score(&b, &[1.0, 0.0], &c).unwrap().row, 1);
    }

    #[test]
    fn distance_to_set_basics() {
        let set = vec![vec![1.0, 0.0]];
        assert_eq!(distance_to_set(&[1.0, 0.0], &set).unwrap(), (0.0, 0));
        let (d, _) = distance_to_set(&[0.0, 1.0], &set).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(distance_to_set(&[0.0], &[]), Err(Error::EmptySet)));
    }
}
