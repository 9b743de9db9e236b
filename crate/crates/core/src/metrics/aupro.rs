use super::components::label_components;
use crate::anomaly_map::ScoreMap;
use crate::error::{Error, Result};
use crate::feature_io::BinaryMask;

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;

/// Trapezoid area under a curve of `(fpr, pro)` points sorted by fpr,
/// cut at `limit` with linear interpolation, divided by `limit`.
pub(crate) fn integrate_to_limit(curve: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for seg in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (seg[0], seg[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_cut = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_cut) / 2.0;
            break;
        }
    }
    area / limit
}

/// Area under the per-region-overlap curve up to `fpr_limit`, normalized.
///
/// Thresholds run over every distinct pixel score, highest first. At each
/// one, PRO is the mean over all 8-connected ground-truth regions of the
/// fraction of the region at or above the threshold, and FPR is the
/// fraction of anomaly-free pixels at or above it. The curve starts at
/// (0, 0).
pub fn aupro(maps: &[ScoreMap], masks: &[BinaryMask], fpr_limit: f64) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(Error::Metric(format!(
            "{} maps for {} masks",
            maps.len(),
            masks.len()
        )));
    }
    if maps.is_empty() {
        return Err(Error::Metric("AUPRO needs at least one mask".into()));
    }
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(Error::Metric(format!("fpr limit {fpr_limit} outside (0, 1]")));
    }

    // (score, size of the containing region or 0 for background)
    let mut pixels: Vec<(f32, usize)> = Vec::new();
    let mut regions = 0usize;
    for (map, mask) in maps.iter().zip(masks) {
        if (map.height, map.width) != (mask.height, mask.width) {
            return Err(Error::Shape(format!(
                "map {}x{} against mask {}x{}",
                map.height, map.width, mask.height, mask.width
            )));
        }
        let (labels, sizes) = label_components(mask);
        regions += sizes.len();
        for (i, (&s, &l)) in map.data.iter().zip(&labels).enumerate() {
            if s.is_nan() {
                return Err(Error::NonFinite(i));
            }
            pixels.push((s, if l == 0 { 0 } else { sizes[l as usize - 1] }));
        }
    }
    if regions == 0 {
        return Err(Error::Metric("AUPRO needs at least one anomalous region".into()));
    }
    let negatives = pixels.iter().filter(|p| p.1 == 0).count();
    if negatives == 0 {
        return Err(Error::Metric("AUPRO needs anomaly-free pixels".into()));
    }

    // Ordering ties by region size makes the running sum independent of
    // the order in which images were supplied.
    pixels.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut curve = vec![(0.0, 0.0)];
    let (mut overlap_sum, mut overlap_comp) = (0.0f64, 0.0f64);
    let mut false_pos = 0usize;
    let mut i = 0;
    while i < pixels.len() {
        let score = pixels[i].0;
        while i < pixels.len() && pixels[i].0 == score {
            match pixels[i].1 {
                0 => false_pos += 1,
                size => {
                    let v = 1.0 / size as f64;
                    let t = overlap_sum + v;
                    overlap_comp += if overlap_sum.abs() >= v {
                        (overlap_sum - t) + v
                    } else {
                        (v - t) + overlap_sum
                    };
                    overlap_sum = t;
                }
            }
            i += 1;
        }
        curve.push((
            false_pos as f64 / negatives as f64,
            (overlap_sum + overlap_comp) / regions as f64,
        ));
        if false_pos as f64 / negatives as f64 >= fpr_limit {
            break;
        }
    }
    Ok(integrate_to_limit(&curve, fpr_limit).clamp(0.0, 1.0))
}
