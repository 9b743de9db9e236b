use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aupro::aupro;
use super::ranking::{auroc, average_precision, f1_max};
use crate::anomaly_map::{AnomalyResult, ScoreMap};
use crate::error::{Error, Result};
use crate::feature_io::BinaryMask;

/// Column names in reporting order.
pub const METRIC_COLUMNS: [&str; 7] = [
    "I-AUROC", "I-AP", "I-F1max", "P-AUROC", "P-AP", "P-F1max", "AUPRO",
];

/// Label and mask of one test image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub anomalous: bool,
    /// Required for anomalous images; `None` means anomaly-free.
    pub mask: Option<BinaryMask>,
}

/// The seven metrics. A value is `None` when the subset lacks one of the
/// classes it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub image_auroc: Option<f64>,
    pub image_ap: Option<f64>,
    pub image_f1max: Option<f64>,
    pub pixel_auroc: Option<f64>,
    pub pixel_ap: Option<f64>,
    pub pixel_f1max: Option<f64>,
    pub aupro: Option<f64>,
    pub images: usize,
    pub anomalous_images: usize,
}

impl MetricBundle {
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.image_auroc,
            self.image_ap,
            self.image_f1max,
            self.pixel_auroc,
            self.pixel_ap,
            self.pixel_f1max,
            self.aupro,
        ]
    }

    fn from_values(v: [Option<f64>; 7], images: usize, anomalous_images: usize) -> Self {
        Self {
            image_auroc: v[0],
            image_ap: v[1],
            image_f1max: v[2],
            pixel_auroc: v[3],
            pixel_ap: v[4],
            pixel_f1max: v[5],
            aupro: v[6],
            images,
            anomalous_images,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fpr_limit: f64,
    /// Every image and pixel pooled together.
    pub pooled: MetricBundle,
    /// Unweighted mean over categories of each defined per-category value.
    pub category_mean: MetricBundle,
    pub per_category: BTreeMap<String, MetricBundle>,
}

impl EvalReport {
    /// `(row name, values)` for tabular output: categories, then the mean
    /// and pooled rows.
    pub fn table_rows(&self) -> Vec<(String, [Option<f64>; 7])> {
        let mut rows: Vec<(String, [Option<f64>; 7])> = self
            .per_category
            .iter()
            .map(|(c, b)| (c.clone(), b.values()))
            .collect();
        rows.push(("mean".into(), self.category_mean.values()));
        rows.push(("pooled".into(), self.pooled.values()));
        rows
    }
}

struct Item<'a> {
    result: &'a AnomalyResult,
    anomalous: bool,
    mask: Option<&'a BinaryMask>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Metric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn bundle(items: &[&Item], fpr_limit: f64) -> Result<MetricBundle> {
    let image_scores: Vec<f64> = items.iter().map(|i| i.result.image_score).collect();
    let image_labels: Vec<bool> = items.iter().map(|i| i.anomalous).collect();
    let anomalous = image_labels.iter().filter(|&&b| b).count();

    let pixel_count: usize = items.iter().map(|i| i.result.pixel_map.data.len()).sum();
    let mut pixel_scores: Vec<f32> = Vec::with_capacity(pixel_count);
    let mut pixel_labels: Vec<bool> = Vec::with_capacity(pixel_count);
    let mut region_maps: Vec<ScoreMap> = Vec::new();
    let mut region_masks: Vec<BinaryMask> = Vec::new();
    for item in items {
        let map = &item.result.pixel_map;
        pixel_scores.extend_from_slice(&map.data);
        match item.mask {
            Some(m) => pixel_labels.extend_from_slice(&m.data),
            None => pixel_labels.extend(std::iter::repeat_n(false, map.data.len())),
        }
        if item.anomalous {
            region_maps.push(map.clone());
            region_masks.push(
                item.mask
                    .cloned()
                    .unwrap_or_else(|| BinaryMask::empty(map.height, map.width)),
            );
        }
    }

    let image_both = anomalous > 0 && anomalous < items.len();
    let values = [
        if image_both {
            defined(auroc(&image_scores, &image_labels))?
        } else {
            None
        },
        if anomalous > 0 {
            defined(average_precision(&image_scores, &image_labels))?
        } else {
            None
        },
        if anomalous > 0 {
            defined(f1_max(&image_scores, &image_labels).map(|f| f.0))?
        } else {
            None
        },
        defined(auroc(&pixel_scores, &pixel_labels))?,
        defined(average_precision(&pixel_scores, &pixel_labels))?,
        defined(f1_max(&pixel_scores, &pixel_labels).map(|f| f.0))?,
        if region_maps.is_empty() {
            None
        } else {
            defined(aupro(&region_maps, &region_masks, fpr_limit))?
        },
    ];
    Ok(MetricBundle::from_values(values, items.len(), anomalous))
}

/// Image-level metrics over image scores, pixel-level metrics over all
/// pixels pooled, AUPRO over the maps of anomalous images; overall and per
/// category. The report does not depend on the order of `results`.
pub fn evaluate(
    results: &[AnomalyResult],
    truth: &BTreeMap<String, GroundTruth>,
    fpr_limit: f64,
) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::Metric("no results to evaluate".into()));
    }
    let mut items = Vec::with_capacity(results.len());
    for r in results {
        let gt = truth
            .get(&r.image_id)
            .ok_or_else(|| Error::Metric(format!("no ground truth for {}", r.image_id)))?;
        if gt.anomalous && gt.mask.is_none() {
            return Err(Error::MissingMask(r.image_id.clone()));
        }
        if let Some(m) = &gt.mask {
            if (m.height, m.width) != (r.pixel_map.height, r.pixel_map.width) {
                return Err(Error::Shape(format!(
                    "{}: mask {}x{} against map {}x{}",
                    r.image_id, m.height, m.width, r.pixel_map.height, r.pixel_map.width
                )));
            }
        }
        items.push(Item {
            result: r,
            anomalous: gt.anomalous,
            mask: gt.mask.as_ref(),
        });
    }
    items.sort_by(|a, b| a.result.image_id.cmp(&b.result.image_id));
    if let Some(w) = items
        .windows(2)
        .find(|w| w[0].result.image_id == w[1].result.image_id)
    {
        return Err(Error::Metric(format!(
            "duplicate result for {}",
            w[0].result.image_id
        )));
    }

    let mut groups: BTreeMap<&str, Vec<&Item>> = BTreeMap::new();
    for item in &items {
        groups
            .entry(item.result.category.as_str())
            .or_default()
            .push(item);
    }
    let per_category: BTreeMap<String, MetricBundle> = groups
        .par_iter()
        .map(|(c, members)| Ok((c.to_string(), bundle(members, fpr_limit)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    let all: Vec<&Item> = items.iter().collect();
    let pooled = bundle(&all, fpr_limit)?;

    let mut mean = [None; 7];
    for (k, slot) in mean.iter_mut().enumerate() {
        let vals: Vec<f64> = per_category.values().filter_map(|b| b.values()[k]).collect();
        if !vals.is_empty() {
            *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    let category_mean = MetricBundle::from_values(mean, pooled.images, pooled.anomalous_images);

    Ok(EvalReport {
        fpr_limit,
        pooled,
        category_mean,
        per_category,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(id: &str, cat: &str, map: &[f32], score: f64) -> AnomalyResult {
        let grid = ScoreMap::new(2, 2, map.to_vec()).unwrap();
        AnomalyResult {
            image_id: id.into(),
            category: cat.into(),
            layer_ids: vec![4],
            layer_grids: vec![grid.clone()],
            fused_grid: grid.clone(),
            pixel_map: grid,
            image_score: score,
            topk_images: vec![0],
            nn_ids: vec![vec![0; 4]],
        }
    }

    fn fixture() -> (Vec<AnomalyResult>, BTreeMap<String, GroundTruth>) {
        let results = vec![
            result("a0", "a", &[0.0, 0.1, 0.0, 0.0], 0.1),
            result("a1", "a", &[0.0, 0.9, 0.0, 0.1], 0.9),
            result("b0", "b", &[0.1, 0.0, 0.0, 0.2], 0.2),
            result("b1", "b", &[0.8, 0.0, 0.7, 0.0], 0.8),
        ];
        let mut truth = BTreeMap::new();
        truth.insert(
            "a0".into(),
            GroundTruth {
                anomalous: false,
                mask: None,
            },
        );
        truth.insert(
            "a1".into(),
            GroundTruth {
                anomalous: true,
                mask: Some(BinaryMask::from_fn(2, 2, |y, x| (y, x) == (0, 1))),
            },
        );
        truth.insert(
            "b0".into(),
            GroundTruth {
                anomalous: false,
                mask: None,
            },
        );
        truth.insert(
            "b1".into(),
            GroundTruth {
                anomalous: true,
                mask: Some(BinaryMask::from_fn(2, 2, |_, x| x == 0)),
            },
        );
        (results, truth)
    }

    #[test]
    fn separable_fixture_is_perfect() {
        let (results, truth) = fixture();
        let report = evaluate(&results, &truth, 0.3).unwrap();
        for v in report.pooled.values() {
            assert_eq!(v, Some(1.0));
        }
        assert_eq!(report.per_category.len(), 2);
        assert_eq!(report.table_rows().len(), 4);
    }

    #[test]
    fn order_does_not_matter() {
        let (mut results, truth) = fixture();
        let a = evaluate(&results, &truth, 0.3).unwrap();
        results.reverse();
        results.swap(0, 2);
        assert_eq!(a, evaluate(&results, &truth, 0.3).unwrap());
    }

    #[test]
    fn single_category_equals_its_entry() {
        let (results, truth) = fixture();
        let only_a: Vec<AnomalyResult> = results.into_iter().filter(|r| r.category == "a").collect();
        let report = evaluate(&only_a, &truth, 0.3).unwrap();
        assert_eq!(report.pooled, report.per_category["a"]);
    }

    #[test]
    fn missing_mask_names_the_image() {
        let (results, mut truth) = fixture();
        truth.get_mut("b1").unwrap().mask = None;
        let err = evaluate(&results, &truth, 0.3).unwrap_err();
        assert!(matches!(&err, Error::MissingMask(id) if id == "b1"), "{err}");
    }
}
