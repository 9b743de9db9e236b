use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rad_core::anomaly_map::{read_result, render_heatmap, write_result, AnomalyResult, Palette};
use rad_core::feature_io::{
    generate_synthetic_dataset, write_synthetic_dataset, Dataset, FeaturePack, Split, SynthSpec,
};
use rad_core::memory_bank::{
    build_bank, load_bank, save_bank, subsample_bank, MemoryBank, ScalingMode, ScalingProtocol,
};
use rad_core::metrics::{evaluate, EvalReport, GroundTruth, METRIC_COLUMNS};
use rad_core::retrieval::{score_image, RetrievalConfig};
use rad_core::theory::{verify_all, Relation, TheoryReport, TheorySettings};

use crate::config::Resolved;
use crate::{ContractViolation, InvalidInput};

pub fn open_dataset(data: Option<&Path>) -> Result<Dataset> {
    let env_root = std::env::var_os("RAD_DATA_DIR").map(PathBuf::from);
    let path = match (data, &env_root) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(root)) => root.clone(),
        (None, None) => bail!(InvalidInput(
            "no dataset given: pass --data or set RAD_DATA_DIR".into()
        )),
    };
    Ok(Dataset::open(&path, env_root.as_deref())?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// File name for an image id: anything outside [A-Za-z0-9._-] becomes '_'.
fn file_stem(image_id: &str) -> String {
    image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn synth(spec: &SynthSpec, seed: u64, out: &Path) -> Result<()> {
    let data = generate_synthetic_dataset(spec, seed)?;
    create_dir(out)?;
    let manifest = write_synthetic_dataset(&data, out)?;
    println!(
        "wrote {} train and {} test packs to {}",
        data.train.len(),
        data.test.len(),
        out.display()
    );
    debug_assert_eq!(manifest.entries.len(), data.train.len() + data.test.len());
    Ok(())
}

fn select_training(packs: Vec<FeaturePack>, protocol: Option<&ScalingProtocol>) -> Result<Vec<FeaturePack>> {
    let selected = match protocol {
        None => packs,
        Some(p) => subsample_bank(&packs, p)?.into_iter().cloned().collect(),
    };
    if selected.is_empty() {
        bail!(InvalidInput("no training images selected".into()));
    }
    Ok(selected)
}

pub fn build(
    dataset: &Dataset,
    layers: &[u32],
    protocol: Option<&ScalingProtocol>,
    out: &Path,
) -> Result<()> {
    let packs = select_training(dataset.load_packs(Split::Train)?, protocol)?;
    let bank = build_bank(&packs, layers)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let mut sink = create(out)?;
    save_bank(&bank, &mut sink)?;
    sink.flush()?;
    println!("images: {}", bank.num_images());
    for layer in bank.layers() {
        println!(
            "layer {}: {} patches of dimension {}",
            layer.layer_id,
            layer.num_rows(),
            layer.dim
        );
    }
    Ok(())
}

pub fn read_bank(path: &Path) -> Result<MemoryBank> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_bank(BufReader::new(file))?)
}

fn config_for(resolved: &Resolved, pack: &FeaturePack) -> RetrievalConfig {
    let mut cfg = resolved.config.clone();
    if !resolved.resolution_pinned {
        cfg.output_resolution = (
            pack.source_resolution.0 as usize,
            pack.source_resolution.1 as usize,
        );
    }
    cfg
}

pub fn score_all(
    bank: &MemoryBank,
    packs: &[FeaturePack],
    resolved: &Resolved,
) -> Result<Vec<AnomalyResult>> {
    packs
        .par_iter()
        .map(|p| Ok(score_image(bank, p, &config_for(resolved, p))?))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub image_id: String,
    pub category: String,
    pub image_score: f64,
    pub result: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub bank_images: usize,
    pub config: RetrievalConfig,
    pub resolution_from_packs: bool,
    pub images: Vec<SummaryEntry>,
}

pub const SUMMARY_FILE: &str = "summary.json";

pub fn score(
    bank_path: &Path,
    dataset: &Dataset,
    split: Split,
    resolved: &Resolved,
    heatmaps: bool,
    out: &Path,
) -> Result<()> {
    let bank = read_bank(bank_path)?;
    let mut packs = dataset.load_packs(split)?;
    packs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let results = score_all(&bank, &packs, resolved)?;

    create_dir(&out.join("results"))?;
    if heatmaps {
        create_dir(&out.join("heatmaps"))?;
    }
    let images = results
        .par_iter()
        .map(|r| {
            let stem = file_stem(&r.image_id);
            let rel = format!("results/{stem}.radf");
            let mut sink = create(&out.join(&rel))?;
            write_result(r, &mut sink)?;
            sink.flush()?;
            let heatmap = if heatmaps {
                let rel = format!("heatmaps/{stem}.png");
                fs::write(out.join(&rel), render_heatmap(&r.pixel_map, Palette::Jet)?)?;
                Some(rel)
            } else {
                None
            };
            Ok(SummaryEntry {
                image_id: r.image_id.clone(),
                category: r.category.clone(),
                image_score: r.image_score,
                result: rel,
                heatmap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = ScoreSummary {
        bank_images: bank.num_images(),
        config: resolved.config.clone(),
        resolution_from_packs: !resolved.resolution_pinned,
        images,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    eprintln!(
        "scored {} images against {} references",
        results.len(),
        bank.num_images()
    );
    Ok(())
}

pub fn ground_truth(dataset: &Dataset) -> Result<BTreeMap<String, GroundTruth>> {
    dataset
        .entries(Split::Test)
        .map(|e| {
            let mask = dataset.load_mask(e)?;
            Ok((
                e.image_id.clone(),
                GroundTruth {
                    anomalous: e.label.is_anomalous(),
                    mask,
                },
            ))
        })
        .collect()
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_json(&out.join("eval.json"), report)?;
    let mut w = csv::Writer::from_writer(create(&out.join("eval.csv"))?);
    let mut header = vec!["category"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header)?;
    for (name, values) in report.table_rows() {
        let mut row = vec![name];
        row.extend(values.iter().map(|v| fmt_metric(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(results_dir: &Path, dataset: &Dataset, fpr_limit: f64, out: &Path) -> Result<()> {
    let summary_path = results_dir.join(SUMMARY_FILE);
    let text =
        fs::read_to_string(&summary_path).with_context(|| format!("reading {}", summary_path.display()))?;
    let summary: ScoreSummary =
        serde_json::from_str(&text).map_err(|e| InvalidInput(format!("{}: {e}", summary_path.display())))?;
    let results = summary
        .images
        .par_iter()
        .map(|e| {
            let path = results_dir.join(&e.result);
            let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            Ok(read_result(BufReader::new(file))?)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&results, &ground_truth(dataset)?, fpr_limit)?;
    write_report(&report, out)?;
    for (name, values) in report.table_rows() {
        let cells: Vec<String> = values
            .iter()
            .map(|v| v.map_or("-".to_string(), |x| format!("{:.4}", x)))
            .collect();
        println!("{name:>12} {}", cells.join(" "));
    }
    Ok(())
}

pub struct StudyGrid {
    pub mode: ScalingMode,
    pub taus: Vec<f64>,
    pub shots: Vec<usize>,
    pub seeds: Vec<u64>,
    pub base: Vec<String>,
    pub target: Vec<String>,
}

pub fn scale_study(
    dataset: &Dataset,
    layers: &[u32],
    resolved: &Resolved,
    grid: &StudyGrid,
    fpr_limit: f64,
    out: &Path,
) -> Result<()> {
    let points: Vec<(f64, usize)> = if grid.mode == ScalingMode::FewShot {
        grid.shots.iter().map(|&s| (1.0, s)).collect()
    } else {
        grid.taus.iter().map(|&t| (t, 1)).collect()
    };
    if points.is_empty() || grid.seeds.is_empty() {
        bail!(InvalidInput(
            "scale study needs a non-empty grid and seed list".into()
        ));
    }
    let train = dataset.load_packs(Split::Train)?;
    let mut test = dataset.load_packs(Split::Test)?;
    test.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let truth = ground_truth(dataset)?;

    create_dir(out)?;
    let mut w = csv::Writer::from_writer(create(&out.join("scaling.csv"))?);
    w.write_record([
        "mode",
        "tau",
        "shots",
        "seed",
        "bank_images",
        "category",
        "metric",
        "value",
    ])?;
    for &(tau, shots) in &points {
        for &seed in &grid.seeds {
            let protocol = ScalingProtocol {
                mode: grid.mode,
                tau,
                shots,
                base_categories: grid.base.clone(),
                target_categories: grid.target.clone(),
                seed,
            };
            let packs = select_training(train.clone(), Some(&protocol))?;
            let bank = build_bank(&packs, layers)?;
            let results = score_all(&bank, &test, resolved)?;
            let report = evaluate(&results, &truth, fpr_limit)?;
            for (name, values) in report.table_rows() {
                for (metric, v) in METRIC_COLUMNS.iter().zip(values) {
                    w.write_record([
                        grid.mode.name().to_string(),
                        tau.to_string(),
                        shots.to_string(),
                        seed.to_string(),
                        bank.num_images().to_string(),
                        name.clone(),
                        metric.to_string(),
                        fmt_metric(v),
                    ])?;
                }
            }
            eprintln!(
                "{} tau={tau} shots={shots} seed={seed}: {} references, pooled P-AUROC {}",
                grid.mode.name(),
                bank.num_images(),
                fmt_metric(report.pooled.pixel_auroc)
            );
        }
    }
    w.flush()?;
    Ok(())
}

pub fn verify_theory(settings: &TheorySettings, out: Option<&Path>) -> Result<TheoryReport> {
    let report = verify_all(settings)?;
    for c in &report.checks {
        let rel = match c.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        println!(
            "{} {:<32} {:>14.6e} {rel} {:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.limit
        );
    }
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    if !report.passed {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        bail!(ContractViolation(format!("failed checks: {}", failed.join(", "))));
    }
    Ok(report)
}
