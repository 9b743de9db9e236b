use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use rad_core::anomaly_map::{render_heatmap, Palette};
use rad_core::feature_io::{
    generate_synthetic_dataset, write_feature_pack, write_synthetic_dataset, Dataset, Split, SynthDataset,
    SynthSpec,
};
use rad_core::memory_bank::{add_images, build_bank, save_bank, subsample_bank, ScalingProtocol};
use rad_core::metrics::{evaluate, GroundTruth};
use rad_core::retrieval::{
    score_image, score_image_bruteforce, score_with_neighbors, RetrievalConfig, ScoringPath,
};
use rad_core::theory::check_bank_saturation;

const LAYERS: [u32; 4] = [4, 7, 10, 12];

fn config(spec: &SynthSpec) -> RetrievalConfig {
    RetrievalConfig {
        rho: spec.rho,
        output_resolution: spec.output_resolution(),
        ..RetrievalConfig::default()
    }
}

fn dataset(spec: &SynthSpec, seed: u64) -> SynthDataset {
    generate_synthetic_dataset(spec, seed).unwrap()
}

fn digest(bytes: &[u8]) -> Vec<u8> {
    Sha256::digest(bytes).to_vec()
}

#[test]
fn planted_cells_outscore_every_normal_cell() {
    let spec = SynthSpec::default();
    let data = dataset(&spec, 21);
    let bank = build_bank(&data.train, &LAYERS).unwrap();
    let cfg = config(&spec);
    let mut lowest_planted = f32::INFINITY;
    let mut highest_normal = f32::NEG_INFINITY;
    for (pack, planted) in data.test.iter().zip(&data.planted) {
        let r = score_image(&bank, pack, &cfg).unwrap();
        for h in 0..spec.height {
            for w in 0..spec.width {
                let v = r.fused_grid.get(h, w);
                if planted.contains(&(h, w)) {
                    lowest_planted = lowest_planted.min(v);
                } else {
                    highest_normal = highest_normal.max(v);
                }
            }
        }
        if !planted.is_empty() {
            let (y, x) = r.pixel_map.argmax().unwrap();
            let ppp = spec.pixels_per_patch;
            assert!(
                planted.contains(&(y / ppp, x / ppp)),
                "{}: hottest pixel outside the defect",
                pack.image_id
            );
            render_heatmap(&r.pixel_map, Palette::Jet).unwrap();
        }
    }
    assert!(
        lowest_planted > highest_normal,
        "{lowest_planted} <= {highest_normal}"
    );
}

#[test]
fn synthetic_detection_is_near_perfect() {
    let spec = SynthSpec::default();
    let data = dataset(&spec, 7);
    let bank = build_bank(&data.train, &LAYERS).unwrap();
    let cfg = config(&spec);
    let results: Vec<_> = data
        .test
        .iter()
        .map(|p| score_image(&bank, p, &cfg).unwrap())
        .collect();
    let truth: BTreeMap<String, GroundTruth> = data
        .test
        .iter()
        .zip(&data.masks)
        .map(|(p, m)| {
            let anomalous = p.label.is_anomalous();
            (
                p.image_id.clone(),
                GroundTruth {
                    anomalous,
                    mask: anomalous.then(|| m.clone()),
                },
            )
        })
        .collect();
    let report = evaluate(&results, &truth, 0.3).unwrap();
    assert_eq!(report.pooled.image_auroc, Some(1.0));
    assert_eq!(report.pooled.image_ap, Some(1.0));
    assert!(report.pooled.pixel_auroc.unwrap() >= 0.999);
    assert!(report.pooled.aupro.unwrap() >= 0.99);
    assert_eq!(report.per_category.len(), spec.categories);
}

#[test]
fn patch_scores_shrink_as_k_and_rho_grow() {
    let spec = SynthSpec {
        categories: 5,
        train_per_category: 10,
        test_per_category: 2,
        height: 6,
        width: 6,
        layers: vec![(4, 12), (7, 12), (10, 12), (12, 12)],
        global_dim: 8,
        jitter: 0.6,
        ..SynthSpec::default()
    };
    let data = dataset(&spec, 3);
    let bank = build_bank(&data.train, &LAYERS).unwrap();
    assert_eq!(bank.num_images(), 50);
    for pack in &data.test {
        let mut previous_k: Option<Vec<Vec<f32>>> = None;
        for k in [1, 2, 5, 10, 25, 50] {
            let cfg = RetrievalConfig {
                top_k: k,
                output_resolution: (6, 6),
                ..RetrievalConfig::default()
            };
            let grids: Vec<Vec<f32>> = score_image(&bank, pack, &cfg)
                .unwrap()
                .layer_grids
                .into_iter()
                .map(|g| g.data)
                .collect();
            if let Some(prev) = &previous_k {
                for (a, b) in grids.iter().flatten().zip(prev.iter().flatten()) {
                    assert!(a <= b);
                }
            }
            previous_k = Some(grids);
        }
        let mut previous_rho: Option<Vec<Vec<f32>>> = None;
        for rho in 0..=6 {
            let cfg = RetrievalConfig {
                top_k: 10,
                rho,
                output_resolution: (6, 6),
                ..RetrievalConfig::default()
            };
            let grids: Vec<Vec<f32>> = score_image(&bank, pack, &cfg)
                .unwrap()
                .layer_grids
                .into_iter()
                .map(|g| g.data)
                .collect();
            if let Some(prev) = &previous_rho {
                for (a, b) in grids.iter().flatten().zip(prev.iter().flatten()) {
                    assert!(a <= b);
                }
            }
            previous_rho = Some(grids);
        }
    }
}

#[test]
fn scoring_paths_agree_on_random_images() {
    let spec = SynthSpec {
        test_per_category: 6,
        height: 7,
        width: 9,
        ..SynthSpec::default()
    };
    for seed in 0..3 {
        let data = dataset(&spec, 100 + seed);
        let bank = build_bank(&data.train, &LAYERS).unwrap();
        for (i, pack) in data.test.iter().enumerate() {
            let cfg = RetrievalConfig {
                top_k: 1 + i * 3,
                rho: i % 3,
                output_resolution: (14, 18),
                ..RetrievalConfig::default()
            };
            let fast = score_image(&bank, pack, &cfg).unwrap();
            let slow = score_image_bruteforce(&bank, pack, &cfg).unwrap();
            assert_eq!(fast.nn_ids, slow.nn_ids);
            assert_eq!(fast.fused_grid, slow.fused_grid);
        }
    }
}

#[test]
fn empty_reference_set_errors_identically() {
    let spec = SynthSpec {
        height: 4,
        width: 4,
        ..SynthSpec::default()
    };
    let data = dataset(&spec, 1);
    let bank = build_bank(&data.train, &LAYERS).unwrap();
    let cfg = config(&spec);
    let a = score_with_neighbors(&bank, &data.test[0], &cfg, &[], ScoringPath::Blocked).unwrap_err();
    let b = score_with_neighbors(&bank, &data.test[0], &cfg, &[], ScoringPath::Naive).unwrap_err();
    assert_eq!(a.to_string(), b.to_string());
}

#[test]
fn own_images_saturate() {
    let spec = SynthSpec {
        categories: 4,
        train_per_category: 15,
        ..SynthSpec::default()
    };
    let data = dataset(&spec, 5);
    let bank = build_bank(&data.train, &LAYERS).unwrap();
    let sat = check_bank_saturation(&bank, &data.train, &config(&spec)).unwrap();
    assert_eq!(sat.images, 60);
    assert!(sat.max_patch_score <= 1e-5);
    assert!(sat.max_image_score <= 1e-5);
}

#[test]
fn serialized_forms_are_deterministic() {
    let spec = SynthSpec {
        height: 5,
        width: 5,
        ..SynthSpec::default()
    };
    let data = dataset(&spec, 9);
    let again = dataset(&spec, 9);
    assert_eq!(data, again);

    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_feature_pack(&data.test[0], &mut a).unwrap();
    write_feature_pack(&again.test[0], &mut b).unwrap();
    assert_eq!(digest(&a), digest(&b));

    let bank_bytes = |packs| {
        let mut out = Vec::new();
        save_bank(&build_bank(packs, &LAYERS).unwrap(), &mut out).unwrap();
        out
    };
    assert_eq!(
        digest(&bank_bytes(&data.train)),
        digest(&bank_bytes(&again.train))
    );

    let subset: Vec<_> = subsample_bank(&data.train, &ScalingProtocol::multi_class(1.0, 3))
        .unwrap()
        .into_iter()
        .cloned()
        .collect();
    assert_eq!(digest(&bank_bytes(&subset)), digest(&bank_bytes(&data.train)));

    let half = data.train.len() / 2;
    let grown = add_images(
        &build_bank(&data.train[..half], &LAYERS).unwrap(),
        &data.train[half..],
    )
    .unwrap();
    let mut grown_bytes = Vec::new();
    save_bank(&grown, &mut grown_bytes).unwrap();
    assert_eq!(digest(&grown_bytes), digest(&bank_bytes(&data.train)));
}

#[test]
fn dataset_directory_roundtrip() {
    let spec = SynthSpec {
        height: 4,
        width: 5,
        ..SynthSpec::default()
    };
    let data = dataset(&spec, 2);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic_dataset(&data, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), data.train.len() + data.test.len());

    let opened = Dataset::open(dir.path(), None).unwrap();
    assert_eq!(opened.load_packs(Split::Train).unwrap(), data.train);
    assert_eq!(opened.load_packs(Split::Test).unwrap(), data.test);
    for (entry, mask) in opened.entries(Split::Test).zip(&data.masks) {
        match opened.load_mask(entry).unwrap() {
            Some(m) => assert_eq!(&m, mask),
            None => assert!(mask.is_clear()),
        }
    }

    let fallback = Dataset::open(std::path::Path::new("manifest.json"), Some(dir.path())).unwrap();
    assert_eq!(fallback.manifest, opened.manifest);
}
