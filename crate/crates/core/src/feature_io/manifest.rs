//! Dataset directories: one RADF pack per image plus a JSON manifest.
//!
//! Relative paths inside a manifest are resolved against the directory that
//! contains the manifest file.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mask::BinaryMask;
use super::pack::{read_feature_pack, write_feature_pack, FeaturePack, Label, Split};
use super::synth::SynthDataset;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pack: String,
    pub image_id: String,
    pub category: String,
    pub split: Split,
    pub label: Label,
    #[serde(default)]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
}

/// A manifest bound to the directory its relative paths live in.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    /// Opens `path`; when it does not exist and `fallback_root` is given,
    /// `fallback_root/path` is tried instead.
    pub fn open(path: &Path, fallback_root: Option<&Path>) -> Result<Self> {
        let resolved = if path.exists() {
            path.to_path_buf()
        } else {
            match fallback_root.map(|r| r.join(path)) {
                Some(p) if p.exists() => p,
                _ => {
                    return Err(Error::io(
                        format!("opening manifest {}", path.display()),
                        std::io::ErrorKind::NotFound.into(),
                    ))
                }
            }
        };
        let resolved = if resolved.is_dir() {
            resolved.join(MANIFEST_FILE)
        } else {
            resolved
        };
        let file = File::open(&resolved)
            .map_err(|e| Error::io(format!("opening manifest {}", resolved.display()), e))?;
        let manifest: Manifest = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Header(format!("manifest {}: {e}", resolved.display())))?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Header(format!(
                "unsupported manifest version {}",
                manifest.version
            )));
        }
        let root = resolved
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { root, manifest })
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_pack(&self, entry: &ManifestEntry) -> Result<FeaturePack> {
        let path = self.resolve(&entry.pack);
        let file = File::open(&path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        read_feature_pack(BufReader::new(file))
    }

    pub fn load_packs(&self, split: Split) -> Result<Vec<FeaturePack>> {
        self.entries(split).map(|e| self.load_pack(e)).collect()
    }

    /// Ground-truth mask for `entry`; `None` when the manifest lists none.
    pub fn load_mask(&self, entry: &ManifestEntry) -> Result<Option<BinaryMask>> {
        let Some(rel) = &entry.mask else {
            return Ok(None);
        };
        let path = self.resolve(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        BinaryMask::from_png(&bytes).map(Some)
    }
}

/// Writes `data` under `dir` (packs/, masks/, manifest.json).
pub fn write_synthetic_dataset(data: &SynthDataset, dir: &Path) -> Result<Manifest> {
    let packs_dir = dir.join("packs");
    let masks_dir = dir.join("masks");
    for d in [&packs_dir, &masks_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
    }

    let mut entries = Vec::with_capacity(data.train.len() + data.test.len());
    let write_pack = |pack: &FeaturePack| -> Result<ManifestEntry> {
        let rel = format!("packs/{}.radf", pack.image_id);
        let path = dir.join(&rel);
        let file = File::create(&path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        write_feature_pack(pack, BufWriter::new(file))?;
        Ok(ManifestEntry {
            pack: rel,
            image_id: pack.image_id.clone(),
            category: pack.category.clone(),
            split: pack.split,
            label: pack.label,
            mask: pack.mask_ref.clone(),
        })
    };
    for pack in &data.train {
        entries.push(write_pack(pack)?);
    }
    for (pack, mask) in data.test.iter().zip(&data.masks) {
        let entry = write_pack(pack)?;
        if let Some(rel) = &entry.mask {
            let path = dir.join(rel);
            fs::write(&path, mask.to_png()?)
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        }
        entries.push(entry);
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Header(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(manifest)
}
