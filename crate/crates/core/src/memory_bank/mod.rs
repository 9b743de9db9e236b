//! Multi-layer memory of anomaly-free features.
//!
//! Patch rows are stored position-major: all images' patches at grid cell
//! `(0, 0)` first (in image order), then `(0, 1)`, and so on. The rows of
//! one cell therefore form the contiguous range
//! `position_offsets[p]..position_offsets[p + 1]`, and row
//! `position_offsets[p] + i` always belongs to image `i`.

mod persist;
mod protocol;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use persist::{load_bank, save_bank, BANK_MAGIC};
pub use protocol::{ceil_count, select_indices, subsample_bank, ScalingMode, ScalingProtocol};

use crate::error::{Error, Result};
use crate::feature_io::{l2_norm, validate_pack, FeaturePack, NORM_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub category: String,
}

/// Patch rows of one encoder layer plus their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStore {
    pub layer_id: u32,
    pub dim: usize,
    pub patches: Vec<f32>,
    pub image_index: Vec<u32>,
    pub coords: Vec<(u32, u32)>,
}

impl LayerStore {
    pub fn num_rows(&self) -> usize {
        self.image_index.len()
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[f32] {
        &self.patches[n * self.dim..(n + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub(crate) grid: (usize, usize),
    pub(crate) global_dim: usize,
    pub(crate) globals: Vec<f32>,
    pub(crate) images: Vec<ImageMeta>,
    pub(crate) position_offsets: Vec<usize>,
    pub(crate) layers: Vec<LayerStore>,
}

impl MemoryBank {
    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn global_dim(&self) -> usize {
        self.global_dim
    }

    pub fn images(&self) -> &[ImageMeta] {
        &self.images
    }

    pub fn global(&self, i: usize) -> &[f32] {
        &self.globals[i * self.global_dim..(i + 1) * self.global_dim]
    }

    pub fn layers(&self) -> &[LayerStore] {
        &self.layers
    }

    pub fn layer_ids(&self) -> Vec<u32> {
        self.layers.iter().map(|l| l.layer_id).collect()
    }

    pub fn layer(&self, layer_id: u32) -> Option<&LayerStore> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    /// Row range holding the patches stored at grid cell `(h, w)`.
    #[inline]
    pub fn position_range(&self, h: usize, w: usize) -> Range<usize> {
        let p = h * self.grid.1 + w;
        self.position_offsets[p]..self.position_offsets[p + 1]
    }
}

fn normalized(v: &[f32]) -> Vec<f32> {
    let n = l2_norm(v);
    v.iter().map(|&x| (x as f64 / n) as f32).collect()
}

fn check_layer_list(layers: &[u32]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("layer set must be non-empty".into()));
    }
    if layers.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "layer ids must be strictly increasing and unique".into(),
        ));
    }
    Ok(())
}

/// Shape every pack entering a bank must agree with.
struct BankShape {
    grid: (usize, usize),
    global_dim: usize,
    dims: Vec<(u32, usize)>,
}

impl BankShape {
    fn of_bank(bank: &MemoryBank) -> Self {
        Self {
            grid: bank.grid,
            global_dim: bank.global_dim,
            dims: bank.layers.iter().map(|l| (l.layer_id, l.dim)).collect(),
        }
    }

    fn of_pack(pack: &FeaturePack, layers: &[u32]) -> Result<Self> {
        let dims = layers
            .iter()
            .map(|&id| {
                pack.layer(id)
                    .map(|l| (id, l.dim))
                    .ok_or_else(|| build_err(pack, format!("missing layer {id}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            grid: pack.grid().unwrap_or((0, 0)),
            global_dim: pack.global_descriptor.len(),
            dims,
        })
    }

    fn check(&self, pack: &FeaturePack) -> Result<()> {
        let violations = validate_pack(pack);
        if let Some(v) = violations.first() {
            return Err(build_err(pack, v.to_string()));
        }
        let grid = pack.grid().unwrap_or((0, 0));
        if grid != self.grid {
            return Err(build_err(
                pack,
                format!(
                    "grid {}x{} differs from bank grid {}x{}",
                    grid.0, grid.1, self.grid.0, self.grid.1
                ),
            ));
        }
        if pack.global_descriptor.len() != self.global_dim {
            return Err(build_err(
                pack,
                format!(
                    "global descriptor dimension {} differs from {}",
                    pack.global_descriptor.len(),
                    self.global_dim
                ),
            ));
        }
        for &(id, dim) in &self.dims {
            match pack.layer(id) {
                None => return Err(build_err(pack, format!("missing layer {id}"))),
                Some(l) if l.dim != dim => {
                    return Err(build_err(
                        pack,
                        format!("layer {id} dimension {} differs from {dim}", l.dim),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

fn build_err(pack: &FeaturePack, reason: String) -> Error {
    Error::Build {
        image_id: pack.image_id.clone(),
        reason,
    }
}

/// Builds a bank holding every listed layer of every pack, in pack order.
/// Stored vectors are re-normalized on ingest.
pub fn build_bank(packs: &[FeaturePack], layers: &[u32]) -> Result<MemoryBank> {
    check_layer_list(layers)?;
    let first = packs.first().ok_or(Error::EmptyBank)?;
    let shape = BankShape::of_pack(first, layers)?;
    for pack in packs {
        shape.check(pack)?;
    }
    let refs: Vec<&FeaturePack> = packs.iter().collect();
    Ok(assemble(&shape, None, &refs))
}

/// Returns the bank that `build_bank` would produce for the original packs
/// followed by `packs`.
pub fn add_images(bank: &MemoryBank, packs: &[FeaturePack]) -> Result<MemoryBank> {
    if packs.is_empty() {
        return Ok(bank.clone());
    }
    let shape = BankShape::of_bank(bank);
    for pack in packs {
        shape.check(pack)?;
    }
    let refs: Vec<&FeaturePack> = packs.iter().collect();
    Ok(assemble(&shape, Some(bank), &refs))
}

fn assemble(shape: &BankShape, base: Option<&MemoryBank>, packs: &[&FeaturePack]) -> MemoryBank {
    let (height, width) = shape.grid;
    let cells = height * width;
    let old_n = base.map_or(0, MemoryBank::num_images);
    let n = old_n + packs.len();

    let mut globals = base.map_or_else(Vec::new, |b| b.globals.clone());
    let mut images = base.map_or_else(Vec::new, |b| b.images.clone());
    for pack in packs {
        globals.extend(normalized(&pack.global_descriptor));
        images.push(ImageMeta {
            image_id: pack.image_id.clone(),
            category: pack.category.clone(),
        });
    }

    let layers = shape
        .dims
        .iter()
        .map(|&(layer_id, dim)| {
            let old = base.and_then(|b| b.layer(layer_id));
            let grids: Vec<_> = packs
                .iter()
                .map(|p| p.layer(layer_id).expect("checked"))
                .collect();
            let mut patches = Vec::with_capacity(n * cells * dim);
            let mut image_index = Vec::with_capacity(n * cells);
            let mut coords = Vec::with_capacity(n * cells);
            for p in 0..cells {
                let (h, w) = (p / width, p % width);
                if let Some(old) = old {
                    let rows = p * old_n..(p + 1) * old_n;
                    patches.extend_from_slice(&old.patches[rows.start * dim..rows.end * dim]);
                }
                for grid in &grids {
                    patches.extend(normalized(grid.patch(h, w)));
                }
                image_index.extend(0..n as u32);
                coords.extend(std::iter::repeat_n((h as u32, w as u32), n));
            }
            LayerStore {
                layer_id,
                dim,
                patches,
                image_index,
                coords,
            }
        })
        .collect();

    MemoryBank {
        grid: shape.grid,
        global_dim: shape.global_dim,
        globals,
        images,
        position_offsets: (0..=cells).map(|p| p * n).collect(),
        layers,
    }
}

/// Checks every structural invariant of a bank.
pub(crate) fn validate_bank(bank: &MemoryBank) -> Result<()> {
    let corrupt = |msg: String| Err(Error::CorruptBank(msg));
    let n = bank.images.len();
    if n == 0 {
        return Err(Error::EmptyBank);
    }
    let (height, width) = bank.grid;
    let cells = height * width;
    if cells == 0 {
        return corrupt("grid has zero extent".into());
    }
    if bank.globals.len() != n * bank.global_dim {
        return corrupt("global descriptor matrix has wrong size".into());
    }
    if bank.position_offsets.len() != cells + 1 {
        return corrupt("position index has wrong length".into());
    }
    for p in 0..=cells {
        if bank.position_offsets[p] != p * n {
            return corrupt(format!("position index entry {p} does not partition the rows"));
        }
    }
    for i in 0..n {
        if (l2_norm(bank.global(i)) - 1.0).abs() > NORM_TOLERANCE {
            return corrupt(format!("global descriptor {i} is not unit-norm"));
        }
    }
    let mut prev = None;
    for layer in &bank.layers {
        if prev.is_some_and(|p| layer.layer_id <= p) {
            return corrupt("layer ids not strictly increasing".into());
        }
        prev = Some(layer.layer_id);
        let rows = n * cells;
        if layer.image_index.len() != rows
            || layer.coords.len() != rows
            || layer.patches.len() != rows * layer.dim
        {
            return corrupt(format!("layer {} has wrong row count", layer.layer_id));
        }
        for p in 0..cells {
            let expected = ((p / width) as u32, (p % width) as u32);
            for (i, row) in (p * n..(p + 1) * n).enumerate() {
                if layer.image_index[row] as usize != i || layer.coords[row] != expected {
                    return corrupt(format!(
                        "layer {} row {row} breaks the position-major layout",
                        layer.layer_id
                    ));
                }
                if (l2_norm(layer.row(row)) - 1.0).abs() > NORM_TOLERANCE {
                    return corrupt(format!("layer {} row {row} is not unit-norm", layer.layer_id));
                }
            }
        }
    }
    if bank.layers.is_empty() {
        return corrupt("bank has no layers".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_io::{generate_synthetic_dataset, Label, LayerGrid, Split, SynthSpec};

    fn tiny_pack(id: &str, value: [f32; 2]) -> FeaturePack {
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&value);
        }
        FeaturePack {
            image_id: id.into(),
            category: "c".into(),
            split: Split::Train,
            label: Label::Normal,
            mask_ref: None,
            global_descriptor: vec![1.0, 0.0],
            layers: vec![LayerGrid::new(4, 2, 2, 2, data)],
            source_resolution: (32, 32),
        }
    }

    #[test]
    fn single_image_bank() {
        let bank = build_bank(&[tiny_pack("a", [0.6, 0.8])], &[4]).unwrap();
        assert_eq!(bank.num_images(), 1);
        assert_eq!(bank.layer(4).unwrap().num_rows(), 4);
        assert_eq!(bank.position_range(1, 0), 2..3);
        validate_bank(&bank).unwrap();
    }

    #[test]
    fn empty_input_is_an_error() {
        assert_eq!(build_bank(&[], &[4]).unwrap_err().to_string(), "empty bank");
    }

    #[test]
    fn missing_layer_names_the_pack() {
        let err = build_bank(&[tiny_pack("a", [1.0, 0.0])], &[4, 7]).unwrap_err();
        assert!(
            matches!(err, Error::Build { ref image_id, .. } if image_id == "a"),
            "{err}"
        );
    }

    #[test]
    fn grid_mismatch_names_the_pack() {
        let mut other = tiny_pack("b", [1.0, 0.0]);
        other.layers[0] = LayerGrid::new(4, 1, 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let err = build_bank(&[tiny_pack("a", [1.0, 0.0]), other], &[4]).unwrap_err();
        assert!(
            matches!(err, Error::Build { ref image_id, .. } if image_id == "b"),
            "{err}"
        );
    }

    #[test]
    fn drifted_vectors_are_renormalized() {
        let bank = build_bank(&[tiny_pack("a", [0.6004, 0.8003])], &[4]).unwrap();
        let norm = l2_norm(bank.layer(4).unwrap().row(0));
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layout_is_position_major() {
        let spec = SynthSpec {
            categories: 1,
            train_per_category: 3,
            height: 2,
            width: 3,
            layers: vec![(4, 4)],
            global_dim: 4,
            ..SynthSpec::default()
        };
        let data = generate_synthetic_dataset(&spec, 2).unwrap();
        let bank = build_bank(&data.train, &[4]).unwrap();
        let store = bank.layer(4).unwrap();
        for h in 0..2 {
            for w in 0..3 {
                for (i, row) in bank.position_range(h, w).enumerate() {
                    assert_eq!(store.image_index[row] as usize, i);
                    assert_eq!(store.coords[row], (h as u32, w as u32));
                    let src = data.train[i].layer(4).unwrap().patch(h, w);
                    for (a, b) in store.row(row).iter().zip(src) {
                        assert!((a - b).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn add_equals_rebuild() {
        let spec = SynthSpec {
            categories: 2,
            train_per_category: 3,
            height: 3,
            width: 3,
            layers: vec![(4, 6), (7, 6)],
            global_dim: 6,
            ..SynthSpec::default()
        };
        let data = generate_synthetic_dataset(&spec, 8).unwrap();
        let (old, new) = data.train.split_at(2);
        let grown = add_images(&build_bank(old, &[4, 7]).unwrap(), new).unwrap();
        assert_eq!(grown, build_bank(&data.train, &[4, 7]).unwrap());

        let base = build_bank(old, &[4, 7]).unwrap();
        assert_eq!(add_images(&base, &[]).unwrap(), base);
    }
}
