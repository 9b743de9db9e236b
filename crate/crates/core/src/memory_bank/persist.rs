use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{validate_bank, ImageMeta, LayerStore, MemoryBank};
use crate::error::{Error, Result};
use crate::feature_io::container::{read_container, take_tensor, write_container, TensorRef};

pub const BANK_MAGIC: &[u8; 4] = b"RADB";
const BANK_KIND: &str = "memory_bank";

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    layer_id: u32,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct BankMeta {
    kind: String,
    grid: [usize; 2],
    global_dim: usize,
    images: Vec<ImageMeta>,
    layers: Vec<LayerMeta>,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} does not fit in u32")))
}

/// Writes `bank` as a RADB container; returns the byte count.
pub fn save_bank<W: Write>(bank: &MemoryBank, sink: W) -> Result<u64> {
    let meta = BankMeta {
        kind: BANK_KIND.into(),
        grid: [bank.grid.0, bank.grid.1],
        global_dim: bank.global_dim,
        images: bank.images.clone(),
        layers: bank
            .layers
            .iter()
            .map(|l| LayerMeta {
                layer_id: l.layer_id,
                dim: l.dim,
            })
            .collect(),
    };
    let offsets = bank
        .position_offsets
        .iter()
        .map(|&o| to_u32(o, "row offset"))
        .collect::<Result<Vec<_>>>()?;
    let coords: Vec<Vec<u32>> = bank
        .layers
        .iter()
        .map(|l| l.coords.iter().flat_map(|&(h, w)| [h, w]).collect())
        .collect();

    let n = bank.images.len();
    let mut tensors = vec![
        TensorRef::f32("globals", vec![n, bank.global_dim], &bank.globals),
        TensorRef::u32("position_offsets", vec![offsets.len()], &offsets),
    ];
    for (l, c) in bank.layers.iter().zip(&coords) {
        let rows = l.num_rows();
        tensors.push(TensorRef::f32(
            format!("layer.{}.patches", l.layer_id),
            vec![rows, l.dim],
            &l.patches,
        ));
        tensors.push(TensorRef::u32(
            format!("layer.{}.image_index", l.layer_id),
            vec![rows],
            &l.image_index,
        ));
        tensors.push(TensorRef::u32(
            format!("layer.{}.coords", l.layer_id),
            vec![rows, 2],
            c,
        ));
    }
    write_container(BANK_MAGIC, &meta, &tensors, sink)
}

/// Reads and fully validates a RADB container.
pub fn load_bank<R: Read>(source: R) -> Result<MemoryBank> {
    let (meta, mut tensors): (BankMeta, _) = read_container(BANK_MAGIC, source)?;
    if meta.kind != BANK_KIND {
        return Err(Error::Header(format!(
            "expected a {BANK_KIND} container, found {:?}",
            meta.kind
        )));
    }
    let globals = take_tensor(&mut tensors, "globals")?.into_f32()?;
    let position_offsets = take_tensor(&mut tensors, "position_offsets")?
        .into_u32()?
        .into_iter()
        .map(|o| o as usize)
        .collect();
    let mut layers = Vec::with_capacity(meta.layers.len());
    for lm in &meta.layers {
        let patches = take_tensor(&mut tensors, &format!("layer.{}.patches", lm.layer_id))?;
        if patches.shape.get(1) != Some(&lm.dim) {
            return Err(Error::CorruptBank(format!(
                "layer {} patch matrix has shape {:?}",
                lm.layer_id, patches.shape
            )));
        }
        let image_index =
            take_tensor(&mut tensors, &format!("layer.{}.image_index", lm.layer_id))?.into_u32()?;
        let coords = take_tensor(&mut tensors, &format!("layer.{}.coords", lm.layer_id))?
            .into_u32()?
            .chunks_exact(2)
            .map(|c| (c[0], c[1]))
            .collect();
        layers.push(LayerStore {
            layer_id: lm.layer_id,
            dim: lm.dim,
            patches: patches.into_f32()?,
            image_index,
            coords,
        });
    }
    let bank = MemoryBank {
        grid: (meta.grid[0], meta.grid[1]),
        global_dim: meta.global_dim,
        globals,
        images: meta.images,
        position_offsets,
        layers,
    };
    validate_bank(&bank)?;
    Ok(bank)
}
