use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::container::{read_container, take_tensor, write_container, TensorRef};
use crate::error::{Error, Result};

pub const PACK_MAGIC: &[u8; 4] = b"RADF";

/// Accepted deviation of a stored vector's ℓ2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

/// Patch embeddings of one encoder layer, stored `h`-outer, `w`-middle,
/// channel-inner.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrid {
    pub layer_id: u32,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl LayerGrid {
    pub fn new(layer_id: u32, height: usize, width: usize, dim: usize, data: Vec<f32>) -> Self {
        Self {
            layer_id,
            height,
            width,
            dim,
            data,
        }
    }

    pub fn patch(&self, h: usize, w: usize) -> &[f32] {
        let start = (h * self.width + w) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn num_patches(&self) -> usize {
        self.height * self.width
    }
}

/// Features extracted from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    pub image_id: String,
    pub category: String,
    pub split: Split,
    pub label: Label,
    pub mask_ref: Option<String>,
    pub global_descriptor: Vec<f32>,
    pub layers: Vec<LayerGrid>,
    /// (height, width) in pixels of the encoder input.
    pub source_resolution: (u32, u32),
}

impl FeaturePack {
    pub fn layer(&self, layer_id: u32) -> Option<&LayerGrid> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    /// Shared patch grid, taken from the first layer.
    pub fn grid(&self) -> Option<(usize, usize)> {
        self.layers.first().map(|l| (l.height, l.width))
    }
}

/// A single broken invariant, located by field path.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyLayers,
    EmptyGlobal,
    GlobalNorm {
        norm: f64,
    },
    PatchNorm {
        layer: u32,
        h: usize,
        w: usize,
        norm: f64,
    },
    EmptyGrid {
        layer: u32,
    },
    GridShape {
        layer: u32,
        expected: (usize, usize),
        found: (usize, usize),
    },
    DataLength {
        layer: u32,
        expected: usize,
        found: usize,
    },
    LayerOrder {
        index: usize,
        layer: u32,
    },
}

impl Violation {
    pub fn field_path(&self) -> String {
        match self {
            Violation::EmptyLayers => "layers".into(),
            Violation::EmptyGlobal | Violation::GlobalNorm { .. } => "global_descriptor".into(),
            Violation::PatchNorm { layer, h, w, .. } => format!("layers[{layer}].data[{h},{w}]"),
            Violation::EmptyGrid { layer } | Violation::GridShape { layer, .. } => {
                format!("layers[{layer}].shape")
            }
            Violation::DataLength { layer, .. } => format!("layers[{layer}].data"),
            Violation::LayerOrder { index, .. } => format!("layers[#{index}].layer_id"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyLayers => write!(f, "layers must be non-empty"),
            Violation::EmptyGlobal => write!(f, "global_descriptor must be non-empty"),
            Violation::GlobalNorm { norm } => {
                write!(f, "normalization violation at global_descriptor (norm {norm})")
            }
            Violation::PatchNorm { layer, h, w, norm } => write!(
                f,
                "normalization violation at (layer {layer}, h {h}, w {w}) (norm {norm})"
            ),
            Violation::EmptyGrid { layer } => {
                write!(f, "grid-shape violation at layer {layer}: zero extent")
            }
            Violation::GridShape {
                layer,
                expected,
                found,
            } => write!(
                f,
                "grid-shape violation at layer {layer}: {}x{} differs from {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::DataLength {
                layer,
                expected,
                found,
            } => write!(
                f,
                "data-length violation at layer {layer}: {found} values, expected {expected}"
            ),
            Violation::LayerOrder { index, layer } => write!(
                f,
                "layer ids must be strictly increasing (layer {layer} at position {index})"
            ),
        }
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn norm_ok(norm: f64) -> bool {
    (norm - 1.0).abs() <= NORM_TOLERANCE
}

/// Lists every invariant violation of `pack`. An empty list means valid.
pub fn validate_pack(pack: &FeaturePack) -> Vec<Violation> {
    let mut out = Vec::new();
    if pack.global_descriptor.is_empty() {
        out.push(Violation::EmptyGlobal);
    } else {
        let norm = l2_norm(&pack.global_descriptor);
        if !norm_ok(norm) {
            out.push(Violation::GlobalNorm { norm });
        }
    }
    if pack.layers.is_empty() {
        out.push(Violation::EmptyLayers);
        return out;
    }

    let expected = (pack.layers[0].height, pack.layers[0].width);
    let mut prev: Option<u32> = None;
    for (index, layer) in pack.layers.iter().enumerate() {
        if prev.is_some_and(|p| layer.layer_id <= p) {
            out.push(Violation::LayerOrder {
                index,
                layer: layer.layer_id,
            });
        }
        prev = Some(layer.layer_id);

        if layer.height == 0 || layer.width == 0 || layer.dim == 0 {
            out.push(Violation::EmptyGrid {
                layer: layer.layer_id,
            });
            continue;
        }
        let found = (layer.height, layer.width);
        if found != expected {
            out.push(Violation::GridShape {
                layer: layer.layer_id,
                expected,
                found,
            });
        }
        let want = layer.height * layer.width * layer.dim;
        if layer.data.len() != want {
            out.push(Violation::DataLength {
                layer: layer.layer_id,
                expected: want,
                found: layer.data.len(),
            });
            continue;
        }
        for h in 0..layer.height {
            for w in 0..layer.width {
                let norm = l2_norm(layer.patch(h, w));
                if !norm_ok(norm) {
                    out.push(Violation::PatchNorm {
                        layer: layer.layer_id,
                        h,
                        w,
                        norm,
                    });
                }
            }
        }
    }
    out
}

pub(crate) fn ensure_valid(pack: &FeaturePack) -> Result<()> {
    let violations = validate_pack(pack);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidPack {
            image_id: pack.image_id.clone(),
            violations,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerMeta {
    layer_id: u32,
    height: usize,
    width: usize,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PackMeta {
    kind: String,
    image_id: String,
    category: String,
    split: Split,
    label: Label,
    mask_ref: Option<String>,
    source_resolution: [u32; 2],
    layers: Vec<LayerMeta>,
}

const PACK_KIND: &str = "feature_pack";

fn layer_tensor_name(layer_id: u32) -> String {
    format!("layer.{layer_id}")
}

/// Serializes `pack` as a RADF container and returns the byte count.
pub fn write_feature_pack<W: Write>(pack: &FeaturePack, sink: W) -> Result<u64> {
    ensure_valid(pack)?;
    let meta = PackMeta {
        kind: PACK_KIND.into(),
        image_id: pack.image_id.clone(),
        category: pack.category.clone(),
        split: pack.split,
        label: pack.label,
        mask_ref: pack.mask_ref.clone(),
        source_resolution: [pack.source_resolution.0, pack.source_resolution.1],
        layers: pack
            .layers
            .iter()
            .map(|l| LayerMeta {
                layer_id: l.layer_id,
                height: l.height,
                width: l.width,
                dim: l.dim,
            })
            .collect(),
    };
    let mut tensors = vec![TensorRef::f32(
        "global",
        vec![pack.global_descriptor.len()],
        &pack.global_descriptor,
    )];
    for l in &pack.layers {
        tensors.push(TensorRef::f32(
            layer_tensor_name(l.layer_id),
            vec![l.height, l.width, l.dim],
            &l.data,
        ));
    }
    write_container(PACK_MAGIC, &meta, &tensors, sink)
}

/// Parses a RADF container. The returned pack passes [`validate_pack`].
pub fn read_feature_pack<R: Read>(source: R) -> Result<FeaturePack> {
    let (meta, mut tensors): (PackMeta, _) = read_container(PACK_MAGIC, source)?;
    if meta.kind != PACK_KIND {
        return Err(Error::Header(format!(
            "expected a {PACK_KIND} container, found {:?}",
            meta.kind
        )));
    }
    let global_descriptor = take_tensor(&mut tensors, "global")?.into_f32()?;
    let mut layers = Vec::with_capacity(meta.layers.len());
    for lm in &meta.layers {
        let name = layer_tensor_name(lm.layer_id);
        let tensor = take_tensor(&mut tensors, &name)?;
        if tensor.shape != [lm.height, lm.width, lm.dim] {
            return Err(Error::Header(format!(
                "tensor {name} shape {:?} disagrees with layer metadata",
                tensor.shape
            )));
        }
        layers.push(LayerGrid::new(
            lm.layer_id,
            lm.height,
            lm.width,
            lm.dim,
            tensor.into_f32()?,
        ));
    }
    let pack = FeaturePack {
        image_id: meta.image_id,
        category: meta.category,
        split: meta.split,
        label: meta.label,
        mask_ref: meta.mask_ref,
        global_descriptor,
        layers,
        source_resolution: (meta.source_resolution[0], meta.source_resolution[1]),
    };
    ensure_valid(&pack)?;
    Ok(pack)
}
