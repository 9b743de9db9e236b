//! Score grids, pixel maps, pooling into image scores, and heatmap output.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::container::{read_container, take_tensor, write_container, TensorRef};
use crate::feature_io::{encode_png, PACK_MAGIC};

/// Row-major 2-D map of scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} map",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn min_max(&self) -> Option<(f32, f32)> {
        self.data.iter().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Index of the largest value; ties go to the first occurrence.
    pub fn argmax(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f32)> = None;
        for (i, &v) in self.data.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| (i / self.width, i % self.width))
    }
}

/// Everything produced for one scored image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyResult {
    pub image_id: String,
    pub category: String,
    pub layer_ids: Vec<u32>,
    /// Per-layer patch scores, parallel to `layer_ids`.
    pub layer_grids: Vec<ScoreMap>,
    pub fused_grid: ScoreMap,
    pub pixel_map: ScoreMap,
    pub image_score: f64,
    /// Retrieved reference images, most similar first.
    pub topk_images: Vec<usize>,
    /// Per-layer bank row of each cell's nearest neighbor, parallel to `layer_ids`.
    pub nn_ids: Vec<Vec<u32>>,
}

/// Bilinear resize to `target` with half-pixel centers: output pixel `i`
/// samples source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the
/// grid.
pub fn upsample_map(grid: &ScoreMap, target: (usize, usize)) -> Result<ScoreMap> {
    let (out_h, out_w) = target;
    if out_h < grid.height || out_w < grid.width || grid.height == 0 || grid.width == 0 {
        return Err(Error::Shape(format!(
            "cannot upsample {}x{} to {out_h}x{out_w}",
            grid.height, grid.width
        )));
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let rows = taps(out_h, grid.height);
    let cols = taps(out_w, grid.width);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let v00 = grid.get(y0, x0) as f64;
            let v01 = grid.get(y0, x1) as f64;
            let v10 = grid.get(y1, x0) as f64;
            let v11 = grid.get(y1, x1) as f64;
            let top = v00 + (v01 - v00) * fx;
            let bottom = v10 + (v11 - v10) * fx;
            data.push((top + (bottom - top) * fy) as f32);
        }
    }
    Ok(ScoreMap {
        height: out_h,
        width: out_w,
        data,
    })
}

/// Separable Gaussian blur with replicated borders, truncated at 4σ.
pub fn gaussian_smooth(map: &ScoreMap, sigma: f64) -> ScoreMap {
    let radius = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();

    let (h, w) = (map.height as isize, map.width as isize);
    let clamp = |v: isize, hi: isize| v.clamp(0, hi - 1) as usize;
    let mut tmp = vec![0.0f64; map.data.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * map.data[(y * w) as usize + clamp(x + k as isize - radius, w)] as f64)
                .sum();
        }
    }
    let mut data = vec![0.0f32; map.data.len()];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[clamp(y + k as isize - radius, h) * w as usize + x as usize])
                .sum();
            data[(y * w + x) as usize] = v as f32;
        }
    }
    ScoreMap {
        height: map.height,
        width: map.width,
        data,
    }
}

/// Number of pixels pooled for a fraction `f` of `p` pixels: ⌈f·p⌉, at least 1.
pub fn pooled_count(fraction: f64, p: usize) -> usize {
    let x = fraction * p as f64;
    ((x - 1e-9 * x.max(1.0)).ceil().max(1.0) as usize).min(p)
}

/// Mean of the ⌈f·P⌉ largest pixel values.
///
/// The pooled values are summed in descending order with Neumaier
/// compensation, so the result does not depend on pixel order.
pub fn image_score(map: &ScoreMap, fraction: f64) -> Result<f64> {
    if map.data.is_empty() {
        return Err(Error::Shape("empty map".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "pooling fraction {fraction} outside (0, 1]"
        )));
    }
    if let Some(i) = map.data.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite(i));
    }
    let count = pooled_count(fraction, map.data.len());
    let mut values = map.data.clone();
    let desc = |a: &f32, b: &f32| b.total_cmp(a);
    if count < values.len() {
        values.select_nth_unstable_by(count - 1, desc);
        values.truncate(count);
    }
    values.sort_unstable_by(desc);

    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &v in &values {
        let v = v as f64;
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    Ok((sum + comp) / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    Gray,
    #[default]
    Jet,
}

impl Palette {
    fn color(self, t: f64) -> [u8; 3] {
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        match self {
            Palette::Gray => {
                let g = to_u8(t);
                [g, g, g]
            }
            Palette::Jet => {
                let ramp = |c: f64| (1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0);
                [to_u8(ramp(3.0)), to_u8(ramp(2.0)), to_u8(ramp(1.0))]
            }
        }
    }
}

/// Min-max normalized colormap image encoded as an RGB PNG.
pub fn render_heatmap(map: &ScoreMap, palette: Palette) -> Result<Vec<u8>> {
    if let Some(i) = map.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let (lo, hi) = map.min_max().ok_or_else(|| Error::Shape("empty map".into()))?;
    let span = (hi - lo) as f64;
    let mut rgb = Vec::with_capacity(map.data.len() * 3);
    for &v in &map.data {
        let t = if span > 0.0 { (v - lo) as f64 / span } else { 0.0 };
        rgb.extend_from_slice(&palette.color(t));
    }
    encode_png(map.width, map.height, png::ColorType::Rgb, &rgb)
}

#[derive(Serialize, Deserialize)]
struct MapMeta {
    kind: String,
}

const PIXEL_MAP_KIND: &str = "pixel_map";
const RESULT_KIND: &str = "anomaly_result";

/// Exports a map as a single-tensor RADF container.
pub fn write_pixel_map<W: Write>(map: &ScoreMap, sink: W) -> Result<u64> {
    write_container(
        PACK_MAGIC,
        &MapMeta {
            kind: PIXEL_MAP_KIND.into(),
        },
        &[TensorRef::f32(
            "pixel_map",
            vec![map.height, map.width],
            &map.data,
        )],
        sink,
    )
}

pub fn read_pixel_map<R: Read>(source: R) -> Result<ScoreMap> {
    let (meta, mut tensors): (MapMeta, _) = read_container(PACK_MAGIC, source)?;
    if meta.kind != PIXEL_MAP_KIND {
        return Err(Error::Header(format!(
            "expected a pixel_map, found {:?}",
            meta.kind
        )));
    }
    map_from_tensor(take_tensor(&mut tensors, "pixel_map")?)
}

fn map_from_tensor(t: crate::feature_io::container::Tensor) -> Result<ScoreMap> {
    if t.shape.len() != 2 {
        return Err(Error::Header(format!("tensor {} is not 2-D", t.name)));
    }
    let (h, w) = (t.shape[0], t.shape[1]);
    ScoreMap::new(h, w, t.into_f32()?)
}

#[derive(Serialize, Deserialize)]
struct ResultMeta {
    kind: String,
    image_id: String,
    category: String,
    image_score: f64,
    layer_ids: Vec<u32>,
}

/// Writes a full result (all grids, pixel map and provenance) as RADF.
pub fn write_result<W: Write>(result: &AnomalyResult, sink: W) -> Result<u64> {
    let meta = ResultMeta {
        kind: RESULT_KIND.into(),
        image_id: result.image_id.clone(),
        category: result.category.clone(),
        image_score: result.image_score,
        layer_ids: result.layer_ids.clone(),
    };
    let topk: Vec<u32> = result.topk_images.iter().map(|&i| i as u32).collect();
    let g = &result.fused_grid;
    let mut tensors = vec![
        TensorRef::f32("fused", vec![g.height, g.width], &g.data),
        TensorRef::f32(
            "pixel_map",
            vec![result.pixel_map.height, result.pixel_map.width],
            &result.pixel_map.data,
        ),
        TensorRef::u32("topk", vec![topk.len()], &topk),
    ];
    for ((id, grid), nn) in result
        .layer_ids
        .iter()
        .zip(&result.layer_grids)
        .zip(&result.nn_ids)
    {
        tensors.push(TensorRef::f32(
            format!("layer.{id}"),
            vec![grid.height, grid.width],
            &grid.data,
        ));
        tensors.push(TensorRef::u32(
            format!("nn.{id}"),
            vec![grid.height, grid.width],
            nn,
        ));
    }
    write_container(PACK_MAGIC, &meta, &tensors, sink)
}

pub fn read_result<R: Read>(source: R) -> Result<AnomalyResult> {
    let (meta, mut tensors): (ResultMeta, _) = read_container(PACK_MAGIC, source)?;
    if meta.kind != RESULT_KIND {
        return Err(Error::Header(format!(
            "expected an anomaly_result, found {:?}",
            meta.kind
        )));
    }
    let fused_grid = map_from_tensor(take_tensor(&mut tensors, "fused")?)?;
    let pixel_map = map_from_tensor(take_tensor(&mut tensors, "pixel_map")?)?;
    let topk_images = take_tensor(&mut tensors, "topk")?
        .into_u32()?
        .into_iter()
        .map(|i| i as usize)
        .collect();
    let mut layer_grids = Vec::new();
    let mut nn_ids = Vec::new();
    for id in &meta.layer_ids {
        layer_grids.push(map_from_tensor(take_tensor(
            &mut tensors,
            &format!("layer.{id}"),
        )?)?);
        nn_ids.push(take_tensor(&mut tensors, &format!("nn.{id}"))?.into_u32()?);
    }
    Ok(AnomalyResult {
        image_id: meta.image_id,
        category: meta.category,
        layer_ids: meta.layer_ids,
        layer_grids,
        fused_grid,
        pixel_map,
        image_score: meta.image_score,
        topk_images,
        nn_ids,
    })
}
