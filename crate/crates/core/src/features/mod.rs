//! Multi-layer feature alignment and local patch aggregation.
//!
//! Backbones emit several intermediate maps at different strides. They are
//! brought onto the grid of the first (finest) layer with [`resize`] bilinear
//! sampling and stacked along channels.

#[cfg(feature = "onnx")]
mod backbone;
pub mod resize;

#[cfg(feature = "onnx")]
pub use backbone::{Backbone, BackboneConfig, Preprocessing, Sidecar, SidecarLayer};

use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;

pub const MAX_LAYERS: usize = 8;

/// Raw per-layer outputs of a backbone for one image, in tap order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatureSet {
    pub layers: Vec<FeatureTensor>,
    pub source_resolution: (usize, usize),
}

impl LayerFeatureSet {
    pub fn new(layers: Vec<FeatureTensor>, source_resolution: (usize, usize)) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput("layer list"));
        }
        if layers.len() > MAX_LAYERS {
            return Err(Error::InvalidConfig(format!(
                "{} layers exceeds the maximum of {MAX_LAYERS}",
                layers.len()
            )));
        }
        Ok(Self {
            layers,
            source_resolution,
        })
    }
}

/// Resizes every layer to the first layer's grid and concatenates channels.
pub fn align_and_concat(set: &LayerFeatureSet) -> Result<FeatureTensor> {
    let first = set.layers.first().ok_or(Error::EmptyInput("layer list"))?;
    let (h, w) = (first.height(), first.width());
    let hw = h * w;
    let total: usize = set.layers.iter().map(FeatureTensor::channels).sum();

    let mut data = vec![0.0f32; total * hw];
    let mut boundaries = Vec::with_capacity(set.layers.len());
    let mut offset = 0usize;
    for layer in &set.layers {
        boundaries.push(u32::try_from(offset).map_err(|_| Error::DimOverflow(offset))?);
        for c in 0..layer.channels() {
            let dst = &mut data[(offset + c) * hw..(offset + c + 1) * hw];
            resize::resize_plane(layer.plane(c), layer.height(), layer.width(), dst, h, w);
        }
        offset += layer.channels();
    }
    let (sh, sw) = set.source_resolution;
    Ok(FeatureTensor::with_layers(data, total, h, w, boundaries)?.with_source_resolution(sh, sw))
}

/// Replaces every location by the mean of its `kernel × kernel` neighbourhood
/// (stride 1, edge-replicating padding).
pub fn neighborhood_aggregate(t: &FeatureTensor, kernel: usize) -> Result<FeatureTensor> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "aggregation kernel must be odd and >= 1, got {kernel}"
        )));
    }
    if kernel == 1 {
        return Ok(t.clone());
    }
    let (h, w) = (t.height(), t.width());
    let r = (kernel / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let norm = 1.0 / kernel as f64;

    let mut out = vec![0.0f32; t.data().len()];
    let mut rows = vec![0.0f64; h * w];
    for c in 0..t.channels() {
        let plane = t.plane(c);
        // horizontal pass
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (-r..=r)
                    .map(|d| plane[y * w + clamp(x as isize + d, w)] as f64)
                    .sum();
                rows[y * w + x] = s * norm;
            }
        }
        // vertical pass
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (-r..=r)
                    .map(|d| rows[clamp(y as isize + d, h) * w + x])
                    .sum();
                dst[y * w + x] = (s * norm) as f32;
            }
        }
    }
    let (sh, sw) = t.source_resolution();
    Ok(FeatureTensor::with_layers(
        out,
        t.channels(),
        h,
        w,
        t.layer_boundaries().to_vec(),
    )?
    .with_source_resolution(sh, sw))
}
