//! Anomaly-map post-processing and heatmap overlays.
//!
//! The default chain takes a raw map on the feature grid, upsamples it to the
//! input resolution with the same bilinear convention as
//! [`crate::features::resize`], smooths it with a truncated Gaussian and reduces
//! it to one image score.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::detector::RawScore;
use crate::error::{Error, Result};
use crate::features::resize;
use crate::tensor::Grid;

/// Reference input side length for smoothing sigmas.
pub const REFERENCE_RESOLUTION: usize = 256;
/// Blend weight of the heatmap over the grayscale base image.
pub const OVERLAY_ALPHA: f32 = 0.5;
/// Normalised score from which a pixel receives the heatmap.
pub const OVERLAY_LEVEL: f32 = 0.5;

/// Per-location scores on the feature grid; finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAnomalyMap(Grid);

impl RawAnomalyMap {
    pub fn new(values: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "raw anomaly scores must be finite and >= 0, found {bad}"
            )));
        }
        Grid::new(values, height, width).map(Self)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn values(&self) -> &[f32] {
        self.0.values()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    MinMaxPerDataset,
}

/// Scores at input resolution plus the image-level score.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub values: Grid,
    pub image_score: f32,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
#[derive(Default)]
pub enum Reduction {
    #[default]
    Max,
    MeanTopP { p: f32 },
}


pub fn upsample_bilinear(map: &RawAnomalyMap, target: (usize, usize)) -> Grid {
    let (h, w) = map.dims();
    let (th, tw) = target;
    assert!(th >= 1 && tw >= 1, "target dims must be >= 1");
    Grid::new(resize::resize(map.values(), h, w, th, tw), th, tw).expect("dims checked")
}

/// Normalised 1-D Gaussian taps for offsets `−r..=r`, `r = ⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    let sigma = sigma as f64;
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with edge replication; `sigma = 0` is the identity.
pub fn gaussian_smooth(grid: &Grid, sigma: f32) -> Grid {
    assert!(sigma >= 0.0, "sigma must be >= 0");
    if sigma == 0.0 {
        return grid.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (h, w) = grid.dims();
    let src = grid.values();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            horiz[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * src[y * w + clamp(x as isize + i as isize - r, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * horiz[clamp(y as isize + i as isize - r, h) * w + x])
                .sum::<f64>() as f32;
        }
    }
    Grid::new(out, h, w).expect("same dims")
}

pub fn image_score(grid: &Grid, method: Reduction) -> Result<f32> {
    let values = grid.values();
    if values.is_empty() {
        return Err(Error::EmptyInput("score grid"));
    }
    match method {
        Reduction::Max => Ok(grid.max()),
        Reduction::MeanTopP { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidConfig(format!("top-p must be in (0, 1], got {p}")));
            }
            let take = ((p as f64 * values.len() as f64).ceil() as usize).clamp(1, values.len());
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            Ok((sorted[..take].iter().map(|&v| v as f64).sum::<f64>() / take as f64) as f32)
        }
    }
}

/// Upsample → smooth → reduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostChain {
    /// Smoothing sigma at [`REFERENCE_RESOLUTION`]; scaled with the target size.
    pub sigma: f32,
    pub reduction: Reduction,
}

impl Default for PostChain {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            reduction: Reduction::Max,
        }
    }
}

impl PostChain {
    pub fn scaled_sigma(&self, target: (usize, usize)) -> f32 {
        self.sigma * target.0.max(target.1) as f32 / REFERENCE_RESOLUTION as f32
    }

    /// Builds the full-resolution map. A detector-provided image score wins
    /// over the reduction of the smoothed map.
    pub fn apply(&self, raw: &RawScore, target: (usize, usize)) -> Result<AnomalyMap> {
        let up = upsample_bilinear(&raw.map, target);
        let smooth = gaussian_smooth(&up, self.scaled_sigma(target));
        let image_score = match raw.image_score {
            Some(s) => s,
            None => image_score(&smooth, self.reduction)?,
        };
        Ok(AnomalyMap {
            values: smooth,
            image_score,
            normalization: Normalization::None,
        })
    }
}

/// Dataset-level min/max used to normalise maps for display.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub min: f32,
    pub max: f32,
}

impl ScoreRange {
    pub fn of_maps<'a>(maps: impl IntoIterator<Item = &'a AnomalyMap>) -> Option<Self> {
        maps.into_iter().fold(None, |acc, m| {
            let (lo, hi) = (m.values.min(), m.values.max());
            Some(match acc {
                None => ScoreRange { min: lo, max: hi },
                Some(r) => ScoreRange {
                    min: r.min.min(lo),
                    max: r.max.max(hi),
                },
            })
        })
    }

    /// Maps a score into `[0, 1]`; a degenerate range maps everything to 0.
    pub fn normalize(&self, v: f32) -> f32 {
        let span = self.max - self.min;
        if span > 0.0 {
            ((v - self.min) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// The overlay colormap: entry `i` is `(i, 0, 255 − i)`, blue at 0 to red at 255.
pub fn colormap() -> [[u8; 3]; 256] {
    std::array::from_fn(|i| [i as u8, 0, 255 - i as u8])
}

/// Luma (ITU-R BT.601) of an 8-bit RGB pixel.
pub fn luma(p: Rgb<u8>) -> f32 {
    0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32
}

/// Composites `map` over the grayscale version of `image`.
///
/// Each score is normalised with `range`. Pixels at or above
/// [`OVERLAY_LEVEL`] receive the colormap entry `round(255·v)` blended at
/// [`OVERLAY_ALPHA`]; all other pixels keep their gray value.
pub fn overlay_image(map: &AnomalyMap, image: &RgbImage, range: ScoreRange) -> Result<RgbImage> {
    let (h, w) = map.values.dims();
    if (image.height() as usize, image.width() as usize) != (h, w) {
        return Err(Error::DimensionMismatch(format!(
            "map is {h}×{w}, image is {}×{}",
            image.height(),
            image.width()
        )));
    }
    let cmap = colormap();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let gray = luma(*image.get_pixel(x, y));
        let v = range.normalize(map.values.get(y as usize, x as usize));
        if v >= OVERLAY_LEVEL {
            let c = cmap[(v * 255.0).round() as usize];
            Rgb(c.map(|ch| {
                ((1.0 - OVERLAY_ALPHA) * gray + OVERLAY_ALPHA * ch as f32).round() as u8
            }))
        } else {
            let g = gray.round() as u8;
            Rgb([g, g, g])
        }
    }))
}

/// Writes [`overlay_image`] as a PNG. Nothing is written on a dims mismatch.
pub fn render_overlay(
    map: &AnomalyMap,
    image: &RgbImage,
    range: ScoreRange,
    out: impl AsRef<Path>,
) -> Result<()> {
    let out = out.as_ref();
    let composed = overlay_image(map, image, range)?;
    composed
        .save_with_format(out, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", out.display())))
}
