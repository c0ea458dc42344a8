//! Optional in-process backbone: runs an ONNX model and returns its tapped
//! layer outputs as a [`LayerFeatureSet`].

use std::fs;
use std::path::Path;

use image::imageops::FilterType;
use image::DynamicImage;
use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::{align_and_concat, LayerFeatureSet, MAX_LAYERS};
use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;

fn backbone_err(e: impl std::fmt::Display) -> Error {
    Error::Backbone(e.to_string())
}

/// Per-channel `(x / 255 − mean) / std` normalization of RGB input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarLayer {
    pub name: String,
    /// `[C, H, W]` of the raw layer output.
    pub shape: [usize; 3],
}

/// Metadata written next to an exported backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub backbone: String,
    /// `[height, width]` the model expects.
    pub input_size: [usize; 2],
    pub preprocessing: Preprocessing,
    pub layers: Vec<SidecarLayer>,
}

impl Sidecar {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that `set` has the declared layer count and shapes.
    pub fn check(&self, set: &LayerFeatureSet) -> Result<()> {
        if set.layers.len() != self.layers.len() {
            return Err(Error::Backbone(format!(
                "sidecar declares {} layers, got {}",
                self.layers.len(),
                set.layers.len()
            )));
        }
        for (decl, got) in self.layers.iter().zip(&set.layers) {
            if decl.shape != got.dims() {
                return Err(Error::Backbone(format!(
                    "layer {}: sidecar shape {:?}, output {:?}",
                    decl.name,
                    decl.shape,
                    got.dims()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Output names to tap, in order. Empty keeps the model's declared outputs.
    pub layers: Vec<String>,
    pub input_size: (usize, usize),
    pub preprocessing: Preprocessing,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            layers: Vec::new(),
            input_size: (256, 256),
            preprocessing: Preprocessing::default(),
        }
    }
}

impl BackboneConfig {
    pub fn from_sidecar(s: &Sidecar) -> Self {
        Self {
            layers: s.layers.iter().map(|l| l.name.clone()).collect(),
            input_size: (s.input_size[0], s.input_size[1]),
            preprocessing: s.preprocessing,
        }
    }
}

/// A loaded, optimized backbone. Immutable after load; `extract` may be
/// called concurrently.
pub struct Backbone {
    plan: TypedRunnableModel<TypedModel>,
    config: BackboneConfig,
}

impl Backbone {
    pub fn load(model_path: impl AsRef<Path>, config: BackboneConfig) -> Result<Self> {
        let path = model_path.as_ref();
        if !path.is_file() {
            return Err(Error::Backbone(format!("model file {} not found", path.display())));
        }
        let (h, w) = config.input_size;
        if h == 0 || w == 0 {
            return Err(Error::InvalidConfig("backbone input size must be >= 1".into()));
        }
        let mut model = tract_onnx::onnx().model_for_path(path).map_err(backbone_err)?;
        let declared = model.output_outlets().map_err(backbone_err)?.len();
        if !config.layers.is_empty() {
            if declared != config.layers.len() {
                return Err(Error::Backbone(format!(
                    "model declares {declared} outputs, configuration taps {}",
                    config.layers.len()
                )));
            }
            model = model.with_output_names(&config.layers).map_err(backbone_err)?;
        }
        if declared == 0 || declared > MAX_LAYERS {
            return Err(Error::Backbone(format!("model declares {declared} outputs")));
        }
        let plan = model
            .with_input_fact(0, f32::fact([1, 3, h, w]).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(backbone_err)?;
        Ok(Self { plan, config })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Raw per-layer outputs for one RGB image, in tap order.
    pub fn extract(&self, image: &DynamicImage) -> Result<LayerFeatureSet> {
        let channels = image.color().channel_count();
        if channels != 3 {
            return Err(Error::Backbone(format!(
                "expected a 3-channel RGB image, got {channels} channels ({:?})",
                image.color()
            )));
        }
        let source = (image.height() as usize, image.width() as usize);
        let (h, w) = self.config.input_size;
        let mut rgb = image.to_rgb8();
        if (rgb.height() as usize, rgb.width() as usize) != (h, w) {
            rgb = image::imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle);
        }
        let p = &self.config.preprocessing;
        let input = tract_ndarray::Array4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| {
            (rgb.get_pixel(x as u32, y as u32)[c] as f32 / 255.0 - p.mean[c]) / p.std[c]
        });
        let outputs = self
            .plan
            .run(tvec!(Tensor::from(input).into()))
            .map_err(backbone_err)?;
        let layers = outputs
            .iter()
            .enumerate()
            .map(|(i, out)| {
                let view = out.to_array_view::<f32>().map_err(backbone_err)?;
                let (c, lh, lw) = match *view.shape() {
                    [1, c, lh, lw] | [c, lh, lw] => (c, lh, lw),
                    ref s => {
                        return Err(Error::Backbone(format!("output {i} has shape {s:?}, expected [1, C, H, W]")))
                    }
                };
                FeatureTensor::new(view.iter().copied().collect(), c, lh, lw)
            })
            .collect::<Result<Vec<_>>>()?;
        LayerFeatureSet::new(layers, source)
    }

    /// [`Backbone::extract`] followed by [`align_and_concat`].
    pub fn extract_aligned(&self, image: &DynamicImage) -> Result<FeatureTensor> {
        align_and_concat(&self.extract(image)?)
    }
}
