//! The detector interface shared by every memory-bank model.
//!
//! A detector turns one [`FeatureTensor`] into a raw anomaly map on the feature
//! grid and, optionally, its own image-level score. Post-processing (upsampling,
//! smoothing, reduction) is the job of [`crate::maps`].

use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arena::ScoringArena;
use crate::error::{Error, Result};
use crate::maps::RawAnomalyMap;
use crate::padim::PadimModel;
use crate::patchcore::PatchCoreModel;
use crate::tensor::FeatureTensor;
use crate::tensorio::{DatasetManifest, ModelArtifact};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Padim,
    #[serde(rename = "patchcore")]
    PatchCore,
}

impl DetectorKind {
    pub fn tag(self) -> u8 {
        match self {
            DetectorKind::Padim => 0,
            DetectorKind::PatchCore => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DetectorKind::Padim),
            1 => Ok(DetectorKind::PatchCore),
            other => Err(Error::UnknownDetector(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Padim => "padim",
            DetectorKind::PatchCore => "patchcore",
        }
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "padim" => Ok(DetectorKind::Padim),
            "patchcore" => Ok(DetectorKind::PatchCore),
            other => Err(Error::InvalidConfig(format!("unknown detector {other:?}"))),
        }
    }
}

/// Output of [`Detector::score_raw`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawScore {
    pub map: RawAnomalyMap,
    /// Set when the detector defines its own image score (PatchCore);
    /// `None` means "reduce the post-processed map".
    pub image_score: Option<f32>,
}

pub trait Detector: Send + Sync {
    fn kind(&self) -> DetectorKind;

    /// Feature dims `[C, H, W]` the detector was fitted on.
    fn feature_dims(&self) -> [usize; 3];

    fn score_raw(&self, tensor: &FeatureTensor, arena: &ScoringArena) -> Result<RawScore>;

    fn to_artifact(&self) -> Result<ModelArtifact>;
}

/// Random-access provider of training or test tensors.
///
/// Fitting may read the source more than once; implementations must return the
/// same tensor for the same index every time.
pub trait TensorSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load(&self, index: usize) -> Result<Cow<'_, FeatureTensor>>;
}

impl TensorSource for [FeatureTensor] {
    fn len(&self) -> usize {
        <[FeatureTensor]>::len(self)
    }

    fn load(&self, index: usize) -> Result<Cow<'_, FeatureTensor>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

impl TensorSource for Vec<FeatureTensor> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<Cow<'_, FeatureTensor>> {
        Ok(Cow::Borrowed(&self[index]))
    }
}

/// Feature files named by manifest ids, loaded lazily in id order.
pub struct ManifestSource<'a> {
    manifest: &'a DatasetManifest,
    ids: &'a [String],
    source_resolution: Option<(usize, usize)>,
}

impl<'a> ManifestSource<'a> {
    pub fn new(manifest: &'a DatasetManifest, ids: &'a [String]) -> Self {
        Self {
            manifest,
            ids,
            source_resolution: None,
        }
    }

    pub fn with_source_resolution(mut self, resolution: (usize, usize)) -> Self {
        self.source_resolution = Some(resolution);
        self
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }
}

impl TensorSource for ManifestSource<'_> {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn load(&self, index: usize) -> Result<Cow<'_, FeatureTensor>> {
        let mut t = self.manifest.load_features(&self.ids[index])?;
        if let Some((h, w)) = self.source_resolution {
            t = t.with_source_resolution(h, w);
        }
        Ok(Cow::Owned(t))
    }
}

/// Any fitted detector, as stored in a model artifact.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Padim(PadimModel),
    PatchCore(PatchCoreModel),
}

impl FittedModel {
    pub fn from_artifact(artifact: &ModelArtifact) -> Result<Self> {
        match artifact.detector {
            DetectorKind::Padim => PadimModel::from_artifact(artifact).map(FittedModel::Padim),
            DetectorKind::PatchCore => {
                PatchCoreModel::from_artifact(artifact).map(FittedModel::PatchCore)
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_artifact(&ModelArtifact::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_artifact()?.write(path)
    }

    fn inner(&self) -> &dyn Detector {
        match self {
            FittedModel::Padim(m) => m,
            FittedModel::PatchCore(m) => m,
        }
    }
}

impl Detector for FittedModel {
    fn kind(&self) -> DetectorKind {
        self.inner().kind()
    }

    fn feature_dims(&self) -> [usize; 3] {
        self.inner().feature_dims()
    }

    fn score_raw(&self, tensor: &FeatureTensor, arena: &ScoringArena) -> Result<RawScore> {
        self.inner().score_raw(tensor, arena)
    }

    fn to_artifact(&self) -> Result<ModelArtifact> {
        self.inner().to_artifact()
    }
}

pub(crate) fn check_consistent(expected: [usize; 3], got: [usize; 3], index: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "tensor {index} has dims {got:?}, expected {expected:?}"
        )))
    }
}
