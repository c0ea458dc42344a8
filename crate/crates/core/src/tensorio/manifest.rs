//! Dataset manifests: JSON lists of labelled feature files.
//!
//! ```json
//! {"dataset_name": "mars",
//!  "entries": [{"id": "t0", "feature_path": "f/t0.vadf", "image_path": null,
//!               "label": "normal", "anomaly_class": null, "split": "train"}]}
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;
use crate::tensorio::read_feature_file;

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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub feature_path: String,
    #[serde(default)]
    pub image_path: Option<String>,
    pub label: Label,
    #[serde(default)]
    pub anomaly_class: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train_normal: usize,
    pub train_anomalous: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split, label: Label) -> usize {
        match (split, label) {
            (Split::Train, Label::Normal) => self.train_normal,
            (Split::Train, Label::Anomalous) => self.train_anomalous,
            (Split::Test, Label::Normal) => self.test_normal,
            (Split::Test, Label::Anomalous) => self.test_anomalous,
        }
    }

    fn bump(&mut self, split: Split, label: Label) {
        let slot = match (split, label) {
            (Split::Train, Label::Normal) => &mut self.train_normal,
            (Split::Train, Label::Anomalous) => &mut self.train_anomalous,
            (Split::Test, Label::Normal) => &mut self.test_normal,
            (Split::Test, Label::Anomalous) => &mut self.test_anomalous,
        };
        *slot += 1;
    }
}

#[derive(Debug, Deserialize)]
struct RawManifest {
    dataset_name: String,
    entries: Vec<ManifestEntry>,
}

/// A validated manifest. Ids are unique; `counts` is derived from the entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    counts: SplitCounts,
    /// Directory relative feature paths are resolved against.
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_name: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        let mut counts = SplitCounts::default();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            counts.bump(e.split, e.label);
        }
        Ok(Self {
            dataset_name: dataset_name.into(),
            entries,
            counts,
            root: PathBuf::from("."),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawManifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        Self::new(raw.dataset_name, raw.entries)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn counts(&self) -> SplitCounts {
        self.counts
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn feature_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.feature_path)
    }

    /// Checks that every entry's feature file exists under the root.
    pub fn check_resolvable(&self) -> Result<()> {
        for e in &self.entries {
            let path = self.feature_path(e);
            if !path.is_file() {
                return Err(Error::MissingFeature {
                    id: e.id.clone(),
                    path,
                });
            }
        }
        Ok(())
    }

    pub fn load_features(&self, id: &str) -> Result<FeatureTensor> {
        let entry = self.entry(id)?;
        let path = self.feature_path(entry);
        if !path.is_file() {
            return Err(Error::MissingFeature {
                id: id.to_string(),
                path,
            });
        }
        read_feature_file(path)
    }
}

/// Reads and validates a manifest. Relative feature paths resolve against the
/// manifest's own directory unless [`DatasetManifest::with_root`] overrides it.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(DatasetManifest::from_json(&text)?.with_root(root))
}
