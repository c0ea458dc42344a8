//! Seeded two-Gaussian feature datasets for tests, examples and smoke runs.
//!
//! Every feature value of a normal image is drawn from N(0, 1); every value of
//! an anomalous image from N(shift, 1). Anomalies are therefore global
//! distribution shifts that touch every patch of the image.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::FeatureTensor;
use crate::tensorio::{write_feature_file, DatasetManifest, Label, ManifestEntry, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub channels: usize,
    pub grid: (usize, usize),
    pub train: usize,
    pub test_normal: usize,
    /// Anomalous entries, all placed in the test split.
    pub anomalous: usize,
    pub shift: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            channels: 32,
            grid: (8, 8),
            train: 200,
            test_normal: 95,
            anomalous: 20,
            shift: 5.0,
            seed: 0,
        }
    }
}

pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub tensors: Vec<FeatureTensor>,
}

impl SyntheticDataset {
    pub fn tensor(&self, id: &str) -> Option<&FeatureTensor> {
        let idx = self.manifest.entries.iter().position(|e| e.id == id)?;
        Some(&self.tensors[idx])
    }

    /// Tensors for `ids`, in order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<FeatureTensor>> {
        ids.iter()
            .map(|id| {
                self.tensor(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect()
    }
}

pub fn gaussian_tensor(
    channels: usize,
    grid: (usize, usize),
    mean: f32,
    rng: &mut ChaCha8Rng,
) -> FeatureTensor {
    let dist = Normal::new(mean, 1.0).expect("unit variance");
    let n = channels * grid.0 * grid.1;
    let data: Vec<f32> = (0..n).map(|_| dist.sample(rng)).collect();
    FeatureTensor::new(data, channels, grid.0, grid.1).expect("consistent dims")
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups = [
        ("train", spec.train, Label::Normal, Split::Train, 0.0),
        ("normal", spec.test_normal, Label::Normal, Split::Test, 0.0),
        ("anomaly", spec.anomalous, Label::Anomalous, Split::Test, spec.shift),
    ];
    let mut entries = Vec::new();
    let mut tensors = Vec::new();
    for (prefix, count, label, split, mean) in groups {
        for i in 0..count {
            let id = format!("{prefix}-{i:04}");
            entries.push(ManifestEntry {
                feature_path: format!("features/{id}.vadf"),
                image_path: None,
                label,
                anomaly_class: label.is_anomalous().then(|| "global-shift".to_string()),
                split,
                id,
            });
            tensors.push(gaussian_tensor(spec.channels, spec.grid, mean, &mut rng));
        }
    }
    Ok(SyntheticDataset {
        manifest: DatasetManifest::new(spec.name.clone(), entries)?,
        tensors,
    })
}

/// Writes `manifest.json` and one feature file per entry under `dir`.
pub fn write_dataset(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let data = generate(spec)?;
    let features = dir.join("features");
    fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
    for (entry, tensor) in data.manifest.entries.iter().zip(&data.tensors) {
        write_feature_file(tensor, dir.join(&entry.feature_path))?;
    }
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, data.manifest.to_json()?).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(data.manifest.with_root(dir))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let spec = SyntheticSpec {
            train: 4,
            test_normal: 3,
            anomalous: 2,
            channels: 2,
            grid: (2, 2),
            ..Default::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.tensors, b.tensors);
        let c = a.manifest.counts();
        assert_eq!((c.train_normal, c.test_normal, c.test_anomalous), (4, 3, 2));
        let anomaly_mean: f32 = a.tensor("anomaly-0000").unwrap().data().iter().sum::<f32>() / 8.0;
        assert!(anomaly_mean > 3.0);
    }
}
