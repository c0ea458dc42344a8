//! Seeded construction of the three evaluation settings.
//!
//! * `full`: the manifest's own train/test splits.
//! * `pos5`: every normal test entry (`n`) plus `a = max(1, ⌊5n/95⌋)`
//!   anomalies drawn from the test split, so anomalies are 5 % of the total.
//! * `pos5_contaminated`: the `pos5` test set, and `c = max(1, ⌊5·n_train/95⌋)`
//!   further anomalies (disjoint from the test draw) added to training with
//!   their labels hidden. When fewer remain, [`ContaminationPolicy::Cap`] takes
//!   all of them and records the realised rate.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{DatasetManifest, Label, ManifestEntry, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Full,
    Pos5,
    Pos5Contaminated,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::Full => "full",
            Setting::Pos5 => "pos5",
            Setting::Pos5Contaminated => "pos5_contaminated",
        }
    }

    pub const ALL: [Setting; 3] = [Setting::Full, Setting::Pos5, Setting::Pos5Contaminated];
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown setting {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContaminationPolicy {
    /// Take every remaining anomaly when the 5 % target cannot be met.
    #[default]
    Cap,
    /// Fail with `InsufficientAnomalies` instead.
    Strict,
}

/// `max(1, ⌊count·5/95⌋)`: how many anomalies make up 5 % of `count + a`.
pub fn five_percent_of_total(count: usize) -> usize {
    (count * 5 / 95).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dataset_name: String,
    pub setting: Setting,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Anomalous ids mixed into `train_ids`; empty unless contaminated.
    pub contaminant_ids: Vec<String>,
    /// Contaminant count the 5 % rule asked for, before any cap.
    pub requested_contaminants: Option<usize>,
    /// `contaminants / train_ids.len()` for the contaminated setting.
    pub realized_contamination_rate: Option<f64>,
}

impl SplitSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SplitSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let train: HashSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        if let Some(id) = self.test_ids.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::InvalidConfig(format!("id {id:?} is in both train and test")));
        }
        if self.setting != Setting::Pos5Contaminated && !self.contaminant_ids.is_empty() {
            return Err(Error::InvalidConfig(
                "contaminants are only allowed in pos5_contaminated".into(),
            ));
        }
        if let Some(id) = self.contaminant_ids.iter().find(|id| !train.contains(id.as_str())) {
            return Err(Error::InvalidConfig(format!("contaminant {id:?} is not in train_ids")));
        }
        Ok(())
    }
}

fn ids<'a>(entries: impl Iterator<Item = &'a ManifestEntry>) -> Vec<String> {
    entries.map(|e| e.id.clone()).collect()
}

/// Draws `k` of `pool` uniformly, returned in pool order.
fn draw<'a>(pool: &[&'a ManifestEntry], k: usize, rng: &mut ChaCha8Rng) -> Vec<&'a ManifestEntry> {
    let mut picked = rand::seq::index::sample(rng, pool.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| pool[i]).collect()
}

pub fn build_setting(
    manifest: &DatasetManifest,
    setting: Setting,
    seed: u64,
    policy: ContaminationPolicy,
) -> Result<SplitSpec> {
    let entries = &manifest.entries;
    let is = |e: &&ManifestEntry, split: Split, label: Label| e.split == split && e.label == label;
    let test_normal: Vec<&ManifestEntry> =
        entries.iter().filter(|e| is(e, Split::Test, Label::Normal)).collect();
    let anomalous_total = entries.iter().filter(|e| e.label.is_anomalous()).count();
    if test_normal.is_empty() || anomalous_total == 0 {
        return Err(Error::Manifest(
            "need at least one normal test entry and one anomalous entry".into(),
        ));
    }
    let train_normal: Vec<&ManifestEntry> =
        entries.iter().filter(|e| is(e, Split::Train, Label::Normal)).collect();
    if entries.iter().any(|e| is(&e, Split::Train, Label::Anomalous)) {
        return Err(Error::Manifest("train split must contain only normal entries".into()));
    }

    let mut spec = SplitSpec {
        dataset_name: manifest.dataset_name.clone(),
        setting,
        seed,
        train_ids: ids(train_normal.iter().copied()),
        test_ids: Vec::new(),
        contaminant_ids: Vec::new(),
        requested_contaminants: None,
        realized_contamination_rate: None,
    };
    if setting == Setting::Full {
        spec.test_ids = ids(entries.iter().filter(|e| e.split == Split::Test));
        return Ok(spec);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let test_pool: Vec<&ManifestEntry> =
        entries.iter().filter(|e| is(e, Split::Test, Label::Anomalous)).collect();
    let a = five_percent_of_total(test_normal.len());
    if test_pool.len() < a {
        return Err(Error::InsufficientAnomalies {
            needed: a,
            available: test_pool.len(),
        });
    }
    let test_anomalies: HashSet<&str> =
        draw(&test_pool, a, &mut rng).into_iter().map(|e| e.id.as_str()).collect();
    spec.test_ids = ids(entries.iter().filter(|e| {
        is(e, Split::Test, Label::Normal) || test_anomalies.contains(e.id.as_str())
    }));
    if setting == Setting::Pos5 {
        return Ok(spec);
    }

    let remaining: Vec<&ManifestEntry> = entries
        .iter()
        .filter(|e| e.label.is_anomalous() && !test_anomalies.contains(e.id.as_str()))
        .collect();
    let requested = five_percent_of_total(train_normal.len());
    let c = if remaining.len() >= requested {
        requested
    } else if policy == ContaminationPolicy::Strict || remaining.is_empty() {
        return Err(Error::InsufficientAnomalies {
            needed: a + requested,
            available: anomalous_total,
        });
    } else {
        remaining.len()
    };
    let contaminants: HashSet<&str> =
        draw(&remaining, c, &mut rng).into_iter().map(|e| e.id.as_str()).collect();
    spec.contaminant_ids = ids(entries.iter().filter(|e| contaminants.contains(e.id.as_str())));
    spec.train_ids = ids(entries.iter().filter(|e| {
        is(e, Split::Train, Label::Normal) || contaminants.contains(e.id.as_str())
    }));
    spec.requested_contaminants = Some(requested);
    spec.realized_contamination_rate = Some(c as f64 / spec.train_ids.len() as f64);
    Ok(spec)
}
