//! Engine configuration: a flat JSON object of dotted keys.
//!
//! Values are resolved with the precedence `--set key=value` flag >
//! `VAD_*` environment variable > config file > built-in default. The
//! environment variable for a key is `VAD_` followed by the key upper-cased
//! with `.` replaced by `__`, e.g. `padim.epsilon` → `VAD_PADIM__EPSILON`.
//! Flag and environment values are parsed as JSON when possible and taken as
//! plain strings otherwise.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::detector::DetectorKind;
use crate::error::{Error, Result};
use crate::eval::{ContaminationPolicy, Setting};
use crate::maps::{PostChain, Reduction};
use crate::padim::PadimConfig;
use crate::patchcore::PatchCoreConfig;
use crate::profile::ProfileOptions;

pub const ENV_PREFIX: &str = "VAD_";

/// One documented configuration key.
pub struct KeySpec {
    pub key: &'static str,
    pub default: fn() -> Value,
    pub help: &'static str,
}

macro_rules! keys {
    ($( $key:literal => $default:tt, $help:literal; )*) => {
        pub const KEYS: &[KeySpec] = &[
            $( KeySpec { key: $key, default: || json!($default), help: $help }, )*
        ];
    };
}

keys! {
    "detector" => "padim", "detector to fit or expect: padim | patchcore";
    "setting" => "full", "evaluation setting: full | pos5 | pos5_contaminated";
    "seeds" => [0, 1, 2, 3, 4], "split seeds; one split file per seed";
    "threads" => 0, "worker threads for fitting and evaluation (0 = all cores)";
    "paths.manifest" => null, "dataset manifest JSON";
    "paths.feature_root" => null, "directory feature paths resolve against (default: manifest directory)";
    "paths.model_out" => "model.vadm", "model artifact written by fit";
    "paths.report_out" => "report.json", "report written by eval and profile";
    "paths.split_dir" => "splits", "directory split files are written to";
    "paths.overlay_dir" => "overlays", "directory overlay PNGs are written to";
    "split.contamination_policy" => "cap", "when contamination cannot reach 5 %: cap | strict";
    "padim.d" => null, "channel subset size (null = min(100, C))";
    "padim.epsilon" => 0.01, "covariance regularizer added to the diagonal";
    "padim.seed" => 0, "seed for the random channel subset";
    "padim.smoothing_sigma" => 4.0, "PaDiM map smoothing sigma at 256 px input";
    "patchcore.coreset_fraction" => 0.1, "fraction of bank rows kept by k-center selection";
    "patchcore.seed" => 0, "seed for the first coreset row and the projection";
    "patchcore.aggregation_kernel" => 3, "odd neighbourhood size for patch averaging";
    "patchcore.reweight" => true, "scale the image score by the neighbourhood softmax weight";
    "patchcore.reweight_neighbors" => 9, "neighbourhood size b used by reweighting";
    "patchcore.projection_dim" => null, "random projection width used during coreset selection";
    "maps.input_height" => 256, "input image height the maps are upsampled to";
    "maps.input_width" => 256, "input image width the maps are upsampled to";
    "maps.sigma" => 4.0, "PatchCore map smoothing sigma at 256 px input";
    "maps.reduction" => "max", "map-to-image-score reduction: max | mean-top-p";
    "maps.top_p" => 0.01, "share of pixels averaged by mean-top-p";
    "profile.warmup" => 3, "untimed warmup runs";
    "profile.runs" => 30, "timed runs (>= 30)";
    "profile.host_descriptor" => "", "free-text host description copied into the profile report";
    "profile.multithreaded" => false, "profile with all threads instead of one";
    "backbone.model" => null, "interchange (ONNX) backbone model file";
    "backbone.layers" => [], "ordered names of the tapped backbone outputs";
    "backbone.input_size" => 256, "square input resolution fed to the backbone";
}

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

/// Resolved flat key → value map.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatConfig(BTreeMap<String, Value>);

fn parse_loose(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "__").to_uppercase())
}

impl FlatConfig {
    pub fn defaults() -> Self {
        Self(KEYS.iter().map(|k| (k.key.to_string(), (k.default)())).collect())
    }

    fn set(&mut self, key: &str, value: Value) -> Result<()> {
        if key_spec(key).is_none() {
            return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
        }
        self.0.insert(key.to_string(), value);
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let obj: Map<String, Value> = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        for (k, v) in obj {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn merge_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let lookup: BTreeMap<String, &str> = KEYS.iter().map(|k| (env_var_name(k.key), k.key)).collect();
        for (name, raw) in vars {
            if let Some(key) = lookup.get(&name) {
                self.set(key, parse_loose(&raw))?;
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn merge_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), parse_loose(v.trim()))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    fn nested(&self) -> Value {
        let mut root = Map::new();
        for (k, v) in &self.0 {
            let mut node = &mut root;
            let mut parts = k.split('.').peekable();
            while let Some(p) = parts.next() {
                if parts.peek().is_none() {
                    node.insert(p.to_string(), v.clone());
                } else {
                    node = node
                        .entry(p.to_string())
                        .or_insert_with(|| Value::Object(Map::new()))
                        .as_object_mut()
                        .expect("prefix keys are objects");
                }
            }
        }
        Value::Object(root)
    }

    pub fn resolve(&self) -> Result<EngineConfig> {
        let raw: RawConfig = serde_json::from_value(self.nested())
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        raw.into_config(self)
    }
}

#[derive(Deserialize)]
struct RawPaths {
    manifest: Option<PathBuf>,
    feature_root: Option<PathBuf>,
    model_out: PathBuf,
    report_out: PathBuf,
    split_dir: PathBuf,
    overlay_dir: PathBuf,
}

#[derive(Deserialize)]
struct RawSplit {
    contamination_policy: ContaminationPolicy,
}

#[derive(Deserialize)]
struct RawMaps {
    input_height: usize,
    input_width: usize,
    sigma: f32,
    reduction: String,
    top_p: f32,
}

#[derive(Deserialize)]
struct RawProfile {
    warmup: usize,
    runs: usize,
    host_descriptor: String,
    multithreaded: bool,
}

#[derive(Deserialize, Clone, Debug, PartialEq)]
pub struct BackboneSettings {
    pub model: Option<PathBuf>,
    pub layers: Vec<String>,
    pub input_size: usize,
}

#[derive(Deserialize)]
struct RawConfig {
    detector: String,
    setting: String,
    seeds: Vec<u64>,
    threads: usize,
    paths: RawPaths,
    split: RawSplit,
    padim: PadimConfig,
    patchcore: PatchCoreConfig,
    maps: RawMaps,
    profile: RawProfile,
    backbone: BackboneSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnginePaths {
    pub manifest: Option<PathBuf>,
    pub feature_root: Option<PathBuf>,
    pub model_out: PathBuf,
    pub report_out: PathBuf,
    pub split_dir: PathBuf,
    pub overlay_dir: PathBuf,
}

/// Fully resolved, typed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub detector: DetectorKind,
    pub setting: Setting,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub paths: EnginePaths,
    pub contamination_policy: ContaminationPolicy,
    pub padim: PadimConfig,
    pub patchcore: PatchCoreConfig,
    pub input_resolution: (usize, usize),
    pub map_sigma: f32,
    pub reduction: Reduction,
    pub profile_warmup: usize,
    pub profile_runs: usize,
    pub host_descriptor: String,
    pub profile_multithreaded: bool,
    pub backbone: BackboneSettings,
    flat: FlatConfig,
}

impl RawConfig {
    fn into_config(self, flat: &FlatConfig) -> Result<EngineConfig> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        let reduction = match self.maps.reduction.as_str() {
            "max" => Reduction::Max,
            "mean-top-p" => Reduction::MeanTopP { p: self.maps.top_p },
            other => return Err(Error::InvalidConfig(format!("unknown reduction {other:?}"))),
        };
        if self.maps.input_height == 0 || self.maps.input_width == 0 {
            return Err(Error::InvalidConfig("input resolution must be >= 1".into()));
        }
        Ok(EngineConfig {
            detector: self.detector.parse()?,
            setting: self.setting.parse()?,
            seeds: self.seeds,
            threads: self.threads,
            paths: EnginePaths {
                manifest: self.paths.manifest,
                feature_root: self.paths.feature_root,
                model_out: self.paths.model_out,
                report_out: self.paths.report_out,
                split_dir: self.paths.split_dir,
                overlay_dir: self.paths.overlay_dir,
            },
            contamination_policy: self.split.contamination_policy,
            padim: self.padim,
            patchcore: self.patchcore,
            input_resolution: (self.maps.input_height, self.maps.input_width),
            map_sigma: self.maps.sigma,
            reduction,
            profile_warmup: self.profile.warmup,
            profile_runs: self.profile.runs,
            host_descriptor: self.profile.host_descriptor,
            profile_multithreaded: self.profile.multithreaded,
            backbone: self.backbone,
            flat: flat.clone(),
        })
    }
}

impl EngineConfig {
    /// Defaults, then `file`, then `VAD_*` variables from `env`, then `overrides`.
    pub fn load<S: AsRef<str>>(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[S],
    ) -> Result<Self> {
        let mut flat = FlatConfig::defaults();
        if let Some(f) = file {
            flat.merge_file(f)?;
        }
        flat.merge_env(env)?;
        flat.merge_overrides(overrides)?;
        flat.resolve()
    }

    pub fn post_chain(&self, kind: DetectorKind) -> PostChain {
        let sigma = match kind {
            DetectorKind::Padim => self.padim.smoothing_sigma,
            DetectorKind::PatchCore => self.map_sigma,
        };
        PostChain {
            sigma,
            reduction: self.reduction,
        }
    }

    pub fn profile_options(&self, kind: DetectorKind) -> ProfileOptions {
        ProfileOptions {
            warmup: self.profile_warmup,
            runs: self.profile_runs,
            host_descriptor: self.host_descriptor.clone(),
            multithreaded: self.profile_multithreaded,
            post: self.post_chain(kind),
        }
    }

    /// Every non-path key with its resolved value; stored in reports.
    pub fn echo(&self) -> Map<String, Value> {
        self.flat
            .0
            .iter()
            .filter(|(k, _)| !k.starts_with("paths.") && !k.starts_with("profile.") && *k != "threads")
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn flat(&self) -> &FlatConfig {
        &self.flat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = FlatConfig::defaults().resolve().unwrap();
        assert_eq!(cfg.detector, DetectorKind::Padim);
        assert_eq!(cfg.seeds.len(), 5);
        assert_eq!(cfg.patchcore, PatchCoreConfig::default());
        assert_eq!(cfg.padim, PadimConfig::default());
        assert_eq!(cfg.input_resolution, (256, 256));
    }

    #[test]
    fn precedence_flag_over_env_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        fs::write(&file, r#"{"padim.epsilon": 0.5, "patchcore.seed": 3, "detector": "patchcore"}"#).unwrap();
        let env = vec![
            ("VAD_PADIM__EPSILON".to_string(), "0.25".to_string()),
            ("VAD_PATCHCORE__SEED".to_string(), "4".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let cfg = EngineConfig::load(Some(&file), env, &["padim.epsilon=0.125"]).unwrap();
        assert_eq!(cfg.padim.epsilon, 0.125);
        assert_eq!(cfg.patchcore.seed, 4);
        assert_eq!(cfg.detector, DetectorKind::PatchCore);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(EngineConfig::load(None, vec![], &["nope=1"]).is_err());
        assert!(EngineConfig::load(None, vec![], &["setting=pos7"]).is_err());
        assert!(EngineConfig::load(None, vec![], &["seeds=[]"]).is_err());
        assert!(EngineConfig::load(None, vec![], &["detector"]).is_err());
    }

    #[test]
    fn env_names() {
        assert_eq!(env_var_name("patchcore.coreset_fraction"), "VAD_PATCHCORE__CORESET_FRACTION");
    }

    #[test]
    fn loose_string_values() {
        let cfg = EngineConfig::load(None, vec![], &["paths.manifest=data/m.json", "maps.reduction=mean-top-p"]).unwrap();
        assert_eq!(cfg.paths.manifest.as_deref(), Some(Path::new("data/m.json")));
        assert_eq!(cfg.reduction, Reduction::MeanTopP { p: 0.01 });
    }
}
