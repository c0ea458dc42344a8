//! Evaluation settings, metrics and reports.

pub mod metrics;
mod split;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use metrics::{accuracy_at, auroc, average_precision, max_f1};
pub use split::{build_setting, five_percent_of_total, ContaminationPolicy, Setting, SplitSpec};

use crate::arena::ScoringArena;
use crate::detector::{Detector, DetectorKind, ManifestSource, TensorSource};
use crate::error::{Error, Result};
use crate::maps::PostChain;
use crate::pipeline::score_image;
use crate::tensorio::DatasetManifest;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCounts {
    pub normal: usize,
    pub anomalous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub anomalous: bool,
    pub score: f32,
}

/// Image-level metrics for one (dataset, detector, setting, seed).
///
/// Metric fields are `None` when evaluation refused to compute them; the
/// reason is then listed in `warnings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_name: String,
    pub detector_kind: DetectorKind,
    pub setting: Setting,
    pub seed: u64,
    pub img_roc: Option<f64>,
    pub auc_pr: Option<f64>,
    pub img_f1: Option<f64>,
    /// Only reported for the `full` setting.
    pub img_acc: Option<f64>,
    /// Max-F1 threshold; also the threshold behind `img_acc`.
    pub threshold_used: Option<f32>,
    pub counts: TestCounts,
    pub contaminants: usize,
    pub realized_contamination_rate: Option<f64>,
    pub config_echo: Map<String, Value>,
    pub warnings: Vec<String>,
    pub scores: Vec<ImageScore>,
}

impl EvalReport {
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
        Ok(serde_json::from_str(&text)?)
    }
}

/// Metric block computed from scores and labels alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub img_roc: f64,
    pub auc_pr: f64,
    pub img_f1: f64,
    pub threshold: f32,
    pub img_acc: f64,
}

/// Returns the metrics, or the reason they cannot be computed meaningfully.
pub fn compute_metrics(scores: &[f32], labels: &[bool]) -> std::result::Result<MetricSet, String> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err("single-class labels: both normal and anomalous test images are required".into());
    }
    if scores.windows(2).all(|w| w[0] == w[1]) {
        return Err(format!(
            "single-class score degeneracy: all {} test scores equal {}",
            scores.len(),
            scores[0]
        ));
    }
    let run = || -> Result<MetricSet> {
        let (img_f1, threshold) = max_f1(scores, labels)?;
        Ok(MetricSet {
            img_roc: auroc(scores, labels)?,
            auc_pr: average_precision(scores, labels)?,
            img_f1,
            threshold,
            img_acc: accuracy_at(scores, labels, threshold)?,
        })
    };
    run().map_err(|e| e.to_string())
}

/// Options for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub post: PostChain,
    pub source_resolution: (usize, usize),
    pub config_echo: Map<String, Value>,
}

/// Scores every test id of `split` and assembles the report.
pub fn evaluate(
    detector: &dyn Detector,
    split: &SplitSpec,
    manifest: &DatasetManifest,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    split.validate()?;
    let source = ManifestSource::new(manifest, &split.test_ids)
        .with_source_resolution(opts.source_resolution);
    let scored: Vec<ImageScore> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let id = source.id(i);
            let tensor = source.load(i)?;
            let map = score_image(detector, &tensor, &opts.post, &ScoringArena::new())?;
            Ok(ImageScore {
                id: id.to_string(),
                anomalous: manifest.entry(id)?.label.is_anomalous(),
                score: map.image_score,
            })
        })
        .collect::<Result<_>>()?;

    let scores: Vec<f32> = scored.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = scored.iter().map(|s| s.anomalous).collect();
    let anomalous = labels.iter().filter(|&&l| l).count();
    let mut report = EvalReport {
        dataset_name: split.dataset_name.clone(),
        detector_kind: detector.kind(),
        setting: split.setting,
        seed: split.seed,
        img_roc: None,
        auc_pr: None,
        img_f1: None,
        img_acc: None,
        threshold_used: None,
        counts: TestCounts {
            normal: labels.len() - anomalous,
            anomalous,
        },
        contaminants: split.contaminant_ids.len(),
        realized_contamination_rate: split.realized_contamination_rate,
        config_echo: opts.config_echo.clone(),
        warnings: Vec::new(),
        scores: scored,
    };
    if let (Some(req), Some(rate)) = (split.requested_contaminants, split.realized_contamination_rate) {
        if req != split.contaminant_ids.len() {
            report.warnings.push(format!(
                "contamination capped at {} of {req} requested anomalies (realized rate {rate:.4})",
                split.contaminant_ids.len()
            ));
        }
    }
    match compute_metrics(&scores, &labels) {
        Ok(m) => {
            report.img_roc = Some(m.img_roc);
            report.auc_pr = Some(m.auc_pr);
            report.img_f1 = Some(m.img_f1);
            report.threshold_used = Some(m.threshold);
            if split.setting == Setting::Full {
                report.img_acc = Some(m.img_acc);
            }
        }
        Err(reason) => report.warnings.push(reason),
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

/// One model × setting row aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset_name: String,
    pub detector_kind: DetectorKind,
    pub setting: Setting,
    pub seeds: usize,
    pub img_roc: Option<MeanStd>,
    pub auc_pr: Option<MeanStd>,
    pub img_f1: Option<MeanStd>,
    pub img_acc: Option<MeanStd>,
}

pub fn aggregate(reports: &[EvalReport]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, u8, u8), Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        let setting = Setting::ALL.iter().position(|s| *s == r.setting).unwrap() as u8;
        groups
            .entry((r.dataset_name.clone(), r.detector_kind.tag(), setting))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let collect = |f: fn(&EvalReport) -> Option<f64>| {
                MeanStd::of(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            AggregateRow {
                dataset_name: rs[0].dataset_name.clone(),
                detector_kind: rs[0].detector_kind,
                setting: rs[0].setting,
                seeds: rs.len(),
                img_roc: collect(|r| r.img_roc),
                auc_pr: collect(|r| r.auc_pr),
                img_f1: collect(|r| r.img_f1),
                img_acc: collect(|r| r.img_acc),
            }
        })
        .collect()
}

pub const REPORT_CSV_COLUMNS: [&str; 12] = [
    "dataset",
    "model",
    "setting",
    "seeds",
    "img_roc_mean",
    "img_roc_std",
    "auc_pr_mean",
    "auc_pr_std",
    "img_f1_mean",
    "img_f1_std",
    "img_acc_mean",
    "img_acc_std",
];

/// Writes aggregated rows as CSV, one model × setting per line.
pub fn write_report_csv<W: std::io::Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_COLUMNS)?;
    let cell = |m: Option<MeanStd>| match m {
        Some(m) => [format!("{:.4}", m.mean), format!("{:.4}", m.std)],
        None => [String::new(), String::new()],
    };
    for r in rows {
        let mut rec = vec![
            r.dataset_name.clone(),
            r.detector_kind.to_string(),
            r.setting.to_string(),
            r.seeds.to_string(),
        ];
        for m in [r.img_roc, r.auc_pr, r.img_f1, r.img_acc] {
            rec.extend(cell(m));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
