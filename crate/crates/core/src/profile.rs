//! Footprint, latency and peak-memory measurements for fitted detectors.
//!
//! * Footprint is the size of the serialized model artifact, headers included.
//! * Latency is wall-clock time of scoring plus the map post-chain for one
//!   image. Loading features from disk and backbone inference are excluded.
//! * Peak memory is the high-water mark of the [`ScoringArena`] during one
//!   image's scoring, i.e. the scoring workspace, not process RSS.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arena::ScoringArena;
use crate::detector::{Detector, DetectorKind, TensorSource};
use crate::error::{Error, Result};
use crate::maps::PostChain;
use crate::pipeline::score_image;

pub const MIN_MEASURED_RUNS: usize = 30;
const MIB: f64 = 1024.0 * 1024.0;

pub fn model_footprint(artifact_path: impl AsRef<Path>) -> Result<u64> {
    let path = artifact_path.as_ref();
    std::fs::metadata(path)
        .map(|m| m.len())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median: f64,
    pub p95: f64,
}

impl LatencyStats {
    /// Median (mean of the middle pair for even counts) and nearest-rank p95.
    pub fn from_samples(samples_ms: &[f64]) -> Option<Self> {
        if samples_ms.is_empty() {
            return None;
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Some(Self {
            median,
            p95: s[rank - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub detector_kind: DetectorKind,
    pub footprint_bytes: u64,
    pub latency_ms: LatencyStats,
    pub peak_memory_bytes: u64,
    pub warmup_runs: usize,
    pub measured_runs: usize,
    pub host_descriptor: String,
    /// `single-threaded` or `multi-threaded (N)`.
    pub mode: String,
    pub notes: Vec<String>,
}

impl ProfileReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `model,footprint_mb,peak_mb,latency_ms` (MB = 2^20 bytes, median latency).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.2},{:.2},{:.2}",
            self.detector_kind,
            self.footprint_bytes as f64 / MIB,
            self.peak_memory_bytes as f64 / MIB,
            self.latency_ms.median
        )
    }

    pub const CSV_HEADER: &'static str = "model,footprint_mb,peak_mb,latency_ms";
}

#[derive(Debug, Clone)]
pub struct ProfileOptions {
    pub warmup: usize,
    pub runs: usize,
    pub host_descriptor: String,
    /// Score with the global thread pool instead of a single thread.
    pub multithreaded: bool,
    pub post: PostChain,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            warmup: 3,
            runs: MIN_MEASURED_RUNS,
            host_descriptor: String::new(),
            multithreaded: false,
            post: PostChain::default(),
        }
    }
}

/// Scores `warmup + runs` images, cycling through `stream`, and reports the
/// measured runs.
pub fn profile_inference<S: TensorSource + ?Sized>(
    model: &dyn Detector,
    stream: &S,
    opts: &ProfileOptions,
) -> Result<ProfileReport> {
    if opts.warmup < 1 {
        return Err(Error::InvalidConfig("profiling needs at least 1 warmup run".into()));
    }
    if opts.runs < MIN_MEASURED_RUNS {
        return Err(Error::InvalidConfig(format!(
            "profiling needs at least {MIN_MEASURED_RUNS} measured runs, got {}",
            opts.runs
        )));
    }
    if stream.is_empty() {
        return Err(Error::EmptyInput("feature stream"));
    }
    let footprint_bytes = model.to_artifact()?.encoded_len()? as u64;

    let measure = || -> Result<(Vec<f64>, usize)> {
        let mut latencies = Vec::with_capacity(opts.runs);
        let mut peak = 0usize;
        for run in 0..opts.warmup + opts.runs {
            let tensor = stream.load(run % stream.len())?;
            let arena = ScoringArena::new();
            let start = Instant::now();
            let map = score_image(model, &tensor, &opts.post, &arena)?;
            let elapsed = start.elapsed();
            std::hint::black_box(map);
            if run >= opts.warmup {
                latencies.push(elapsed.as_secs_f64() * 1e3);
                peak = peak.max(arena.peak_bytes());
            }
        }
        Ok((latencies, peak))
    };

    let (latencies, peak, mode) = if opts.multithreaded {
        let (l, p) = measure()?;
        (l, p, format!("multi-threaded ({})", rayon::current_num_threads()))
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let (l, p) = pool.install(measure)?;
        (l, p, "single-threaded".to_string())
    };

    Ok(ProfileReport {
        detector_kind: model.kind(),
        footprint_bytes,
        latency_ms: LatencyStats::from_samples(&latencies).expect("runs >= 30"),
        peak_memory_bytes: peak as u64,
        warmup_runs: opts.warmup,
        measured_runs: opts.runs,
        host_descriptor: opts.host_descriptor.clone(),
        mode,
        notes: vec![
            "latency covers scoring and map post-processing; feature extraction excluded".into(),
            "peak memory is the scoring-arena high-water mark, not process RSS".into(),
        ],
    })
}
