// Profile footprint, single-threaded latency and scoring memory of both
// detectors and print rows in the `model,footprint_mb,peak_mb,latency_ms` layout.
//
// Run with `cargo run --release --example profile_models`.

use vad_core::profile::{profile_inference, ProfileOptions, ProfileReport};
use vad_core::synthetic::{generate, SyntheticSpec};
use vad_core::{fit_padim, fit_patchcore, Detector, PadimConfig, PatchCoreConfig, Result};

pub fn run_example() -> Result<()> {
    let spec = SyntheticSpec {
        train: 60,
        test_normal: 10,
        anomalous: 2,
        channels: 32,
        grid: (8, 8),
        ..Default::default()
    };
    let data = generate(&spec)?;
    let ids = |prefix: &str, n: usize| -> Vec<String> { (0..n).map(|i| format!("{prefix}-{i:04}")).collect() };
    let train = data.select(&ids("train", spec.train))?;
    let stream: Vec<_> = data
        .select(&ids("normal", spec.test_normal))?
        .into_iter()
        .map(|t| t.with_source_resolution(128, 128))
        .collect();

    let padim = fit_padim(&train, &PadimConfig::default())?;
    let patchcore = fit_patchcore(&train, &PatchCoreConfig::default())?;
    let opts = ProfileOptions {
        host_descriptor: std::env::consts::ARCH.to_string(),
        ..Default::default()
    };

    println!("{}", ProfileReport::CSV_HEADER);
    for model in [&padim as &dyn Detector, &patchcore] {
        let report = profile_inference(model, &stream, &opts)?;
        println!("{}", report.csv_row());
        eprintln!(
            "  {}: {} B artifact, p95 {:.3} ms, {} ({} runs)",
            report.detector_kind,
            report.footprint_bytes,
            report.latency_ms.p95,
            report.mode,
            report.measured_runs
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
