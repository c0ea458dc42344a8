// Build the three evaluation settings over a synthetic dataset, evaluate both
// detectors across seeds and print the aggregated CSV table.
//
// Run with `cargo run --release --example evaluate_settings`.

use vad_core::eval::{
    aggregate, build_setting, evaluate, write_report_csv, ContaminationPolicy, EvalOptions,
    Setting,
};
use vad_core::synthetic::{write_dataset, SyntheticSpec};
use vad_core::{
    fit_padim, fit_patchcore, DetectorKind, FittedModel, ManifestSource, PadimConfig,
    PatchCoreConfig, PostChain, Result,
};

pub fn run_example() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SyntheticSpec {
        train: 60,
        test_normal: 57,
        anomalous: 12,
        channels: 16,
        grid: (6, 6),
        ..Default::default()
    };
    let manifest = write_dataset(&spec, dir.path())?;
    let resolution = (48, 48);

    let mut reports = Vec::new();
    for setting in Setting::ALL {
        for seed in 0..3 {
            let split = build_setting(&manifest, setting, seed, ContaminationPolicy::Cap)?;
            let train = ManifestSource::new(&manifest, &split.train_ids).with_source_resolution(resolution);
            for kind in [DetectorKind::Padim, DetectorKind::PatchCore] {
                let model = match kind {
                    DetectorKind::Padim => FittedModel::Padim(fit_padim(&train, &PadimConfig::default())?),
                    DetectorKind::PatchCore => {
                        FittedModel::PatchCore(fit_patchcore(&train, &PatchCoreConfig::default())?)
                    }
                };
                let opts = EvalOptions {
                    post: PostChain::default(),
                    source_resolution: resolution,
                    config_echo: Default::default(),
                };
                let report = evaluate(&model, &split, &manifest, &opts)?;
                println!(
                    "{setting:<18} seed {seed} {kind:<9} test {:>3}+{:<2} roc {:.3}",
                    report.counts.normal,
                    report.counts.anomalous,
                    report.img_roc.unwrap_or(f64::NAN)
                );
                reports.push(report);
            }
        }
    }

    let rows = aggregate(&reports);
    write_report_csv(&rows, std::io::stdout())?;
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
