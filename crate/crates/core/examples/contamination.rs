// Show how a handful of anomalous images hidden in the training set affects
// each detector: PatchCore keeps them in its memory bank, PaDiM averages them
// into its Gaussians.
//
// Run with `cargo run --release --example contamination`.

use vad_core::eval::{build_setting, evaluate, ContaminationPolicy, EvalOptions, Setting};
use vad_core::synthetic::{write_dataset, SyntheticSpec};
use vad_core::{
    fit_padim, fit_patchcore, FittedModel, ManifestSource, PadimConfig, PatchCoreConfig,
    PostChain, Result,
};

pub fn run_example() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let spec = SyntheticSpec {
        train: 120,
        test_normal: 57,
        anomalous: 12,
        ..Default::default()
    };
    let manifest = write_dataset(&spec, dir.path())?;
    let opts = EvalOptions {
        post: PostChain::default(),
        source_resolution: (64, 64),
        config_echo: Default::default(),
    };

    for setting in [Setting::Pos5, Setting::Pos5Contaminated] {
        let split = build_setting(&manifest, setting, 1, ContaminationPolicy::Cap)?;
        if let Some(rate) = split.realized_contamination_rate {
            println!(
                "{setting}: {} contaminants in {} training images (rate {rate:.3})",
                split.contaminant_ids.len(),
                split.train_ids.len()
            );
        }
        let train = ManifestSource::new(&manifest, &split.train_ids);
        let padim = FittedModel::Padim(fit_padim(&train, &PadimConfig::default())?);
        let patchcore = FittedModel::PatchCore(fit_patchcore(&train, &PatchCoreConfig::default())?);
        for model in [&padim, &patchcore] {
            let report = evaluate(model, &split, &manifest, &opts)?;
            println!(
                "{setting:<18} {:<9} img_roc {:.3} auc_pr {:.3}",
                report.detector_kind,
                report.img_roc.unwrap_or(f64::NAN),
                report.auc_pr.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
