// Fit PaDiM on synthetic features, score a normal and an anomalous image and
// round-trip the model artifact.
//
// Run with `cargo run --release --example fit_padim`.

use vad_core::synthetic::{generate, SyntheticSpec};
use vad_core::{
    fit_padim, score_image, Detector, FittedModel, PadimConfig, PostChain, Result, ScoringArena,
};

pub fn run_example() -> Result<()> {
    let spec = SyntheticSpec {
        train: 80,
        test_normal: 10,
        anomalous: 4,
        channels: 24,
        grid: (6, 6),
        ..Default::default()
    };
    let data = generate(&spec)?;
    let train_ids: Vec<String> = (0..spec.train).map(|i| format!("train-{i:04}")).collect();
    let train = data.select(&train_ids)?;

    let cfg = PadimConfig {
        d: Some(12),
        ..Default::default()
    };
    let model = fit_padim(&train, &cfg)?;
    println!(
        "PaDiM: {:?} grid, d = {} of C = {}, channels {:?}",
        model.grid(),
        model.d(),
        spec.channels,
        model.selected_channels()
    );

    let post = PostChain {
        sigma: cfg.smoothing_sigma,
        ..Default::default()
    };
    let arena = ScoringArena::new();
    for id in ["normal-0000", "anomaly-0000"] {
        let t = data.tensor(id).unwrap().clone().with_source_resolution(64, 64);
        let map = score_image(&model, &t, &post, &arena)?;
        println!("{id}: image score {:.3}, map {:?}", map.image_score, map.values.dims());
    }
    println!("scoring arena peak: {} bytes", arena.peak_bytes());

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("padim.vadm");
    let fitted = FittedModel::Padim(model);
    fitted.save(&path)?;
    let reloaded = FittedModel::load(&path)?;
    assert_eq!(reloaded, fitted);
    println!(
        "artifact {} bytes, reloaded {} model",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        reloaded.kind()
    );
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
