// Build a PatchCore memory bank, watch the coreset coverage radius shrink as
// the fraction grows, then score with and without reweighting.
//
// Run with `cargo run --release --example patchcore_coreset`.

use vad_core::patchcore::{build_bank, coreset_select, score_patchcore, squared_distance};
use vad_core::synthetic::{generate, SyntheticSpec};
use vad_core::{fit_patchcore, PatchCoreConfig, Result, ScoringArena};

pub fn run_example() -> Result<()> {
    let spec = SyntheticSpec {
        train: 30,
        test_normal: 4,
        anomalous: 2,
        channels: 16,
        grid: (6, 6),
        ..Default::default()
    };
    let data = generate(&spec)?;
    let train_ids: Vec<String> = (0..spec.train).map(|i| format!("train-{i:04}")).collect();
    let train = data.select(&train_ids)?;

    let cfg = PatchCoreConfig::default();
    let bank = build_bank(&train, &cfg)?;
    println!("full bank: {} rows × D = {}", bank.rows(), bank.dim());

    for fraction in [0.01, 0.05, 0.1, 0.25, 1.0] {
        let picked = coreset_select(&bank, fraction, cfg.seed, None);
        let radius = (0..bank.rows())
            .map(|i| {
                picked
                    .iter()
                    .map(|&p| squared_distance(bank.row(i), bank.row(p)))
                    .fold(f32::INFINITY, f32::min)
            })
            .fold(0.0, f32::max)
            .sqrt();
        println!("fraction {fraction:>5}: k = {:>4}, coverage radius {radius:.3}", picked.len());
    }

    let model = fit_patchcore(&train, &cfg)?;
    let plain = PatchCoreConfig {
        reweight: false,
        ..cfg.clone()
    };
    let arena = ScoringArena::new();
    for id in ["normal-0000", "anomaly-0000"] {
        let t = data.tensor(id).unwrap();
        let weighted = score_patchcore(model.bank(), t, &cfg, &arena)?;
        let raw = score_patchcore(model.bank(), t, &plain, &arena)?;
        println!(
            "{id}: s* = {:.3}, weight {:.3}, reweighted score {:.3}, plain score {:.3}",
            weighted.max_distance,
            weighted.reweight.unwrap_or(1.0),
            weighted.image_score,
            raw.image_score
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
