// Score a few synthetic images, normalise their maps with one dataset-level
// range and write overlay PNGs.
//
// Run with `cargo run --release --example render_overlay [out_dir]`.

use image::{Rgb, RgbImage};
use vad_core::maps::render_overlay;
use vad_core::synthetic::{generate, SyntheticSpec};
use vad_core::tensor::FeatureTensor;
use vad_core::{fit_padim, score_image, PadimConfig, PostChain, Result, ScoreRange, ScoringArena};

pub fn run_example() -> Result<()> {
    render(None)
}

fn render(out_dir: Option<std::path::PathBuf>) -> Result<()> {
    let spec = SyntheticSpec {
        train: 60,
        test_normal: 3,
        anomalous: 1,
        channels: 16,
        grid: (8, 8),
        ..Default::default()
    };
    let data = generate(&spec)?;
    let train_ids: Vec<String> = (0..spec.train).map(|i| format!("train-{i:04}")).collect();
    let model = fit_padim(&data.select(&train_ids)?, &PadimConfig::default())?;

    // a local defect: shift only the top-left quadrant of one normal image
    let base = data.tensor("normal-0002").unwrap();
    let (c, h, w) = (base.channels(), base.height(), base.width());
    let mut defect = base.data().to_vec();
    for ch in 0..c {
        for r in 0..h / 2 {
            for col in 0..w / 2 {
                defect[ch * h * w + r * w + col] += 4.0;
            }
        }
    }
    let defect = FeatureTensor::new(defect, c, h, w)?;

    let side = 128;
    let post = PostChain::default();
    let arena = ScoringArena::new();
    let mut maps = Vec::new();
    for (name, t) in [
        ("normal-0000", data.tensor("normal-0000").unwrap().clone()),
        ("normal-0001", data.tensor("normal-0001").unwrap().clone()),
        ("local-defect", defect),
    ] {
        let t = t.with_source_resolution(side, side);
        maps.push((name, score_image(&model, &t, &post, &arena)?));
    }
    let range = ScoreRange::of_maps(maps.iter().map(|(_, m)| m)).expect("non-empty");
    println!("dataset range [{:.3}, {:.3}]", range.min, range.max);

    let tmp = tempfile::tempdir().expect("temp dir");
    let out_dir = out_dir.unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&out_dir).expect("output dir");
    let photo = RgbImage::from_fn(side as u32, side as u32, |x, y| {
        let v = (96 + (x + y) % 64) as u8;
        Rgb([v, v, v])
    });
    for (name, map) in &maps {
        let path = out_dir.join(format!("{name}.png"));
        render_overlay(map, &photo, range, &path)?;
        println!("{name}: score {:.3} → {}", map.image_score, path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    render(std::env::args().nth(1).map(Into::into))
}
