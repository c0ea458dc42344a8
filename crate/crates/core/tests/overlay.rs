use std::path::PathBuf;

use image::{Rgb, RgbImage};
use vad_core::maps::{colormap, overlay_image, render_overlay, AnomalyMap, Normalization, ScoreRange};
use vad_core::Grid;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// A 16×24 diagonal ramp over a horizontal-gradient photo stand-in.
fn scene() -> (AnomalyMap, RgbImage) {
    let (h, w) = (16usize, 24usize);
    let values = (0..h * w).map(|i| ((i / w) + (i % w)) as f32).collect();
    let map = AnomalyMap {
        values: Grid::new(values, h, w).unwrap(),
        image_score: 38.0,
        normalization: Normalization::None,
    };
    let image = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        Rgb([(x * 10) as u8, (y * 15) as u8, 200 - (x * 5) as u8])
    });
    (map, image)
}

#[test]
fn overlay_matches_golden_png() {
    let (map, image) = scene();
    let range = ScoreRange::of_maps([&map]).unwrap();
    let golden = fixtures().join("overlay_golden.png");
    if std::env::var_os("VAD_BLESS").is_some() {
        render_overlay(&map, &image, range, &golden).unwrap();
    }
    let expected = image::open(&golden).expect("golden png; regenerate with VAD_BLESS=1").to_rgb8();
    let got = overlay_image(&map, &image, range).unwrap();
    assert_eq!(got.dimensions(), expected.dimensions());
    assert!(got.pixels().zip(expected.pixels()).all(|(a, b)| a == b));
}

#[test]
fn overlay_pixels_by_hand() {
    let (map, image) = scene();
    let range = ScoreRange::of_maps([&map]).unwrap();
    let got = overlay_image(&map, &image, range).unwrap();
    // (0, 0): score 0, below the level, plain BT.601 gray of (0, 0, 200)
    assert_eq!(*got.get_pixel(0, 0), Rgb([23, 23, 23]));
    // (23, 15): score 38 of 38 → colormap 255 = (255, 0, 0), blended with gray
    let gray = 0.299 * 230.0 + 0.587 * 225.0 + 0.114 * 85.0;
    let blend = |c: f32| (0.5 * gray + 0.5 * c).round() as u8;
    assert_eq!(*got.get_pixel(23, 15), Rgb([blend(255.0), blend(0.0), blend(0.0)]));
}

#[test]
fn colormap_table_matches_docs() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/colormap.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,r,g,b"));
    let cmap = colormap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 256);
    for (i, row) in rows.iter().enumerate() {
        let [r, g, b] = cmap[i];
        assert_eq!(*row, format!("{i},{r},{g},{b}"));
    }
}
