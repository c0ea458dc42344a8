// Write a feature tensor to a VADF file, read it back and list a manifest.
//
// Run with `cargo run --example feature_files`.

use vad_core::tensorio::{
    decode_header, encode_feature, read_feature_file, write_feature_file, DatasetManifest, Label,
    ManifestEntry, Split,
};
use vad_core::{FeatureTensor, Result};

pub fn run_example() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");

    // two layers of 3 and 5 channels already aligned to a 4×6 grid
    let data: Vec<f32> = (0..8 * 4 * 6).map(|i| i as f32 * 0.25).collect();
    let tensor = FeatureTensor::with_layers(data, 8, 4, 6, vec![0, 3])?;

    let bytes = encode_feature(&tensor)?;
    let header = decode_header(&bytes)?;
    println!(
        "encoded {} bytes: dims (C, H, W) = {:?}, layers {:?}",
        bytes.len(),
        header.dims,
        header.layer_boundaries
    );

    let path = dir.path().join("img-000.vadf");
    write_feature_file(&tensor, &path)?;
    let back = read_feature_file(&path)?;
    assert_eq!(back, tensor);
    println!("round trip through {} is bit-exact", path.display());

    let manifest = DatasetManifest::new(
        "demo",
        vec![ManifestEntry {
            id: "img-000".into(),
            feature_path: "img-000.vadf".into(),
            image_path: None,
            label: Label::Normal,
            anomaly_class: None,
            split: Split::Train,
        }],
    )?
    .with_root(dir.path());
    manifest.check_resolvable()?;
    let loaded = manifest.load_features("img-000")?;
    println!("manifest resolves img-000 to a {:?} tensor", loaded.dims());
    println!("{}", manifest.to_json()?);
    Ok(())
}

fn main() -> Result<()> {
    run_example()
}
