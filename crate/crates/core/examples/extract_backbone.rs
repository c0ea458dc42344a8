// Run an ONNX backbone on an RGB image and write the aligned features as a
// VADF file, ready to be listed in a dataset manifest.
//
// Run with
// `cargo run --features onnx --example extract_backbone [model.onnx sidecar.json image.png out.vadf]`.
// Without arguments it uses the tiny test fixture.

use std::path::PathBuf;

use vad_core::features::{Backbone, BackboneConfig, Sidecar};
use vad_core::tensorio::write_feature_file;
use vad_core::Result;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn extract(model: PathBuf, sidecar: PathBuf, image: PathBuf, out: PathBuf) -> Result<()> {
    let sidecar = Sidecar::read(sidecar)?;
    let backbone = Backbone::load(&model, BackboneConfig::from_sidecar(&sidecar))?;
    let img = image::open(&image).map_err(|e| vad_core::Error::Image(e.to_string()))?;

    let set = backbone.extract(&img)?;
    sidecar.check(&set)?;
    for (layer, t) in sidecar.layers.iter().zip(&set.layers) {
        println!("{:<8} {:?}", layer.name, t.dims());
    }
    let aligned = vad_core::features::align_and_concat(&set)?;
    println!("aligned: {:?}, boundaries {:?}", aligned.dims(), aligned.layer_boundaries());
    write_feature_file(&aligned, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn run_example() -> Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    extract(
        fixture("tiny_backbone.onnx"),
        fixture("tiny_backbone.sidecar.json"),
        fixture("backbone_input_0.png"),
        dir.path().join("backbone_input_0.vadf"),
    )
}

fn main() -> Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(Into::into).collect();
    match <[PathBuf; 4]>::try_from(args) {
        Ok([model, sidecar, image, out]) => extract(model, sidecar, image, out),
        Err(_) => run_example(),
    }
}
