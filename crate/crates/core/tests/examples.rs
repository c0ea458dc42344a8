macro_rules! example_test {
    ($module:ident, $test:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $test() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example_test!(feature_files, feature_files_example_runs, "feature_files.rs");
example_test!(fit_padim, fit_padim_example_runs, "fit_padim.rs");
example_test!(patchcore_coreset, patchcore_coreset_example_runs, "patchcore_coreset.rs");
example_test!(evaluate_settings, evaluate_settings_example_runs, "evaluate_settings.rs");
example_test!(contamination, contamination_example_runs, "contamination.rs");
example_test!(profile_models, profile_models_example_runs, "profile_models.rs");
example_test!(render_overlay, render_overlay_example_runs, "render_overlay.rs");

#[cfg(feature = "onnx")]
example_test!(extract_backbone, extract_backbone_example_runs, "extract_backbone.rs");
