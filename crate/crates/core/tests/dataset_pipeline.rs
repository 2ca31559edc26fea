mod common;

use std::fs;

use depth_inpaint::bench::presets;
use depth_inpaint::config::PipelineConfig;
use depth_inpaint::dataset::{generate_dataset, load_dataset};
use depth_inpaint::error::ErrorClass;
use depth_inpaint::pipeline::{evaluate_results, run_pipeline};
use image::{GrayImage, Luma};

#[test]
fn generated_dataset_loads_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate_dataset(&common::street(1, 3), dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    assert_eq!(back.intrinsics, seq.intrinsics);
    assert_eq!(back.ground_truth, seq.ground_truth);
    for t in 0..3 {
        let (a, b) = (&seq.frames[t], &back.frames[t]);
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
        // PLY stores float32 and poses go through text; both are exact enough here.
        assert_eq!(seq.clouds[t].points.len(), back.clouds[t].points.len());
        for (p, q) in seq.clouds[t].points.iter().zip(&back.clouds[t].points) {
            assert_eq!(p, q);
        }
        assert!(
            (seq.world_from_sensor[t].translation - back.world_from_sensor[t].translation).norm()
                < 1e-12
        );
        assert!(seq.world_from_sensor[t].rotation_angle_to(&back.world_from_sensor[t]) < 1e-12);
    }
}

#[test]
fn missing_and_non_binary_masks_are_named() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&common::street(1, 5), dir.path()).unwrap();
    let m3 = dir.path().join("masks/000003.png");
    fs::remove_file(&m3).unwrap();
    let e = load_dataset(dir.path()).unwrap_err();
    assert_eq!(e.class(), ErrorClass::Data);
    assert!(e.to_string().contains("frame 3"), "{e}");

    let mut gray = GrayImage::new(320, 240);
    gray.put_pixel(5, 5, Luma([128]));
    gray.save(&m3).unwrap();
    let e = load_dataset(dir.path()).unwrap_err();
    assert!(
        e.to_string().contains("frame 3") && e.to_string().contains("binary"),
        "{e}"
    );
}

#[test]
fn full_run_writes_outputs_and_keeps_unmasked_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("street");
    let seq = generate_dataset(&common::street(2, 6), &data).unwrap();
    let mut cfg = PipelineConfig::new(vec![data.clone()], dir.path().join("out"));
    cfg.refine.enabled = false;
    let out = run_pipeline(&cfg).unwrap();

    let o = &cfg.output_dir;
    for sub in ["inpainted", "composite", "provenance"] {
        assert_eq!(fs::read_dir(o.join(sub)).unwrap().count(), 6, "{sub}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["blank_fraction"].as_f64().is_some());
    assert_eq!(manifest["config_hash"], cfg.hash());
    let stages: Vec<&str> = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    assert_eq!(stages, cfg.stages());

    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse"].as_f64().unwrap() > 0.0);
    let again = evaluate_results(o, &data).unwrap();
    assert_eq!(Some(again), out.metrics);

    for (t, f) in seq.frames.iter().enumerate() {
        let result = image::open(o.join(format!("inpainted/{t:06}.png")))
            .unwrap()
            .to_rgb8();
        for (x, y, px) in f.image.enumerate_pixels() {
            if !f.mask.get(x, y) {
                assert_eq!(result.get_pixel(x, y), px);
            }
        }
    }
}

#[test]
fn fusion_reduces_blank_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = presets::dual_capture(2, 8);
    generate_dataset(&b, &dir.path().join("second")).unwrap();
    generate_dataset(&a, &dir.path().join("first")).unwrap();
    let mut cfg = PipelineConfig::new(
        vec![dir.path().join("second"), dir.path().join("first")],
        dir.path().join("out"),
    );
    cfg.refine.enabled = false;
    cfg.fuse.enabled = true;
    let out = run_pipeline(&cfg).unwrap();
    let m = &out.manifest;
    assert!(
        m.blank_fraction < m.blank_fraction_before_fusion,
        "{} vs {}",
        m.blank_fraction,
        m.blank_fraction_before_fusion
    );
    assert!(m.registration.is_some());
}
