mod common;

use depth_inpaint::bench::Scene;
use depth_inpaint::bp::MrfProblem;
use depth_inpaint::dataset::{FramePacket, SourceRef};
use depth_inpaint::geometry::{DepthMap, Intrinsics, Pose};
use depth_inpaint::map::{stitch_map, MapConfig};
use depth_inpaint::raster::Mask;
use depth_inpaint::refine::{
    colorize_map, offset_pose, photometric_error, refine_rotation, ring_mask, RefinementConfig,
};
use depth_inpaint::sampling::{build_label_space, sample_all, warp_pixel, SampleConfig, Source};
use image::RgbImage;
use nalgebra::Vector3;

#[test]
fn warp_lands_on_the_same_surface_point() {
    let spec = common::street(3, 3);
    let scene = Scene::new(spec.clone()).unwrap();
    let (r, seq) = common::render(&spec);
    let mut target = seq.frames[0].clone();
    target.depth = Some(r.frames[0].depth.clone());
    let source = &seq.frames[2];
    let k = scene.intrinsics();
    let cam0 = scene.world_from_camera(0);
    let cam2_inv = scene.world_from_camera(2).inverse();
    let mut checked = 0;
    for y in (0..k.height).step_by(7) {
        for x in (0..k.width).step_by(7) {
            if target.mask.get(x, y) {
                continue;
            }
            let d = (cam0.rotation * k.ray(x as f64, y as f64)).normalize();
            let Some(hit) = scene.cast(&cam0.translation, &d, 0, false) else {
                continue;
            };
            let w = warp_pixel(&target, x, y, source);
            if !w.ok() {
                continue;
            }
            let p = cam2_inv.transform(&(cam0.translation + d * hit.distance));
            let (u, v) = (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
            assert!(
                (u - w.u).hypot(v - w.v) <= 0.5,
                "pixel ({x},{y}): warp ({}, {}) vs surface ({u}, {v})",
                w.u,
                w.v
            );
            checked += 1;
        }
    }
    assert!(checked > 500, "{checked}");
}

/// Fronto-parallel textured plane seen by two cameras 3 px apart.
fn plane_pair() -> (FramePacket, FramePacket) {
    let (w, h, z) = (48u32, 36u32, 4.0);
    let k = Intrinsics::new(60.0, 60.0, 23.5, 17.5, w, h).unwrap();
    let texture = |u: f64, v: f64| {
        [
            (40.0 + 3.0 * u + 2.0 * v) as u8,
            (90.0 + (u * v) % 50.0) as u8,
            (200.0 - 2.0 * v) as u8,
        ]
    };
    let shift = 3.0 * z / 60.0;
    let mut mask = Mask::empty(w, h);
    for y in 12..24 {
        for x in 18..30 {
            mask.set(x, y, true);
        }
    }
    let target_img = RgbImage::from_fn(w, h, |x, y| image::Rgb(texture(x as f64, y as f64)));
    let source_img = RgbImage::from_fn(w, h, |x, y| image::Rgb(texture(x as f64 + 3.0, y as f64)));
    let mut target = FramePacket::new(
        0,
        target_img,
        Pose::from_translation(Vector3::new(0.0, 0.0, z)),
        k,
        mask,
    )
    .unwrap();
    let mut source = FramePacket::new(
        1,
        source_img,
        Pose::from_translation(Vector3::new(-shift, 0.0, z)),
        k,
        Mask::empty(w, h),
    )
    .unwrap();
    let flat = DepthMap {
        width: w,
        height: h,
        data: vec![z; (w * h) as usize],
    };
    target.depth = Some(flat.clone());
    source.depth = Some(flat);
    (target, source)
}

#[test]
fn consistent_offsets_cost_nothing() {
    let (target, source) = plane_pair();
    let sources = [Source {
        id: SourceRef { video: 0, frame: 1 },
        frame: &source,
    }];
    let cands = sample_all(&target, &sources, &SampleConfig::default());
    assert!(cands.iter().all(|(_, c)| c.is_valid()));
    let space = build_label_space(&target, &cands, &sources, 3);
    let problem =
        MrfProblem::<f64>::from_label_space(&space, &target.image, &target.mask, 10.0).unwrap();
    let mut pairs = 0;
    for (p, side, _) in problem.edges() {
        for l in 0..9 {
            let q = problem.neighbors[p][side].unwrap();
            if problem.labels[p].len() == 9 && problem.labels[q].len() == 9 {
                assert!(problem.discontinuity_cost(p, side, l, l) < 1e-9);
                pairs += 1;
            }
        }
    }
    assert!(pairs > 100);
}

fn refinement_setup() -> (FramePacket, depth_inpaint::geometry::PointCloud<f64>) {
    let seq = common::sequence(&common::street(5, 4));
    let map = stitch_map(&seq, &MapConfig::default()).unwrap();
    let frames: Vec<&FramePacket> = seq.frames.iter().collect();
    let colored = colorize_map(&map, &frames);
    (seq.frames[1].clone(), colored)
}

#[test]
fn self_colored_map_has_small_error() {
    let seq = common::sequence(&common::street(5, 2));
    let map = stitch_map(&seq, &MapConfig::default()).unwrap();
    let frame = &seq.frames[0];
    let colored = colorize_map(&map, &[frame]);
    let ring = ring_mask(&frame.mask, 20);
    let e = photometric_error(frame, &colored, &frame.pose, &ring).unwrap();
    assert!(e < 1.0, "{e}");
}

#[test]
fn injected_yaw_is_recovered() {
    let (mut frame, map) = refinement_setup();
    let truth = frame.pose;
    frame.pose = offset_pose(&truth, 0.0, 0.3);
    let r = refine_rotation(&frame, &map, &RefinementConfig::default()).unwrap();
    assert!(
        (r.yaw_deg + 0.3).abs() <= 0.05 + 1e-9 && r.pitch_deg.abs() <= 0.05 + 1e-9,
        "{r:?}"
    );
    assert!(r.error <= r.initial_error);
}

#[test]
fn calibrated_frame_stays_put() {
    let (frame, map) = refinement_setup();
    let r = refine_rotation(&frame, &map, &RefinementConfig::default()).unwrap();
    assert!(
        r.pitch_deg.abs() <= 0.05 + 1e-9 && r.yaw_deg.abs() <= 0.05 + 1e-9,
        "{r:?}"
    );
}
