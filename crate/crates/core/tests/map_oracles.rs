mod common;

use depth_inpaint::bench::render::BACKGROUND_ID;
use depth_inpaint::dataset::{CaptureSequence, FramePacket};
use depth_inpaint::error::ErrorClass;
use depth_inpaint::geometry::{round_pixel, Intrinsics, PointCloud, Pose};
use depth_inpaint::map::{fuse_maps, remove_masked, stitch_map, IcpConfig, MapConfig};
use depth_inpaint::raster::Mask;
use image::RgbImage;
use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

#[test]
fn occluder_points_removed_background_kept() {
    let (r, seq) = common::render(&common::street(2, 4));
    let mut removed_any = false;
    for (t, f) in r.frames.iter().enumerate() {
        let frame = &seq.frames[t];
        let mask = frame.mask.dilate(MapConfig::default().mask_dilate_px);
        let kept = remove_masked(
            &f.cloud,
            &f.world_from_sensor,
            &frame.pose,
            &frame.intrinsics,
            &mask,
        );
        let k = &frame.intrinsics;
        let mut want = Vec::new();
        for (p, id) in f.cloud.points.iter().zip(&f.object_ids) {
            let px = k
                .project_camera(p)
                .and_then(|q| round_pixel(q.u, q.v, k.width, k.height));
            if *id != BACKGROUND_ID {
                removed_any = true;
                assert!(
                    px.is_some_and(|(x, y)| mask.get(x, y)),
                    "frame {t}: occluder point outside the dilated mask"
                );
                continue;
            }
            if px.is_none_or(|(x, y)| !mask.get(x, y)) {
                want.push(*p);
            }
        }
        assert_eq!(kept.points, want, "frame {t}");
    }
    assert!(removed_any, "scene should contain occluder returns");
}

#[test]
fn stitched_plane_stays_on_plane() {
    let k = Intrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap();
    let plane_z = 5.0;
    let poses = [
        Pose::identity(),
        Pose::from_axis_angle(Vector3::y(), 0.05, Vector3::new(0.4, 0.0, 0.3)),
    ];
    let mut seq = CaptureSequence {
        intrinsics: k,
        frames: vec![],
        clouds: vec![],
        world_from_sensor: vec![],
        ground_truth: None,
    };
    for (i, world_from_sensor) in poses.iter().enumerate() {
        let sensor_from_world = world_from_sensor.inverse();
        let pts = (0..40)
            .flat_map(|a| {
                (0..30).map(move |b| {
                    Vector3::new(-2.0 + 0.1 * a as f64, -1.5 + 0.1 * b as f64, plane_z)
                })
            })
            .map(|w| sensor_from_world.transform(&w))
            .collect();
        let frame = FramePacket::new(
            i,
            RgbImage::new(64, 48),
            sensor_from_world,
            k,
            Mask::empty(64, 48),
        )
        .unwrap();
        seq.frames.push(frame);
        seq.clouds.push(PointCloud::new(pts));
        seq.world_from_sensor.push(*world_from_sensor);
    }
    let map = stitch_map(&seq, &MapConfig::default()).unwrap();
    assert!(map.len() > 500);
    for p in &map.points {
        assert!((p.z - plane_z).abs() < 1e-6, "{p:?}");
    }
}

#[test]
fn self_fusion_keeps_poses() {
    let seq = common::sequence(&common::street(4, 4));
    let cfg = MapConfig::default();
    let base = stitch_map(&seq, &cfg).unwrap();
    let (merged, poses, reg) = fuse_maps(&base, &seq, &cfg, &IcpConfig::default()).unwrap();
    for (a, b) in poses.iter().zip(&seq.world_from_sensor) {
        assert!((a.translation - b.translation).norm() < 1e-3);
        assert!(a.rotation_angle_to(b).to_degrees() < 1e-3);
    }
    assert!(reg.fitness > 0.99);
    assert!(merged.len() >= base.len() && merged.len() < base.len() + base.len() / 100 + 10);
}

#[test]
fn fusion_covers_background_of_both_captures() {
    let spec_a = common::street(6, 4);
    let mut spec_b = spec_a.clone();
    for occ in &mut spec_b.occluders {
        for key in &mut occ.track {
            key.center[0] = -key.center[0];
        }
    }
    let mut clear = spec_a.clone();
    clear.occluders.clear();
    let a = common::sequence(&spec_a);
    let b = common::sequence(&spec_b);
    let (truth, _) = common::render(&clear);

    let cfg = MapConfig::default();
    let base = stitch_map(&a, &cfg).unwrap();
    let (merged, _, _) = fuse_maps(&base, &b, &cfg, &IcpConfig::default()).unwrap();

    let raw: Vec<[f64; 3]> = merged.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = ImmutableKdTree::<f64, 3>::new_from_slice(&raw).unwrap();
    let (mut covered, mut total) = (0usize, 0usize);
    for f in &truth.frames {
        for p in &f.cloud.points {
            let w = f.world_from_sensor.transform(p);
            total += 1;
            if tree
                .query(&[w.x, w.y, w.z])
                .nearest_one::<SquaredEuclidean<f64>>()
                .execute()
                .distance
                <= 0.1f64.powi(2)
            {
                covered += 1;
            }
        }
    }
    let coverage = covered as f64 / total as f64;
    assert!(coverage >= 0.99, "coverage {coverage}");
}

#[test]
fn fusion_outside_basin_fails() {
    let seq = common::sequence(&common::street(8, 3));
    let cfg = MapConfig::default();
    let base = stitch_map(&seq, &cfg).unwrap();
    let mut shifted = seq.clone();
    let offset = Pose::from_axis_angle(
        Vector3::y(),
        40f64.to_radians(),
        Vector3::new(3.0, 0.0, 12.0),
    );
    for i in 0..shifted.len() {
        let p = offset.compose(&shifted.world_from_sensor[i]);
        shifted.set_world_from_sensor(i, p);
    }
    let err = fuse_maps(&base, &shifted, &cfg, &IcpConfig::default()).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Numerical, "{err}");
}
