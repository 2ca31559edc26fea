use depth_inpaint::geometry::{
    densify_depth, interpolate_depth, render_depth, round_pixel, DepthMap, Intrinsics, PointCloud,
    Pose,
};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn k() -> Intrinsics<f64> {
    Intrinsics::new(80.0, 80.0, 39.5, 29.5, 80, 60).unwrap()
}

#[test]
fn zbuffer_matches_brute_force_min() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pose = Pose::from_axis_angle(
        Vector3::new(0.2, 1.0, 0.1),
        0.1,
        Vector3::new(0.3, -0.2, 0.5),
    );
    let pts: Vec<Vector3<f64>> = (0..10_000)
        .map(|_| {
            Vector3::new(
                rng.random_range(-4.0..4.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.0..12.0),
            )
        })
        .collect();
    let k = k();
    let depth = render_depth(&PointCloud::new(pts.clone()), &pose, &k);

    let mut oracle = vec![f64::INFINITY; 80 * 60];
    for p in &pts {
        let c = pose.rotation * p + pose.translation;
        if c.z <= 1e-6 {
            continue;
        }
        let (u, v) = (k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy);
        let (x, y) = ((u + 0.5).floor(), (v + 0.5).floor());
        if x < 0.0 || y < 0.0 || x >= 80.0 || y >= 60.0 {
            continue;
        }
        let i = y as usize * 80 + x as usize;
        oracle[i] = oracle[i].min(c.z);
    }
    for y in 0..60 {
        for x in 0..80 {
            let want = oracle[y as usize * 80 + x as usize];
            match depth.get(x, y) {
                Some(d) => assert!((d - want).abs() < 1e-12, "({x},{y}) {d} vs {want}"),
                None => assert!(want.is_infinite(), "({x},{y}) missing {want}"),
            }
        }
    }
}

fn ramp(x: u32, y: u32) -> f64 {
    3.0 + 0.01 * x as f64 + 0.02 * y as f64
}

fn ramp_seeds() -> DepthMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut sparse = DepthMap::invalid(80, 60);
    for y in 0..60 {
        for x in 0..80 {
            if (x % 6 == 0 && y % 6 == 0) || rng.random::<f64>() < 0.05 {
                sparse.set(x, y, ramp(x, y));
            }
        }
    }
    sparse
}

#[test]
fn planar_ramp_is_reconstructed() {
    let sparse = ramp_seeds();
    let lin = interpolate_depth(&sparse).unwrap();
    let dense = densify_depth(&sparse).unwrap();
    for y in 2..55 {
        for x in 2..75 {
            let want = ramp(x, y);
            assert!(
                (lin.get(x, y).unwrap() - want).abs() < 1e-3,
                "before median at ({x},{y})"
            );
            // Median of a planar patch stays within the patch's spread.
            assert!(
                (dense.get(x, y).unwrap() - want).abs() <= 0.06 + 1e-9,
                "after median at ({x},{y})"
            );
        }
    }
}

#[test]
fn isolated_spike_is_removed() {
    let mut sparse = DepthMap::invalid(40, 40);
    for y in 0..40 {
        for x in 0..40 {
            sparse.set(x, y, 2.0 + 0.001 * x as f64);
        }
    }
    sparse.set(20, 20, 9.0);
    let dense = densify_depth(&sparse).unwrap();
    for y in 2..38 {
        for x in 2..38 {
            assert!((dense.get(x, y).unwrap() - (2.0 + 0.001 * x as f64)).abs() < 1e-3);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn voxel_downsample_keeps_one_point_per_cell(seed in any::<u64>(), voxel in 0.05f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vector3<f64>> = (0..500).map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(0.0..2.0))).collect();
        let out = PointCloud::new(pts).voxel_downsample(voxel).unwrap();
        let mut cells = std::collections::HashSet::new();
        for p in &out.points {
            let c = p.map(|v| (v / voxel).floor() as i64);
            prop_assert!(cells.insert((c.x, c.y, c.z)));
        }
    }

    #[test]
    fn pose_inverse_round_trips(ax in -1.0f64..1.0, ay in -1.0f64..1.0, angle in -3.0f64..3.0, t in prop::array::uniform3(-10.0f64..10.0), p in prop::array::uniform3(-10.0f64..10.0)) {
        prop_assume!(ax.abs() + ay.abs() > 1e-3);
        let pose = Pose::from_axis_angle(Vector3::new(ax, ay, 0.3), angle, Vector3::from(t));
        let p = Vector3::from(p);
        let back = pose.inverse().transform(&pose.transform(&p));
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn rounding_is_half_up(u in -5.0f64..85.0, v in -5.0f64..65.0) {
        let got = round_pixel(u, v, 80, 60);
        let (x, y) = ((u + 0.5).floor(), (v + 0.5).floor());
        if x >= 0.0 && y >= 0.0 && x < 80.0 && y < 60.0 {
            prop_assert_eq!(got, Some((x as u32, y as u32)));
        } else {
            prop_assert_eq!(got, None);
        }
    }
}
