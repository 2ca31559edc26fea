//! Ready-made scenes used by tests, examples and the `generate` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::scene::*;

fn plane(
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
    extent: [f64; 2],
    texture: Texture,
    scale: f64,
) -> PlaneSpec {
    PlaneSpec {
        origin,
        u_axis: u,
        v_axis: v,
        extent,
        texture,
        texture_scale: scale,
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: u8, hi: u8) -> [u8; 3] {
    [0; 3].map(|_| rng.random_range(lo..=hi))
}

/// Closed street canyon: ground, two brick facades, a covered roof and end walls,
/// with a few static boxes. Spans x ∈ [-5, 5], y ∈ [-4, 1.5] (y down), z ∈ [-10, 60].
fn street_static(rng: &mut ChaCha8Rng) -> (Vec<PlaneSpec>, Vec<BoxSpec>) {
    let s = rng.random::<u32>();
    let mut planes = vec![
        plane(
            [-5.0, 1.5, -10.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            [10.0, 70.0],
            Texture::Noise {
                a: random_color(rng, 60, 90),
                b: random_color(rng, 140, 180),
                seed: s,
            },
            1.8,
        ),
        plane(
            [-5.0, -4.0, -10.0],
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [70.0, 5.5],
            Texture::Bricks {
                brick: random_color(rng, 120, 190),
                mortar: [200, 200, 195],
                seed: s ^ 1,
            },
            2.4,
        ),
        plane(
            [5.0, -4.0, -10.0],
            [0.0, 0.0, 1.0],
            [0.0, 1.0, 0.0],
            [70.0, 5.5],
            Texture::Bricks {
                brick: random_color(rng, 100, 170),
                mortar: [190, 185, 180],
                seed: s ^ 2,
            },
            2.4,
        ),
        plane(
            [-5.0, -4.0, -10.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0],
            [10.0, 70.0],
            Texture::Checker {
                a: [210, 210, 220],
                b: random_color(rng, 90, 140),
            },
            4.5,
        ),
        plane(
            [-5.0, -4.0, 60.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [10.0, 5.5],
            Texture::Checker {
                a: random_color(rng, 30, 80),
                b: random_color(rng, 170, 230),
            },
            3.0,
        ),
        plane(
            [-5.0, -4.0, -10.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [10.0, 5.5],
            Texture::Solid {
                color: [120, 120, 120],
            },
            1.0,
        ),
    ];
    let mut boxes = Vec::new();
    for (i, (x, z)) in [(3.6, 24.0), (-3.8, 31.0), (3.2, 40.0)]
        .into_iter()
        .enumerate()
    {
        let half = [
            0.8 + 0.4 * rng.random::<f64>(),
            0.9 + 0.5 * rng.random::<f64>(),
            0.8 + 0.6 * rng.random::<f64>(),
        ];
        boxes.push(BoxSpec {
            center: [x, 1.5 - half[1], z + rng.random_range(-2.0..2.0)],
            half_extent: half,
            yaw_deg: rng.random_range(-20.0..20.0),
            texture: Texture::Noise {
                a: random_color(rng, 20, 80),
                b: random_color(rng, 150, 240),
                seed: s ^ (10 + i as u32),
            },
            texture_scale: 1.2,
        });
    }
    for t in planes
        .iter_mut()
        .map(|p| &mut p.texture)
        .chain(boxes.iter_mut().map(|b| &mut b.texture))
    {
        match t {
            Texture::Checker { a, b } | Texture::Noise { a, b, .. } => soften(a, b),
            Texture::Bricks { brick, mortar, .. } => soften(brick, mortar),
            Texture::Solid { .. } => {}
        }
    }
    (planes, boxes)
}

/// Pulls a color pair 40% toward its mean; the street is meant to look like a
/// street, not a test chart.
fn soften(a: &mut [u8; 3], b: &mut [u8; 3]) {
    for c in 0..3 {
        let m = (a[c] as f64 + b[c] as f64) / 2.0;
        a[c] = (m + (a[c] as f64 - m) * 0.6).round() as u8;
        b[c] = (m + (b[c] as f64 - m) * 0.6).round() as u8;
    }
}

fn exposures(rng: &mut ChaCha8Rng, frames: usize) -> Vec<Exposure> {
    (0..frames)
        .map(|_| Exposure {
            gain: rng.random_range(0.9..=1.1),
            bias: rng.random_range(-8.0..=8.0),
        })
        .collect()
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Forward-driving street sequence with a car and a pedestrian crossing in front
/// of the camera. Every occluded background point is uncovered in some frame.
/// `exposure` adds a random per-frame gain in [0.9, 1.1] and bias in [-8, 8].
pub fn street(seed: u64, frames: usize, exposure: bool) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (planes, boxes) = street_static(&mut rng);
    let step = 0.25;
    let x0 = rng.random_range(-0.5..0.5);
    let trajectory = (0..frames)
        .map(|i| CameraKey {
            position: [x0, 0.0, step * i as f64],
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            roll_deg: 0.0,
        })
        .collect();
    let t = |i: usize| {
        if frames > 1 {
            i as f64 / (frames - 1) as f64
        } else {
            0.0
        }
    };
    let flip = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let car_z = 16.0 + rng.random_range(-1.5..1.5);
    let ped_z = 13.0 + rng.random_range(-1.0..1.0);
    let car = OccluderSpec {
        half_extent: [1.0, 0.7, 2.0],
        color: random_color(&mut rng, 40, 230),
        track: (0..frames)
            .map(|i| OccluderKey {
                center: [flip * lerp(-8.5, 8.5, t(i)), 0.75, car_z],
                yaw_deg: 90.0,
            })
            .collect(),
    };
    let pedestrian = OccluderSpec {
        half_extent: [0.3, 0.9, 0.3],
        color: random_color(&mut rng, 40, 230),
        track: (0..frames)
            .map(|i| OccluderKey {
                center: [-flip * lerp(-4.75, 4.75, t(i)), 0.6, ped_z],
                yaw_deg: 0.0,
            })
            .collect(),
    };
    let exposure = if exposure {
        exposures(&mut rng, frames)
    } else {
        Vec::new()
    };
    SceneSpec {
        width: 320,
        height: 240,
        hfov_deg: 65.0,
        seed,
        supersample: 2,
        planes,
        boxes,
        occluders: vec![car, pedestrian],
        trajectory,
        lidar: LidarSpec::default(),
        exposure,
        background: [150, 180, 220],
    }
}

/// Two drives down the same street. The first sees no occluders; the second
/// follows a truck that stays in front of the camera for the whole sequence,
/// so part of its background is never observed by its own frames.
pub fn dual_capture(seed: u64, frames: usize) -> (SceneSpec, SceneSpec) {
    let mut first = street(seed, frames, false);
    first.occluders.clear();
    // Box silhouettes behind the truck would put depth edges inside the mask, and
    // interpolated depth across an edge matches no source. One box stays, moved
    // in front of the truck: registration needs it to pin down motion along the street.
    first.boxes.retain(|b| b.center[0] < 0.0);
    for b in &mut first.boxes {
        b.center[2] = 7.0;
    }
    for (i, key) in first.trajectory.iter_mut().enumerate() {
        key.position = [-1.2, 0.0, 0.5 * i as f64];
    }
    let mut second = first.clone();
    for (i, key) in second.trajectory.iter_mut().enumerate() {
        key.position = [0.8, 0.0, 1.0 + 0.5 * i as f64];
    }
    second.occluders = vec![OccluderSpec {
        half_extent: [1.1, 1.2, 2.5],
        color: [200, 40, 40],
        track: (0..frames)
            .map(|i| OccluderKey {
                center: [1.0, 0.25, 13.0 + 0.5 * i as f64],
                yaw_deg: 0.0,
            })
            .collect(),
    }];
    (first, second)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        street(3, 20, true).validate().unwrap();
        let (a, b) = dual_capture(4, 12);
        a.validate().unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn presets_are_seeded() {
        assert_eq!(street(7, 5, true), street(7, 5, true));
        assert_ne!(street(7, 5, true), street(8, 5, true));
    }
}
