//! Pose text files: one `index tx ty tz qx qy qz qw` line per frame (world-from-sensor).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose;

pub fn parse_poses(text: &str) -> Result<Vec<(usize, Pose<f64>)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::Data(format!(
                "pose line {}: expected 8 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::Data(format!("pose line {}: bad frame index", lineno + 1)))?;
        let mut v = [0.0f64; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f
                .parse()
                .map_err(|_| Error::Data(format!("pose line {}: bad number `{f}`", lineno + 1)))?;
        }
        let pose = Pose::from_quaternion([v[3], v[4], v[5], v[6]], Vector3::new(v[0], v[1], v[2]))
            .map_err(|e| Error::frame(index, e.to_string()))?;
        out.push((index, pose));
    }
    Ok(out)
}

pub fn format_poses(poses: &[(usize, Pose<f64>)]) -> String {
    let mut s = String::new();
    for (index, pose) in poses {
        let t = pose.translation;
        let q = pose.quaternion();
        writeln!(
            s,
            "{index} {} {} {} {} {} {} {}",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
        .unwrap();
    }
    s
}

pub fn read_poses(path: &Path) -> Result<Vec<(usize, Pose<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_poses(path: &Path, poses: &[(usize, Pose<f64>)]) -> Result<()> {
    fs::write(path, format_poses(poses)).map_err(|e| Error::io(path, e))
}
