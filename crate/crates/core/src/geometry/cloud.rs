use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::scalar::Real;

/// 3D points with optional 8-bit RGB colors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T: Real> {
    pub points: Vec<Vector3<T>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Self {
        PointCloud {
            points,
            colors: None,
        }
    }

    pub fn with_colors(points: Vec<Vector3<T>>, colors: Vec<[u8; 3]>) -> Result<Self> {
        let cloud = PointCloud {
            points,
            colors: Some(colors),
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(colors) = &self.colors {
            if colors.len() != self.points.len() {
                return Err(Error::Data(format!(
                    "cloud has {} points but {} colors",
                    self.points.len(),
                    colors.len()
                )));
            }
        }
        if self.points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Data("cloud contains non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn transformed(&self, pose: &Pose<T>) -> Self {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform(p)).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Keeps the points for which `keep` returns true, preserving order.
    pub fn filter_indexed(&self, mut keep: impl FnMut(usize, &Vector3<T>) -> bool) -> Self {
        let mut points = Vec::new();
        let mut colors = self.colors.as_ref().map(|_| Vec::new());
        for (i, p) in self.points.iter().enumerate() {
            if keep(i, p) {
                points.push(*p);
                if let (Some(out), Some(src)) = (colors.as_mut(), self.colors.as_ref()) {
                    out.push(src[i]);
                }
            }
        }
        PointCloud { points, colors }
    }

    /// Appends `other`. Colors survive only when both clouds carry them.
    pub fn extend(&mut self, other: &PointCloud<T>) {
        let was_empty = self.points.is_empty();
        self.points.extend_from_slice(&other.points);
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| p.map(|x| U::lit(x.f64())))
                .collect(),
            colors: self.colors.clone(),
        }
    }

    /// One representative per occupied voxel: the member nearest the voxel's centroid.
    ///
    /// Output is sorted by voxel key, so it does not depend on input order except
    /// for exact distance ties (resolved toward the earlier input point).
    pub fn voxel_downsample(&self, voxel: T) -> Result<Self> {
        if !(voxel > T::zero()) {
            return Err(Error::InvalidArgument("voxel size must be positive".into()));
        }
        let key = |p: &Vector3<T>| -> [i64; 3] {
            [
                (p.x / voxel).floor().f64() as i64,
                (p.y / voxel).floor().f64() as i64,
                (p.z / voxel).floor().f64() as i64,
            ]
        };
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in self.points.iter().enumerate() {
            cells.entry(key(p)).or_default().push(i);
        }
        let mut keys: Vec<[i64; 3]> = cells.keys().copied().collect();
        keys.sort_unstable();
        let mut keep = Vec::with_capacity(keys.len());
        for k in keys {
            let members = &cells[&k];
            let n = T::from_usize_lossy(members.len());
            let centroid = members
                .iter()
                .fold(Vector3::zeros(), |acc, &i| acc + self.points[i])
                / n;
            let mut best = members[0];
            let mut best_d = (self.points[best] - centroid).norm_squared();
            for &i in &members[1..] {
                let d = (self.points[i] - centroid).norm_squared();
                if d < best_d || (d == best_d && i < best) {
                    best = i;
                    best_d = d;
                }
            }
            keep.push(best);
        }
        Ok(PointCloud {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| keep.iter().map(|&i| c[i]).collect()),
        })
    }
}
