//! Local patch map built from keyframe clouds of one contact episode.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::registration::KdTree;

pub const DEFAULT_VOXEL_SIZE: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KeyframePolicy {
    /// Every `interval`-th step.
    FixedInterval { interval: usize },
    /// Whenever less than `threshold` of the new cloud overlaps the map.
    Overlap { threshold: f64 },
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        KeyframePolicy::FixedInterval { interval: 5 }
    }
}

impl KeyframePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KeyframePolicy::FixedInterval { interval: 0 } => {
                Err(Error::Config("keyframe interval must be at least 1".into()))
            }
            KeyframePolicy::Overlap { threshold } if !(threshold > 0.0 && threshold < 1.0) => Err(Error::Config(
                format!("overlap threshold must lie in (0, 1), got {threshold}"),
            )),
            _ => Ok(()),
        }
    }
}

pub fn should_add_keyframe(policy: &KeyframePolicy, step: usize, overlap: Option<f64>) -> Result<bool> {
    policy.validate()?;
    match *policy {
        KeyframePolicy::FixedInterval { interval } => Ok(step.is_multiple_of(interval)),
        KeyframePolicy::Overlap { threshold } => match overlap {
            Some(o) => Ok(o < threshold),
            None => Err(Error::Argument("overlap keyframe policy needs a measured overlap".into())),
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeRecord {
    pub step: usize,
    /// Sensor-frame cloud as observed.
    pub cloud: PointCloud,
    /// Estimate used to place the cloud in the map.
    pub object_from_sensor: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchMap {
    pub cloud: PointCloud,
    pub keyframes: Vec<KeyframeRecord>,
    pub voxel_size: f64,
}

impl Default for PatchMap {
    fn default() -> Self {
        Self::new(DEFAULT_VOXEL_SIZE)
    }
}

impl PatchMap {
    pub fn new(voxel_size: f64) -> Self {
        Self {
            cloud: PointCloud::empty(Frame::Object),
            keyframes: Vec::new(),
            voxel_size,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    /// Places a sensor-frame cloud in the object frame and merges it in.
    pub fn fuse(&mut self, cloud: &PointCloud, object_from_sensor: &Pose) -> Result<()> {
        if cloud.frame != Frame::Sensor {
            return Err(Error::Argument(format!(
                "keyframe clouds must be in the sensor frame, got {:?}",
                cloud.frame
            )));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::Config(format!("voxel size must be positive, got {}", self.voxel_size)));
        }
        let mut merged = self.cloud.clone();
        merged.extend(&cloud.transformed(object_from_sensor, Frame::Object));
        self.cloud = voxel_downsample(&merged, self.voxel_size);
        self.keyframes.push(KeyframeRecord {
            step: cloud.step.unwrap_or(self.keyframes.len()),
            cloud: cloud.clone(),
            object_from_sensor: *object_from_sensor,
        });
        Ok(())
    }

    pub fn write_ply(&self, path: &Path) -> Result<()> {
        crate::io::write_ply(path, &self.cloud.points, &self.cloud.normals)
    }
}

pub fn fuse_keyframe(map: &PatchMap, cloud: &PointCloud, object_from_sensor: &Pose) -> Result<PatchMap> {
    let mut out = map.clone();
    out.fuse(cloud, object_from_sensor)?;
    Ok(out)
}

/// Fraction of `cloud` points with a map point within `radius`.
pub fn overlap_fraction(cloud: &PointCloud, map: &PatchMap, radius: f64) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::Argument("overlap of an empty cloud is undefined".into()));
    }
    if map.is_empty() {
        return Ok(0.0);
    }
    let tree = KdTree::new(&map.cloud.points);
    let hits = cloud
        .points
        .iter()
        .filter(|p| tree.nearest(p).is_some_and(|(_, d2)| d2 <= radius * radius))
        .count();
    Ok(hits as f64 / cloud.len() as f64)
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Point3<f64>, size: f64) -> Cell {
    (
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    )
}

/// One point per occupied voxel (the centroid, with the averaged normal),
/// then a greedy pass that drops points closer than half a voxel to a kept
/// one. Output order follows the voxel index, so results are deterministic.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> PointCloud {
    let mut cells: BTreeMap<Cell, (Vector3<f64>, Vector3<f64>, usize)> = BTreeMap::new();
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        let e = cells
            .entry(cell_of(p, voxel))
            .or_insert((Vector3::zeros(), Vector3::zeros(), 0));
        e.0 += p.coords;
        e.1 += n;
        e.2 += 1;
    }
    let min_gap = 0.5 * voxel;
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    let mut out = PointCloud::empty(cloud.frame);
    out.step = cloud.step;
    for (sum, nsum, count) in cells.into_values() {
        let p = Point3::from(sum / count as f64);
        let c = cell_of(&p, min_gap);
        let crowded = (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                (-1..=1).any(|dz| {
                    grid.get(&(c.0 + dx, c.1 + dy, c.2 + dz)).is_some_and(|ids| {
                        ids.iter().any(|&i| (out.points[i] - p).norm() < min_gap)
                    })
                })
            })
        });
        if crowded {
            continue;
        }
        let n = if nsum.norm() > 1e-12 { nsum.normalize() } else { Vector3::z() };
        grid.entry(c).or_default().push(out.points.len());
        out.points.push(p);
        out.normals.push(n);
    }
    out
}
