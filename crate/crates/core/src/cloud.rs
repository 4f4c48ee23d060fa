use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Coordinate frame a cloud is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Sensor,
    Object,
    World,
}

/// Points with unit normals, in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub frame: Frame,
    /// Time step the cloud was observed at, if it comes from a single frame.
    pub step: Option<usize>,
}

impl PointCloud {
    pub fn empty(frame: Frame) -> Self {
        Self {
            points: Vec::new(),
            normals: Vec::new(),
            frame,
            step: None,
        }
    }

    /// Builds a cloud, normalising the normals. Zero or non-finite normals
    /// are rejected.
    pub fn new(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>, frame: Frame) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::Argument(format!(
                "{} points but {} normals",
                points.len(),
                normals.len()
            )));
        }
        let mut normals = normals;
        for n in &mut normals {
            let len = n.norm();
            if !(len > 0.0 && len.is_finite()) {
                return Err(Error::Argument(format!("invalid normal {n:?}")));
            }
            *n /= len;
        }
        if points.iter().any(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::Argument("non-finite point".into()));
        }
        Ok(Self {
            points,
            normals,
            frame,
            step: None,
        })
    }

    pub fn with_step(mut self, step: usize) -> Self {
        self.step = Some(step);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Applies `pose` to every point and normal and retags the frame.
    pub fn transformed(&self, pose: &Pose, frame: Frame) -> Self {
        Self {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            normals: self
                .normals
                .iter()
                .map(|n| pose.transform_vector(n))
                .collect(),
            frame,
            step: self.step,
        }
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.normals.extend_from_slice(&other.normals);
    }
}
