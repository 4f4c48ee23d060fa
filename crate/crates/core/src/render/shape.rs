//! Analytic signed distance fields for the test objects.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: [f64; 3],
    },
    /// Square base in the shape-frame `xy` plane, apex at `(0, 0, height)`.
    Pyramid {
        base_half: f64,
        height: f64,
    },
    Union {
        parts: Vec<Shape>,
    },
}

/// A primitive placed in the object frame by `offset` (object-from-shape).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    #[serde(flatten)]
    pub primitive: Primitive,
    #[serde(default)]
    pub offset: Pose,
}

impl Shape {
    pub fn sphere(radius: f64) -> Self {
        Self::new(Primitive::Sphere { radius })
    }

    pub fn cuboid(half_extents: [f64; 3]) -> Self {
        Self::new(Primitive::Box { half_extents })
    }

    pub fn cube(half: f64) -> Self {
        Self::cuboid([half; 3])
    }

    pub fn pyramid(base_half: f64, height: f64) -> Self {
        Self::new(Primitive::Pyramid { base_half, height })
    }

    pub fn union(parts: Vec<Shape>) -> Self {
        Self::new(Primitive::Union { parts })
    }

    pub fn new(primitive: Primitive) -> Self {
        Self {
            primitive,
            offset: Pose::identity(),
        }
    }

    pub fn with_offset(mut self, offset: Pose) -> Self {
        self.offset = offset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match &self.primitive {
            Primitive::Sphere { radius } => *radius > 0.0,
            Primitive::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
            Primitive::Pyramid { base_half, height } => *base_half > 0.0 && *height > 0.0,
            Primitive::Union { parts } => {
                for p in parts {
                    p.validate()?;
                }
                !parts.is_empty()
            }
        };
        if !ok || !self.offset.is_finite() {
            return Err(Error::Config(format!("invalid shape parameters: {self:?}")));
        }
        Ok(())
    }

    /// Signed distance of an object-frame point; negative inside.
    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        let local = self.offset.inverse().transform_point(p);
        match &self.primitive {
            Primitive::Sphere { radius } => local.coords.norm() - radius,
            Primitive::Box { half_extents } => sd_box(&local.coords, half_extents),
            Primitive::Pyramid { base_half, height } => sd_pyramid(&local.coords, *base_half, *height),
            Primitive::Union { parts } => parts
                .iter()
                .map(|s| s.sdf(&local))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Outward unit normal from a central-difference SDF gradient.
    pub fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        let h = 1e-5;
        let d = |v: Vector3<f64>| self.sdf(&(p + v * h)) - self.sdf(&(p - v * h));
        let g = Vector3::new(d(Vector3::x()), d(Vector3::y()), d(Vector3::z())) / (2.0 * h);
        let n = g.norm();
        if n > 0.0 {
            g / n
        } else {
            Vector3::z()
        }
    }

    /// Point of the shape furthest along `dir` (object frame). Ties between
    /// vertices are averaged, so a face facing `dir` yields its centre.
    pub fn support(&self, dir: &Vector3<f64>) -> Point3<f64> {
        let local_dir = self.offset.rotation.transpose() * dir;
        let local = match &self.primitive {
            Primitive::Sphere { radius } => Point3::from(local_dir.normalize() * *radius),
            Primitive::Box { half_extents } => {
                let pick = |d: f64, h: f64| {
                    if d.abs() < 1e-9 {
                        0.0
                    } else {
                        h * d.signum()
                    }
                };
                Point3::new(
                    pick(local_dir.x, half_extents[0]),
                    pick(local_dir.y, half_extents[1]),
                    pick(local_dir.z, half_extents[2]),
                )
            }
            Primitive::Pyramid { base_half, height } => {
                let a = *base_half;
                let vertices = [
                    Point3::new(0.0, 0.0, *height),
                    Point3::new(a, a, 0.0),
                    Point3::new(-a, a, 0.0),
                    Point3::new(a, -a, 0.0),
                    Point3::new(-a, -a, 0.0),
                ];
                best_average(&vertices, &local_dir)
            }
            Primitive::Union { parts } => {
                let candidates: Vec<Point3<f64>> =
                    parts.iter().map(|s| s.support(&local_dir)).collect();
                best_average(&candidates, &local_dir)
            }
        };
        self.offset.transform_point(&local)
    }

    /// Radius of a ball about the object origin that contains the shape.
    pub fn bounding_radius(&self) -> f64 {
        let local = match &self.primitive {
            Primitive::Sphere { radius } => *radius,
            Primitive::Box { half_extents } => Vector3::from(*half_extents).norm(),
            Primitive::Pyramid { base_half, height } => {
                (2.0 * base_half * base_half).sqrt().max(*height)
            }
            Primitive::Union { parts } => parts
                .iter()
                .map(|p| p.bounding_radius())
                .fold(0.0, f64::max),
        };
        local + self.offset.translation.norm()
    }
}

fn best_average(points: &[Point3<f64>], dir: &Vector3<f64>) -> Point3<f64> {
    let best = points
        .iter()
        .map(|p| p.coords.dot(dir))
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = points.iter().map(|p| p.coords.norm()).fold(1.0, f64::max);
    let tied: Vec<_> = points
        .iter()
        .filter(|p| p.coords.dot(dir) > best - 1e-9 * scale)
        .collect();
    let sum = tied.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / tied.len() as f64)
}

fn sd_box(p: &Vector3<f64>, half: &[f64; 3]) -> f64 {
    let q = p.abs() - Vector3::from(*half);
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

/// Exact distance to a square pyramid (after Inigo Quilez's `sdPyramid`),
/// evaluated in units of the base side and rescaled.
fn sd_pyramid(p: &Vector3<f64>, base_half: f64, height: f64) -> f64 {
    let s = 2.0 * base_half;
    let h = height / s;
    // the reference formulation has its apex along +y
    let (mut px, py, mut pz) = ((p.x / s).abs(), p.z / s, (p.y / s).abs());
    if pz > px {
        std::mem::swap(&mut px, &mut pz);
    }
    px -= 0.5;
    pz -= 0.5;
    let m2 = h * h + 0.25;
    let qx = pz;
    let qy = h * py - 0.5 * px;
    let qz = h * px + 0.5 * py;
    let ss = (-qx).max(0.0);
    let t = ((qy - 0.5 * pz) / (m2 + 0.25)).clamp(0.0, 1.0);
    let a = m2 * (qx + ss) * (qx + ss) + qy * qy;
    let b = m2 * (qx + 0.5 * t) * (qx + 0.5 * t) + (qy - m2 * t) * (qy - m2 * t);
    let d2 = if qy.min(-qx * m2 - qy * 0.5) > 0.0 {
        0.0
    } else {
        a.min(b)
    };
    let sign = if qz.max(-py) >= 0.0 { 1.0 } else { -1.0 };
    let lateral = s * ((d2 + qz * qz) / m2).sqrt() * sign;
    // the lateral-face formula ignores the base square
    if p.z < 0.0 {
        let dx = (p.x.abs() - base_half).max(0.0);
        let dy = (p.y.abs() - base_half).max(0.0);
        lateral.abs().min((dx * dx + dy * dy + p.z * p.z).sqrt())
    } else if lateral < 0.0 {
        lateral.max(-p.z)
    } else {
        lateral
    }
}
