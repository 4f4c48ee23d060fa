use nalgebra::{Matrix4, Point3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// How image pixels and depths map to sensor-frame coordinates.
///
/// The sensor frame has its origin at the gel centre, `x` along image
/// columns, `y` along image rows and `+z` pointing out of the gel towards
/// the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraModel {
    Orthographic,
    /// OpenGL-style perspective camera: a symmetric frustum `[-right, right]
    /// x [-top, top]` at the near plane, and `view` placing the eye frame
    /// (looking down its own `-z`) in the sensor frame.
    Clip {
        near: f64,
        far: f64,
        right: f64,
        top: f64,
        view: Pose,
    },
}

impl CameraModel {
    /// Perspective camera behind the gel at `distance` whose frustum spans the
    /// gel extent exactly at the undisturbed gel plane.
    pub fn clip_for_gel(extent_mm: [f64; 2], near: f64, far: f64, distance: f64) -> Self {
        // eye -z maps to sensor +z, eye +y to sensor -y (row 0 is the top row)
        let view = Pose::new(
            nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0),
            Vector3::new(0.0, 0.0, -distance),
        );
        CameraModel::Clip {
            near,
            far,
            right: near * 0.5 * extent_mm[0] / distance,
            top: near * 0.5 * extent_mm[1] / distance,
            view,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GelConfig {
    /// Image size in pixels.
    pub width: usize,
    pub height: usize,
    /// Physical gel size in millimetres (along x, along y).
    pub extent_mm: [f64; 2],
    pub max_indentation: f64,
    pub camera: CameraModel,
}

impl Default for GelConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            extent_mm: [20.0, 20.0],
            max_indentation: 1.5,
            camera: CameraModel::Orthographic,
        }
    }
}

impl GelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::Config(format!(
                "gel image must be at least 3x3 pixels, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.extent_mm[0] > 0.0 && self.extent_mm[1] > 0.0) {
            return Err(Error::Config("gel extent must be positive".into()));
        }
        if !(self.max_indentation > 0.0) {
            return Err(Error::Config("max indentation must be positive".into()));
        }
        if let CameraModel::Clip {
            near,
            far,
            right,
            top,
            ..
        } = self.camera
        {
            if !(near > 0.0 && near < far) {
                return Err(Error::Config(format!(
                    "clip camera needs 0 < near < far, got near={near} far={far}"
                )));
            }
            if !(right > 0.0 && top > 0.0) {
                return Err(Error::Config("clip frustum must have positive size".into()));
            }
        }
        Ok(())
    }

    /// Millimetres per pixel along x and y.
    pub fn pixel_pitch(&self) -> (f64, f64) {
        (
            self.extent_mm[0] / self.width as f64,
            self.extent_mm[1] / self.height as f64,
        )
    }

    /// Pitch of square pixels; rejects anisotropic gels.
    pub fn square_pitch(&self) -> Result<f64> {
        let (px, py) = self.pixel_pitch();
        if (px - py).abs() > 1e-9 * px.max(py) {
            return Err(Error::Argument(format!(
                "reconstruction needs square pixels, got pitch {px} x {py} mm"
            )));
        }
        Ok(px)
    }

    /// Sensor-frame `(x, y)` of a pixel centre on the undisturbed gel plane.
    pub fn pixel_center(&self, x: usize, y: usize) -> (f64, f64) {
        let (px, py) = self.pixel_pitch();
        (
            (x as f64 + 0.5 - 0.5 * self.width as f64) * px,
            (y as f64 + 0.5 - 0.5 * self.height as f64) * py,
        )
    }

    /// Continuous pixel coordinates of a sensor-frame `(x, y)`.
    pub fn to_pixel(&self, sx: f64, sy: f64) -> (f64, f64) {
        let (px, py) = self.pixel_pitch();
        (
            sx / px + 0.5 * self.width as f64 - 0.5,
            sy / py + 0.5 * self.height as f64 - 0.5,
        )
    }

    /// Sensor-frame point seen at pixel `(x, y)` with indentation `depth`.
    pub fn unproject(&self, x: usize, y: usize, depth: f64) -> Point3<f64> {
        match &self.camera {
            CameraModel::Orthographic => {
                let (sx, sy) = self.pixel_center(x, y);
                Point3::new(sx, sy, -depth)
            }
            CameraModel::Clip {
                near,
                far,
                right,
                top,
                view,
            } => {
                let (n, f) = (*near, *far);
                // distance from the eye along its view axis to the gel surface point
                let distance = -view.translation.z - depth;
                let ndc_x = 2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0;
                let ndc_y = 1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64;
                let ndc_z = ((f + n) * distance - 2.0 * f * n) / ((f - n) * distance);
                let proj = frustum(-right, *right, -top, *top, n, f);
                let inv = proj
                    .try_inverse()
                    .expect("frustum with near < far is invertible");
                let eye_h = inv * Vector4::new(ndc_x, ndc_y, ndc_z, 1.0);
                let eye = Point3::new(eye_h.x / eye_h.w, eye_h.y / eye_h.w, eye_h.z / eye_h.w);
                view.transform_point(&eye)
            }
        }
    }
}

/// `glFrustum` projection matrix.
fn frustum(l: f64, r: f64, b: f64, t: f64, n: f64, f: f64) -> Matrix4<f64> {
    Matrix4::new(
        2.0 * n / (r - l),
        0.0,
        (r + l) / (r - l),
        0.0,
        0.0,
        2.0 * n / (t - b),
        (t + b) / (t - b),
        0.0,
        0.0,
        0.0,
        -(f + n) / (f - n),
        -2.0 * f * n / (f - n),
        0.0,
        0.0,
        -1.0,
        0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        GelConfig::default().validate().unwrap();
        let (px, py) = GelConfig::default().pixel_pitch();
        assert_eq!(px, 20.0 / 64.0);
        assert_eq!(px, py);
    }

    #[test]
    fn rejects_bad_configs() {
        let g = GelConfig {
            extent_mm: [0.0, 20.0],
            ..GelConfig::default()
        };
        assert!(g.validate().is_err());
        let mut g = GelConfig::default();
        g.camera = CameraModel::clip_for_gel(g.extent_mm, 50.0, 1.0, 30.0);
        assert!(g.validate().is_err());
    }

    #[test]
    fn odd_image_has_centered_pixel() {
        let g = GelConfig {
            width: 5,
            height: 5,
            extent_mm: [5.0, 5.0],
            ..GelConfig::default()
        };
        assert_eq!(g.pixel_center(2, 2), (0.0, 0.0));
        assert_eq!(g.to_pixel(0.0, 0.0), (2.0, 2.0));
        let p = g.unproject(2, 2, 0.7);
        assert_eq!(p, Point3::new(0.0, 0.0, -0.7));
    }

    #[test]
    fn clip_model_matches_orthographic_on_gel_plane() {
        let ortho = GelConfig::default();
        let clip = GelConfig {
            camera: CameraModel::clip_for_gel(ortho.extent_mm, 1.0, 50.0, 40.0),
            ..ortho.clone()
        };
        clip.validate().unwrap();
        for (x, y) in [(0, 0), (10, 50), (31, 32), (63, 63)] {
            let a = ortho.unproject(x, y, 0.0);
            let b = clip.unproject(x, y, 0.0);
            assert!((a - b).norm() < 1e-9, "{x},{y}: {a} vs {b}");
        }
    }
}
