//! Normal image to depth map to sensor-frame point cloud.

mod dst;

pub use dst::{dst2, idst2};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::image::{ContactMask, DepthImage, Grid, NormalImage};
use crate::render::GelConfig;

/// Lower bound on `n_z` before dividing; caps slopes at 20.
pub const MIN_NORMAL_Z: f64 = 0.05;

/// Depth gradients `p = dz/dx`, `q = dz/dy` (mm per mm).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub p: Grid<f64>,
    pub q: Grid<f64>,
    pub mask: ContactMask,
}

impl GradientField {
    pub fn new(p: Grid<f64>, q: Grid<f64>, mask: ContactMask) -> Result<Self> {
        if p.dims() != q.dims() || p.dims() != mask.dims() {
            return Err(Error::Argument(format!(
                "gradient components {:?}, {:?} and mask {:?} differ in size",
                p.dims(),
                q.dims(),
                mask.dims()
            )));
        }
        Ok(Self { p, q, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }
}

pub fn normals_to_gradients(normals: &NormalImage) -> GradientField {
    let mask = normals.mask.clone();
    let (w, h) = normals.dims();
    let ratio = |x: usize, y: usize, c: usize| {
        if !*mask.get(x, y) {
            return 0.0;
        }
        let n = normals.normals.get(x, y);
        n[c] / n.z.max(MIN_NORMAL_Z)
    };
    GradientField {
        p: Grid::from_fn(w, h, |x, y| ratio(x, y, 0)),
        q: Grid::from_fn(w, h, |x, y| ratio(x, y, 1)),
        mask,
    }
}

/// Central-difference divergence `dp/dx + dq/dy` on interior pixels.
fn divergence(grad: &GradientField, pitch: f64) -> Grid<f64> {
    let (w, h) = grad.dims();
    Grid::from_fn(w, h, |x, y| {
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            return 0.0;
        }
        (grad.p.get(x + 1, y) - grad.p.get(x - 1, y) + grad.q.get(x, y + 1) - grad.q.get(x, y - 1)) / (2.0 * pitch)
    })
}

/// Solves the 5-point Poisson equation `lap z = div(p, q)` with `z = 0` on the
/// image border, over the whole image.
pub fn poisson_solve_raw(grad: &GradientField, pixel_pitch: f64) -> Result<Grid<f64>> {
    let (w, h) = grad.dims();
    if w < 3 || h < 3 {
        return Err(Error::Argument(format!("Poisson solve needs at least 3x3 pixels, got {w}x{h}")));
    }
    if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
        return Err(Error::Argument(format!("pixel pitch must be positive, got {pixel_pitch}")));
    }
    if grad
        .p
        .as_slice()
        .iter()
        .chain(grad.q.as_slice())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Argument("gradient field contains non-finite values".into()));
    }
    let div = divergence(grad, pixel_pitch);
    let (m, n) = (w - 2, h - 2);
    let h2 = pixel_pitch * pixel_pitch;
    let rhs = Grid::from_fn(m, n, |x, y| h2 * div.get(x + 1, y + 1));
    let mut coeffs = dst2(&rhs)?;
    let cx: Vec<f64> = (1..=m)
        .map(|u| 2.0 * (std::f64::consts::PI * u as f64 / (m + 1) as f64).cos())
        .collect();
    let cy: Vec<f64> = (1..=n)
        .map(|v| 2.0 * (std::f64::consts::PI * v as f64 / (n + 1) as f64).cos())
        .collect();
    for v in 0..n {
        for u in 0..m {
            *coeffs.get_mut(u, v) /= cx[u] + cy[v] - 4.0;
        }
    }
    let interior = idst2(&coeffs)?;
    Ok(Grid::from_fn(w, h, |x, y| {
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            0.0
        } else {
            *interior.get(x - 1, y - 1)
        }
    }))
}

/// Integrates a gradient field into a depth map.
///
/// The image border is held at `boundary_value` during the solve; the result
/// is then shifted so that the pixels outside the contact mask average to
/// `boundary_value`, and those pixels are reported as exactly zero.
pub fn poisson_solve(grad: &GradientField, pixel_pitch: f64, boundary_value: f64) -> Result<DepthImage> {
    if !boundary_value.is_finite() {
        return Err(Error::Argument("boundary value must be finite".into()));
    }
    let mut z = poisson_solve_raw(grad, pixel_pitch)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (v, &m) in z.as_slice().iter().zip(grad.mask.as_slice()) {
        if !m {
            sum += v;
            count += 1;
        }
    }
    let shift = if count > 0 { -sum / count as f64 } else { 0.0 };
    for (v, &m) in z.as_mut_slice().iter_mut().zip(grad.mask.as_slice()) {
        *v = if m { *v + shift + boundary_value } else { 0.0 };
    }
    DepthImage::new(z, grad.mask.clone())
}

/// Unprojects every contact pixel into a sensor-frame point carrying its normal.
pub fn depth_to_pointcloud(depth: &DepthImage, normals: &NormalImage, gel: &GelConfig) -> Result<PointCloud> {
    if depth.dims() != normals.dims() || depth.dims() != (gel.width, gel.height) {
        return Err(Error::Argument(format!(
            "depth {:?}, normals {:?} and gel {:?} differ in size",
            depth.dims(),
            normals.dims(),
            (gel.width, gel.height)
        )));
    }
    if depth.mask != normals.mask {
        return Err(Error::Argument("depth and normal masks differ".into()));
    }
    let mut points = Vec::with_capacity(depth.mask.count());
    let mut ns = Vec::with_capacity(points.capacity());
    for (x, y, &m) in depth.mask.indexed() {
        if m {
            points.push(gel.unproject(x, y, *depth.depth.get(x, y)));
            ns.push(*normals.normals.get(x, y));
        }
    }
    PointCloud::new(points, ns, Frame::Sensor)
}

/// Full pipeline for one frame, with the undisturbed gel as boundary.
pub fn reconstruct_frame(normals: &NormalImage, gel: &GelConfig) -> Result<(DepthImage, PointCloud)> {
    let grad = normals_to_gradients(normals);
    let depth = poisson_solve(&grad, gel.square_pitch()?, 0.0)?;
    let cloud = depth_to_pointcloud(&depth, normals, gel)?;
    Ok((depth, cloud))
}
