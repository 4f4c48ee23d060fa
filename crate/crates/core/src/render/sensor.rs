//! Idealised tactile sensor: contact depth, gel normals and a noise model
//! standing in for a learned image-to-normal network.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::gel::GelConfig;
use super::shape::Shape;
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose};
use crate::image::{ContactMask, DepthImage, Grid, NormalImage, FLAT_NORMAL};

const HIT_TOLERANCE: f64 = 1e-7;
const MAX_MARCH_STEPS: usize = 512;

/// Penetration of the object below the gel plane for every pixel.
///
/// Each pixel casts a ray along the sensor `+z` axis starting
/// `max_indentation` below the gel plane; the first SDF root along that ray
/// gives the indentation. Pixels whose ray starts inside the object saturate
/// at `max_indentation`.
pub fn render_depth(shape: &Shape, object_pose: &Pose, sensor_pose: &Pose, gel: &GelConfig) -> DepthImage {
    let object_from_sensor = object_pose.inverse().compose(sensor_pose);
    let dir = object_from_sensor.transform_vector(&Vector3::z());
    let max = gel.max_indentation;

    let mut depth = Grid::filled(gel.width, gel.height, 0.0);
    let mut mask = ContactMask::empty(gel.width, gel.height);
    for y in 0..gel.height {
        for x in 0..gel.width {
            let (sx, sy) = gel.pixel_center(x, y);
            let origin = object_from_sensor.transform_point(&Point3::new(sx, sy, -max));
            let d = match march(shape, &origin, &dir, max) {
                Some(travel) => max - travel,
                None => 0.0,
            };
            if d > 0.0 {
                depth.set(x, y, d.min(max));
                mask.set(x, y, true);
            }
        }
    }
    DepthImage { depth, mask }
}

/// Distance travelled along `dir` from `origin` to the first surface crossing,
/// if it happens within `limit`.
fn march(shape: &Shape, origin: &Point3<f64>, dir: &Vector3<f64>, limit: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..MAX_MARCH_STEPS {
        let d = shape.sdf(&(origin + dir * t));
        if d <= HIT_TOLERANCE {
            return Some(t);
        }
        t += d;
        if t >= limit {
            return None;
        }
    }
    None
}

/// Gel surface normals from the depth image.
///
/// The deformed gel occupies `z = -depth(x, y)` in the sensor frame, so its
/// outward normal is `(dz/dx, dz/dy, 1)` normalised, with `z` the depth.
/// Gradients use central differences scaled by the pixel pitch. Pixels on the
/// image border or on the edge of the contact region use one-sided
/// differences towards their in-contact neighbour, so the slope of the kink
/// at the contact rim is not smeared into the rim pixels.
pub fn depth_to_normals(depth: &DepthImage, gel: &GelConfig) -> NormalImage {
    let (w, h) = depth.dims();
    let (px, py) = gel.pixel_pitch();
    let z = &depth.depth;
    let m = &depth.mask;
    // derivative along one axis given the pixel's neighbours (if inside the image)
    let derivative = |c: f64, lo: Option<(f64, bool)>, hi: Option<(f64, bool)>, pitch: f64| match (lo, hi) {
        (Some((l, true)), Some((r, true))) => (r - l) / (2.0 * pitch),
        (Some((l, true)), _) => (c - l) / pitch,
        (_, Some((r, true))) => (r - c) / pitch,
        (Some((l, _)), Some((r, _))) => (r - l) / (2.0 * pitch),
        (Some((l, _)), None) => (c - l) / pitch,
        (None, Some((r, _))) => (r - c) / pitch,
        (None, None) => 0.0,
    };
    let at = |x: usize, y: usize| (*z.get(x, y), *m.get(x, y));
    let normals = Grid::from_fn(w, h, |x, y| {
        if !*m.get(x, y) {
            return FLAT_NORMAL;
        }
        let c = *z.get(x, y);
        let p = derivative(
            c,
            (x > 0).then(|| at(x - 1, y)),
            (x + 1 < w).then(|| at(x + 1, y)),
            px,
        );
        let q = derivative(
            c,
            (y > 0).then(|| at(x, y - 1)),
            (y + 1 < h).then(|| at(x, y + 1)),
            py,
        );
        Vector3::new(p, q, 1.0).normalize()
    });
    NormalImage {
        normals,
        mask: depth.mask.clone(),
    }
}

/// Rotates every masked normal by a random angle `|N(0, sigma)|` about a
/// uniformly chosen axis perpendicular to it.
pub fn perturb_normals(normals: &NormalImage, sigma: f64, seed: u64) -> Result<NormalImage> {
    if !(sigma >= 0.0) {
        return Err(Error::Argument(format!("normal noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(normals.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
    let heading = Uniform::new(0.0, std::f64::consts::TAU).map_err(|e| Error::Argument(e.to_string()))?;
    let mut out = normals.clone();
    for (n, &m) in out.normals.as_mut_slice().iter_mut().zip(normals.mask.as_slice()) {
        if !m {
            continue;
        }
        let (u, v) = tangent_basis(n);
        let phi = heading.sample(&mut rng);
        let axis = u * phi.cos() + v * phi.sin();
        let theta: f64 = angle.sample(&mut rng);
        *n = (so3_exp(&(axis * theta.abs())) * *n).normalize();
    }
    Ok(out)
}

/// Two unit vectors completing `n` to an orthonormal basis.
pub(crate) fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    (u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::contact_touches_border;

    /// Sphere of radius `r` centred above the gel centre, indented by `d`.
    pub(crate) fn sphere_setup(r: f64, d: f64) -> (Shape, Pose, Pose) {
        (Shape::sphere(r), Pose::from_translation(0.0, 0.0, r - d), Pose::identity())
    }

    fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn no_contact_gives_empty_image() {
        let gel = GelConfig::default();
        let (shape, _, sensor) = sphere_setup(6.35, 1.0);
        let far = Pose::from_translation(0.0, 0.0, 50.0);
        let img = render_depth(&shape, &far, &sensor, &gel);
        assert!(!img.mask.any());
        assert!(img.depth.as_slice().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn sphere_cap_matches_analytic_profile() {
        let gel = GelConfig::default();
        let (r, d) = (6.35, 1.0);
        let (shape, obj, sensor) = sphere_setup(r, d);
        let img = render_depth(&shape, &obj, &sensor, &gel);
        let rim = (2.0 * r * d - d * d).sqrt();
        let mut max_err: f64 = 0.0;
        for (x, y, &z) in img.depth.indexed() {
            let (sx, sy) = gel.pixel_center(x, y);
            let rho = (sx * sx + sy * sy).sqrt();
            let expected = if rho <= rim { d - (r - (r * r - rho * rho).sqrt()) } else { 0.0 };
            max_err = max_err.max((z - expected).abs());
            assert_eq!(*img.mask.get(x, y), expected > 0.0);
        }
        assert!(max_err < 1e-3, "max error {max_err}");
        assert!(!contact_touches_border(&img.mask));
    }

    #[test]
    fn flat_box_face_gives_constant_depth() {
        let gel = GelConfig::default();
        let d = 0.8;
        let shape = Shape::cuboid([4.0, 3.0, 5.0]);
        let obj = Pose::from_translation(0.0, 0.0, 5.0 - d);
        let img = render_depth(&shape, &obj, &Pose::identity(), &gel);
        for (x, y, &z) in img.depth.indexed() {
            let (sx, sy) = gel.pixel_center(x, y);
            let inside = sx.abs() < 4.0 && sy.abs() < 3.0;
            if inside {
                assert!((z - d).abs() < 1e-6, "{x},{y}: {z}");
            } else {
                assert_eq!(z, 0.0);
            }
        }
    }

    #[test]
    fn deep_contact_saturates() {
        let gel = GelConfig::default();
        let (shape, obj, sensor) = sphere_setup(6.35, 3.0);
        let img = render_depth(&shape, &obj, &sensor, &gel);
        assert!((img.max_depth() - gel.max_indentation).abs() < 1e-12);
    }

    #[test]
    fn zero_depth_gives_flat_normals() {
        let gel = GelConfig::default();
        let n = depth_to_normals(&DepthImage::zeros(64, 64), &gel);
        assert!(n.normals.as_slice().iter().all(|v| *v == FLAT_NORMAL));
    }

    #[test]
    fn ramp_gives_constant_normal() {
        let gel = GelConfig::default();
        let (px, _) = gel.pixel_pitch();
        let a = 0.3;
        let depth = Grid::from_fn(64, 64, |x, _| 1.0 + a * x as f64 * px);
        let mask = Grid::filled(64, 64, true);
        let n = depth_to_normals(&DepthImage::new(depth, mask).unwrap(), &gel);
        let expected = Vector3::new(a, 0.0, 1.0).normalize();
        for v in n.normals.as_slice() {
            assert!((v - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn cap_normals_match_sphere_normals() {
        let gel = GelConfig::default();
        let (r, d) = (6.35, 1.0);
        let (shape, obj, sensor) = sphere_setup(r, d);
        let img = render_depth(&shape, &obj, &sensor, &gel);
        let normals = depth_to_normals(&img, &gel);
        let center = Point3::new(0.0, 0.0, r - d);
        let rim = (2.0 * r * d - d * d).sqrt();
        let mut checked = 0;
        for (x, y, n) in normals.normals.indexed() {
            let (sx, sy) = gel.pixel_center(x, y);
            let rho = (sx * sx + sy * sy).sqrt();
            if !*img.mask.get(x, y) || rho > rim - 2.0 * gel.pixel_pitch().0 {
                continue;
            }
            let surface = Point3::new(sx, sy, -*img.depth.get(x, y));
            // gel normal faces the sphere centre
            let expected = center - surface;
            assert!(angle_between(n, &expected) < 1f64.to_radians());
            assert!(n.z > 0.0);
            checked += 1;
        }
        assert!(checked > 200);
    }

    #[test]
    fn perturbation_behaviour() {
        let gel = GelConfig::default();
        let (shape, obj, sensor) = sphere_setup(6.35, 1.0);
        let normals = depth_to_normals(&render_depth(&shape, &obj, &sensor, &gel), &gel);
        assert_eq!(perturb_normals(&normals, 0.0, 1).unwrap(), normals);
        let a = perturb_normals(&normals, 0.05, 9).unwrap();
        let b = perturb_normals(&normals, 0.05, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, perturb_normals(&normals, 0.05, 10).unwrap());
        for (n, &m) in a.normals.as_slice().iter().zip(a.mask.as_slice()) {
            assert!((n.norm() - 1.0).abs() < 1e-9);
            if !m {
                assert_eq!(*n, FLAT_NORMAL);
            }
        }
        assert!(perturb_normals(&normals, -1.0, 0).is_err());
    }

    #[test]
    fn perturbation_mean_angle_matches_half_normal() {
        let sigma = 0.05;
        let normals = NormalImage::new(
            Grid::filled(100, 100, Vector3::new(0.2, -0.1, 1.0).normalize()),
            Grid::filled(100, 100, true),
        )
        .unwrap();
        let out = perturb_normals(&normals, sigma, 1234).unwrap();
        let mean: f64 = out
            .normals
            .as_slice()
            .iter()
            .zip(normals.normals.as_slice())
            .map(|(a, b)| angle_between(a, b))
            .sum::<f64>()
            / 10_000.0;
        let expected = (2.0 / std::f64::consts::PI).sqrt() * sigma;
        assert!((mean - expected).abs() < 0.2 * expected, "mean {mean} vs {expected}");
    }
}
