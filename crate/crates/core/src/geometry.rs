//! SE(3) pose algebra.
//!
//! A [`Pose`] maps body-frame coordinates into the world frame
//! (`x_world = R * x_body + t`). Perturbations are applied on the right,
//! so `oplus(a, xi) = a * exp(xi)` and `ominus(a, b) = log(a^-1 * b)`;
//! both operate in the body frame of `a`.
//!
//! Rotations are stored as orthonormal matrices. Composition does not
//! re-orthonormalize; long chains that need it can call
//! [`Pose::orthonormalized`]. Quaternions only appear at I/O boundaries.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Matrix6, Point3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Angles within this distance of pi are rejected by `log`.
const PI_SINGULARITY: f64 = 1e-9;

/// Default central-difference step for Jacobians on the manifold.
pub const JACOBIAN_EPS: f64 = 1e-6;

/// Rigid transform, world-from-body. Translation in millimetres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Tangent coordinates of SE(3): rotation (rad) then translation (mm).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub rotation: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [qw, qx, qy, qz, tx, ty, tz] = self.to_array();
        write!(
            f,
            "Pose(q=[{qw:.5}, {qx:.5}, {qy:.5}, {qz:.5}], t=[{tx:.4}, {ty:.4}, {tz:.4}])"
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::from_rotation(so3_exp(&(axis * (angle / n))))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vector3::z(), angle)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::new(q.to_rotation_matrix().into_inner(), translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let rot = nalgebra::Rotation3::from_matrix(&self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        // canonical sign: qw >= 0
        if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        }
    }

    /// `[qw, qx, qy, qz, tx, ty, tz]`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.quaternion();
        let t = self.translation;
        [q.w, q.i, q.j, q.k, t.x, t.y, t.z]
    }

    pub fn from_array(a: &[f64; 7]) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("pose array contains non-finite values".into()));
        }
        let q = nalgebra::Quaternion::new(a[0], a[1], a[2], a[3]);
        if q.norm() < 1e-12 {
            return Err(Error::Argument("pose quaternion has zero norm".into()));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Self::from_quaternion(&uq, Vector3::new(a[4], a[5], a[6])))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        inverse(self)
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Geodesic rotation angle in [0, pi].
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Projects the rotation back onto SO(3) through the quaternion.
    pub fn orthonormalized(&self) -> Pose {
        let rot = nalgebra::Rotation3::from_matrix(&self.rotation);
        Pose::new(rot.into_inner(), self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(deserializer)?;
        Pose::from_array(&a).map_err(serde::de::Error::custom)
    }
}

impl Twist {
    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let (w, v) = (self.rotation, self.translation);
        Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
    }

    pub fn from_slice(a: &[f64; 6]) -> Self {
        Self::from_vector(&Vector6::from_column_slice(a))
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn scaled(&self, s: f64) -> Twist {
        Twist::new(self.rotation * s, self.translation * s)
    }
}

impl Serialize for Twist {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.to_vector();
        [v[0], v[1], v[2], v[3], v[4], v[5]].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Twist {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 6]>::deserialize(deserializer)?;
        Ok(Twist::from_slice(&a))
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5 * vee(&(r - r.transpose())).norm();
    sin.atan2(cos)
}

/// Rodrigues formula.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (a, b) = if theta2 < 1e-12 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let skew = vee(&(r - r.transpose())); // 2 sin(theta) * axis
    let theta = rotation_angle(r);
    if theta < 1e-6 {
        // theta / (2 sin theta) ~ 1/2 + theta^2/12
        return Ok(skew * (0.5 + theta * theta / 12.0));
    }
    if PI - theta < PI_SINGULARITY {
        return Err(Error::Domain(format!(
            "rotation angle {theta} is at the pi singularity of log"
        )));
    }
    if PI - theta < 1e-2 {
        // Near pi the skew part vanishes; take the axis from the symmetric part,
        // (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T.
        let cos = theta.cos();
        let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
        let sym = sym / (1.0 - cos);
        let col = (0..3)
            .max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)]))
            .unwrap_or(0);
        let mut axis: Vector3<f64> = sym.column(col).into();
        axis /= axis.norm();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        return Ok(axis * theta);
    }
    Ok(skew * (theta / (2.0 * theta.sin())))
}

/// Left Jacobian of SO(3), the `V` matrix coupling translation in SE(3) exp.
fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let (b, c) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * b + k * k * c
}

fn so3_left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = hat(w);
    let c = if theta2 < 1e-10 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

pub fn inverse(a: &Pose) -> Pose {
    let rt = a.rotation.transpose();
    Pose::new(rt, -(rt * a.translation))
}

pub fn exp(xi: &Twist) -> Pose {
    Pose::new(
        so3_exp(&xi.rotation),
        so3_left_jacobian(&xi.rotation) * xi.translation,
    )
}

pub fn log(a: &Pose) -> Result<Twist> {
    let w = so3_log(&a.rotation)?;
    Ok(Twist::new(w, so3_left_jacobian_inv(&w) * a.translation))
}

/// `a * exp(xi)`.
pub fn oplus(a: &Pose, xi: &Twist) -> Pose {
    compose(a, &exp(xi))
}

/// `log(a^-1 * b)`: the body-frame twist taking `a` to `b`.
pub fn ominus(a: &Pose, b: &Pose) -> Result<Twist> {
    log(&compose(&inverse(a), b))
}

/// Finite-difference scheme for [`numerical_jacobian`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DifferenceScheme {
    Central,
    Forward,
}

/// Jacobian of a 6-vector valued function of several poses, one 6x6 block
/// per argument. Column `i` of block `k` perturbs coordinate `i` of pose `k`
/// through `oplus` by `eps`.
pub fn numerical_jacobian<F>(
    f: F,
    at: &[Pose],
    eps: f64,
    scheme: DifferenceScheme,
) -> Result<Vec<Matrix6<f64>>>
where
    F: Fn(&[Pose]) -> Result<Vector6<f64>>,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("jacobian step must be positive, got {eps}")));
    }
    let mut args = at.to_vec();
    let base = match scheme {
        DifferenceScheme::Forward => Some(f(&args)?),
        DifferenceScheme::Central => None,
    };
    let mut blocks = Vec::with_capacity(at.len());
    for k in 0..at.len() {
        let mut block = Matrix6::zeros();
        for i in 0..6 {
            let mut delta = Vector6::zeros();
            delta[i] = eps;
            args[k] = oplus(&at[k], &Twist::from_vector(&delta));
            let plus = f(&args)?;
            let column = match base {
                Some(ref f0) => (plus - f0) / eps,
                None => {
                    args[k] = oplus(&at[k], &Twist::from_vector(&(-delta)));
                    let minus = f(&args)?;
                    (plus - minus) / (2.0 * eps)
                }
            };
            block.set_column(i, &column);
        }
        args[k] = at[k];
        blocks.push(block);
    }
    Ok(blocks)
}

/// Jacobian of a pose-valued map, with output differences taken as
/// `ominus(f(at), f(perturbed))`.
pub fn numerical_jacobian_pose<F>(f: F, at: &Pose, eps: f64) -> Result<Matrix6<f64>>
where
    F: Fn(&Pose) -> Pose,
{
    let f0 = f(at);
    let blocks = numerical_jacobian(
        |p: &[Pose]| Ok(ominus(&f0, &f(&p[0]))?.to_vector()),
        std::slice::from_ref(at),
        eps,
        DifferenceScheme::Central,
    )?;
    Ok(blocks[0])
}
