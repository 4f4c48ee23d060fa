//! Pose-graph factors over object and end-effector poses, and a
//! Levenberg-Marquardt solver.
//!
//! Every residual is `log(measured^-1 * predicted)` divided by the factor's
//! sigmas, with `predicted` built from world-from-body poses.

mod skyline;
mod solver;

pub use solver::{optimize, optimize_with_fixed, LmParams, OptimizeStats};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{numerical_jacobian, ominus, DifferenceScheme, Pose, JACOBIAN_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Object,
    EndEffector,
}

/// Ordered by step first, so that sorted keys give a banded system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariableKey {
    pub step: usize,
    pub kind: VarKind,
}

impl VariableKey {
    pub fn object(step: usize) -> Self {
        Self {
            step,
            kind: VarKind::Object,
        }
    }

    pub fn end_effector(step: usize) -> Self {
        Self {
            step,
            kind: VarKind::EndEffector,
        }
    }
}

impl fmt::Display for VariableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.kind {
            VarKind::Object => 'o',
            VarKind::EndEffector => 'e',
        };
        write!(f, "{c}{}", self.step)
    }
}

/// Diagonal Gaussian noise: three rotational sigmas (rad) then three
/// translational sigmas (mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct NoiseModel {
    sigmas: [f64; 6],
}

impl TryFrom<[f64; 6]> for NoiseModel {
    type Error = Error;

    fn try_from(sigmas: [f64; 6]) -> Result<Self> {
        Self::new(sigmas)
    }
}

impl From<NoiseModel> for [f64; 6] {
    fn from(n: NoiseModel) -> Self {
        n.sigmas
    }
}

impl NoiseModel {
    pub fn new(sigmas: [f64; 6]) -> Result<Self> {
        if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("noise sigmas must be positive, got {sigmas:?}")));
        }
        Ok(Self { sigmas })
    }

    pub fn isotropic(rotation: f64, translation: f64) -> Result<Self> {
        Self::new([rotation, rotation, rotation, translation, translation, translation])
    }

    pub fn unit() -> Self {
        Self { sigmas: [1.0; 6] }
    }

    pub fn sigmas(&self) -> [f64; 6] {
        self.sigmas
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.sigmas.map(|s| s * c))
    }

    pub fn whiten(&self, v: &Vector6<f64>) -> Vector6<f64> {
        Vector6::from_fn(|i, _| v[i] / self.sigmas[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FactorKind {
    /// Relative sensor motion between consecutive steps, expressed in the
    /// object frame: `(o_{t-1}^-1 e_{t-1})^-1 (o_t^-1 e_t)`.
    ImageToImage {
        prev_object: VariableKey,
        prev_effector: VariableKey,
        object: VariableKey,
        effector: VariableKey,
        measured: Pose,
    },
    /// Object-from-sensor pose `o_t^-1 e_t` against the patch map.
    ImageToPatch {
        object: VariableKey,
        effector: VariableKey,
        measured: Pose,
    },
    /// Equal consecutive body-frame object velocities.
    ConstantVelocity {
        first: VariableKey,
        second: VariableKey,
        third: VariableKey,
    },
    EndEffectorPrior {
        key: VariableKey,
        measured: Pose,
    },
    VisionPrior {
        key: VariableKey,
        measured: Pose,
    },
    /// Odometry-style relative pose `from^-1 to`.
    Between {
        from: VariableKey,
        to: VariableKey,
        measured: Pose,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    #[serde(flatten)]
    pub kind: FactorKind,
    pub sigmas: NoiseModel,
}

fn object_from_sensor(o: &Pose, e: &Pose) -> Pose {
    o.inverse().compose(e)
}

impl Factor {
    pub fn new(kind: FactorKind, sigmas: NoiseModel) -> Self {
        Self { kind, sigmas }
    }

    pub fn image_to_image(step: usize, measured: Pose, sigmas: NoiseModel) -> Self {
        Self::new(
            FactorKind::ImageToImage {
                prev_object: VariableKey::object(step - 1),
                prev_effector: VariableKey::end_effector(step - 1),
                object: VariableKey::object(step),
                effector: VariableKey::end_effector(step),
                measured,
            },
            sigmas,
        )
    }

    pub fn image_to_patch(step: usize, measured: Pose, sigmas: NoiseModel) -> Self {
        Self::new(
            FactorKind::ImageToPatch {
                object: VariableKey::object(step),
                effector: VariableKey::end_effector(step),
                measured,
            },
            sigmas,
        )
    }

    pub fn constant_velocity(step: usize, sigmas: NoiseModel) -> Self {
        Self::new(
            FactorKind::ConstantVelocity {
                first: VariableKey::object(step - 2),
                second: VariableKey::object(step - 1),
                third: VariableKey::object(step),
            },
            sigmas,
        )
    }

    pub fn end_effector_prior(step: usize, measured: Pose, sigmas: NoiseModel) -> Self {
        Self::new(
            FactorKind::EndEffectorPrior {
                key: VariableKey::end_effector(step),
                measured,
            },
            sigmas,
        )
    }

    pub fn vision_prior(step: usize, measured: Pose, sigmas: NoiseModel) -> Self {
        Self::new(
            FactorKind::VisionPrior {
                key: VariableKey::object(step),
                measured,
            },
            sigmas,
        )
    }

    pub fn between(from: VariableKey, to: VariableKey, measured: Pose, sigmas: NoiseModel) -> Self {
        Self::new(FactorKind::Between { from, to, measured }, sigmas)
    }

    pub fn keys(&self) -> Vec<VariableKey> {
        match &self.kind {
            FactorKind::ImageToImage {
                prev_object,
                prev_effector,
                object,
                effector,
                ..
            } => vec![*prev_object, *prev_effector, *object, *effector],
            FactorKind::ImageToPatch { object, effector, .. } => vec![*object, *effector],
            FactorKind::ConstantVelocity { first, second, third } => vec![*first, *second, *third],
            FactorKind::EndEffectorPrior { key, .. } | FactorKind::VisionPrior { key, .. } => vec![*key],
            FactorKind::Between { from, to, .. } => vec![*from, *to],
        }
    }

    /// Unwhitened error for poses given in [`Factor::keys`] order.
    pub fn error(&self, poses: &[Pose]) -> Result<Vector6<f64>> {
        let twist = match &self.kind {
            FactorKind::ImageToImage { measured, .. } => {
                let prev = object_from_sensor(&poses[0], &poses[1]);
                let cur = object_from_sensor(&poses[2], &poses[3]);
                ominus(measured, &prev.inverse().compose(&cur))?
            }
            FactorKind::ImageToPatch { measured, .. } => ominus(measured, &object_from_sensor(&poses[0], &poses[1]))?,
            FactorKind::ConstantVelocity { .. } => {
                let v1 = poses[0].inverse().compose(&poses[1]);
                let v2 = poses[1].inverse().compose(&poses[2]);
                ominus(&v1, &v2)?
            }
            FactorKind::EndEffectorPrior { measured, .. } | FactorKind::VisionPrior { measured, .. } => {
                ominus(measured, &poses[0])?
            }
            FactorKind::Between { measured, .. } => ominus(measured, &poses[0].inverse().compose(&poses[1]))?,
        };
        Ok(twist.to_vector())
    }

    /// Whitened error for poses in key order.
    pub fn whitened(&self, poses: &[Pose]) -> Result<Vector6<f64>> {
        Ok(self.sigmas.whiten(&self.error(poses)?))
    }

    fn poses(&self, values: &Values) -> Result<Vec<Pose>> {
        self.keys().iter().map(|k| values.get(k).copied()).collect()
    }

    pub fn residual(&self, values: &Values) -> Result<Vector6<f64>> {
        self.whitened(&self.poses(values)?)
    }

    /// Whitened residual and one Jacobian block per key, taken with respect
    /// to right perturbations `x * exp(delta)`.
    pub fn linearize(&self, values: &Values) -> Result<LinearFactor> {
        let poses = self.poses(values)?;
        let residual = self.whitened(&poses)?;
        let jacobians = numerical_jacobian(|p| self.whitened(p), &poses, JACOBIAN_EPS, DifferenceScheme::Central)?;
        Ok(LinearFactor {
            keys: self.keys(),
            jacobians,
            residual,
        })
    }
}

/// Current estimate of every variable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Values {
    poses: BTreeMap<VariableKey, Pose>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VariableKey, pose: Pose) {
        self.poses.insert(key, pose);
    }

    pub fn get(&self, key: &VariableKey) -> Result<&Pose> {
        self.poses
            .get(key)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn contains(&self, key: &VariableKey) -> bool {
        self.poses.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &VariableKey> {
        self.poses.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableKey, &Pose)> {
        self.poses.iter()
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// `key -> [qw qx qy qz tx ty tz]`.
    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .poses
            .iter()
            .map(|(k, p)| (k.to_string(), serde_json::json!(p.to_array())))
            .collect();
        serde_json::Value::Object(map)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FactorGraph {
    pub factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, factor: Factor) {
        self.factors.push(factor);
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn keys(&self) -> BTreeSet<VariableKey> {
        self.factors.iter().flat_map(|f| f.keys()).collect()
    }

    /// Half the sum of squared whitened residuals.
    pub fn cost(&self, values: &Values) -> Result<f64> {
        let parts: Vec<f64> = self
            .factors
            .par_iter()
            .map(|f| f.residual(values).map(|r| r.norm_squared()))
            .collect::<Result<_>>()?;
        Ok(0.5 * parts.iter().sum::<f64>())
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(&self.factors)?)
    }
}

/// One factor's contribution to the linear system.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFactor {
    pub keys: Vec<VariableKey>,
    pub jacobians: Vec<Matrix6<f64>>,
    pub residual: Vector6<f64>,
}

/// Linearizes every factor, in parallel, preserving factor order.
pub fn linearize(graph: &FactorGraph, values: &Values) -> Result<Vec<LinearFactor>> {
    graph.factors.par_iter().map(|f| f.linearize(values)).collect()
}
