//! Per-step tracking loop: reconstruct, register, add factors, optimize.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::factors::{optimize_with_fixed, Factor, FactorGraph, LmParams, NoiseModel, Values, VariableKey};
use crate::geometry::Pose;
use crate::image::{contact_touches_border, NormalImage};
use crate::patchmap::{overlap_fraction, should_add_keyframe, KeyframePolicy, PatchMap};
use crate::reconstruct::reconstruct_frame;
use crate::registration::{icp_register, ICPParams, ICPResult};
use crate::render::{Episode, GelConfig, PoseSigmas, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrackerMode {
    #[serde(rename = "constvel")]
    ConstVel,
    #[serde(rename = "im2im")]
    ImageToImage,
    #[serde(rename = "patchgraph")]
    PatchGraph,
    #[serde(rename = "gtpatch")]
    GroundtruthPatch,
}

impl TrackerMode {
    pub const ALL: [TrackerMode; 4] = [
        TrackerMode::ConstVel,
        TrackerMode::ImageToImage,
        TrackerMode::PatchGraph,
        TrackerMode::GroundtruthPatch,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrackerMode::ConstVel => "constvel",
            TrackerMode::ImageToImage => "im2im",
            TrackerMode::PatchGraph => "patchgraph",
            TrackerMode::GroundtruthPatch => "gtpatch",
        }
    }
}

impl fmt::Display for TrackerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrackerMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown tracker mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorSigmas {
    pub eff: PoseSigmas,
    pub vis: PoseSigmas,
    pub im2im: PoseSigmas,
    pub im2patch: PoseSigmas,
    pub const_vel: PoseSigmas,
}

impl Default for FactorSigmas {
    fn default() -> Self {
        Self {
            eff: PoseSigmas::new(0.01, 1.0),
            vis: PoseSigmas::new(0.05, 2.0),
            im2im: PoseSigmas::new(0.02, 0.5),
            im2patch: PoseSigmas::new(0.01, 0.3),
            const_vel: PoseSigmas::new(0.05, 2.0),
        }
    }
}

struct NoiseModels {
    eff: NoiseModel,
    vis: NoiseModel,
    im2im: NoiseModel,
    im2patch: NoiseModel,
    const_vel: NoiseModel,
}

impl FactorSigmas {
    fn models(&self) -> Result<NoiseModels> {
        let m = |s: &PoseSigmas| NoiseModel::new(s.as_array());
        Ok(NoiseModels {
            eff: m(&self.eff)?,
            vis: m(&self.vis)?,
            im2im: m(&self.im2im)?,
            im2patch: m(&self.im2patch)?,
            const_vel: m(&self.const_vel)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub sigmas: FactorSigmas,
    pub icp: ICPParams,
    pub optimizer: LmParams,
    pub keyframes: KeyframePolicy,
    pub voxel_size: f64,
    /// Neighbour radius (mm) when measuring overlap for the overlap policy.
    pub overlap_radius: f64,
    /// Add image-to-image factors in PatchGraph mode too.
    pub patch_image_to_image: bool,
    /// Only the latest `window` steps are optimized; older ones stay fixed.
    pub window: Option<usize>,
    /// Ground-truth patch radius as a multiple of the larger gel half-extent.
    pub groundtruth_radius_factor: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            sigmas: FactorSigmas::default(),
            icp: ICPParams::default(),
            optimizer: LmParams::default(),
            keyframes: KeyframePolicy::default(),
            voxel_size: crate::patchmap::DEFAULT_VOXEL_SIZE,
            overlap_radius: 0.5,
            patch_image_to_image: true,
            window: None,
            groundtruth_radius_factor: 1.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.sigmas.models()?;
        self.icp.validate()?;
        self.optimizer.validate()?;
        self.keyframes.validate()?;
        if !(self.voxel_size > 0.0) || !(self.overlap_radius > 0.0) || !(self.groundtruth_radius_factor > 0.0) {
            return Err(Error::Config("voxel size, overlap radius and ground-truth radius must be positive".into()));
        }
        if self.window == Some(0) {
            return Err(Error::Config("optimization window must be at least 1 step".into()));
        }
        Ok(())
    }
}

/// Condensed ICP outcome kept in the per-step diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub converged: bool,
    pub iterations: usize,
    pub rmse: f64,
    pub correspondences: usize,
    pub condition_number: f64,
}

impl From<&ICPResult> for RegistrationSummary {
    fn from(r: &ICPResult) -> Self {
        Self {
            converged: r.converged,
            iterations: r.iterations,
            rmse: r.rmse,
            correspondences: r.correspondences,
            condition_number: r.condition_number,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub contact_pixels: usize,
    /// Why registration was skipped for this frame, if it was.
    pub skipped: Option<String>,
    pub image_to_image: Option<RegistrationSummary>,
    pub image_to_patch: Option<RegistrationSummary>,
    pub keyframe: bool,
    pub optimizer_iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub step: usize,
    pub object: Pose,
    pub effector: Pose,
    pub diagnostics: StepDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub object: Pose,
    pub effector: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub mode: TrackerMode,
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_rotation_error: f64,
    pub final_translation_error: f64,
    pub patch_points: usize,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Geodesic angle (rad) and translation norm (mm) of `estimate^-1 truth`.
pub fn pose_errors(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let e = estimate.inverse().compose(truth);
    (e.rotation_angle(), e.translation.norm())
}

pub struct Tracker {
    mode: TrackerMode,
    config: TrackerConfig,
    gel: GelConfig,
    noise: NoiseModels,
    graph: FactorGraph,
    values: Values,
    patch: PatchMap,
    previous_cloud: Option<PointCloud>,
    surface: Option<PointCloud>,
    next_step: usize,
    diagnostics: Vec<StepDiagnostics>,
}

impl Tracker {
    /// Seeds the graph with the vision prior on `o_0` and the end-effector
    /// prior on `e_0`. The first call to [`Tracker::step`] consumes frame 0.
    pub fn init(
        mode: TrackerMode,
        config: &TrackerConfig,
        gel: &GelConfig,
        vision_prior: &Pose,
        first_eff_measurement: &Pose,
        shape: Option<&Shape>,
    ) -> Result<Self> {
        config.validate()?;
        gel.validate()?;
        let surface = match (mode, shape) {
            (TrackerMode::GroundtruthPatch, None) => {
                return Err(Error::Config("groundtruth patch mode needs the object shape".into()))
            }
            (TrackerMode::GroundtruthPatch, Some(s)) => Some(surface_cloud(s, gel.square_pitch()?)),
            _ => None,
        };
        let noise = config.sigmas.models()?;
        let mut graph = FactorGraph::new();
        graph.add(Factor::vision_prior(0, *vision_prior, noise.vis));
        graph.add(Factor::end_effector_prior(0, *first_eff_measurement, noise.eff));
        let mut values = Values::new();
        values.insert(VariableKey::object(0), *vision_prior);
        values.insert(VariableKey::end_effector(0), *first_eff_measurement);
        Ok(Self {
            mode,
            config: config.clone(),
            gel: gel.clone(),
            noise,
            graph,
            values,
            patch: PatchMap::new(config.voxel_size),
            previous_cloud: None,
            surface,
            next_step: 0,
            diagnostics: Vec::new(),
        })
    }

    pub fn mode(&self) -> TrackerMode {
        self.mode
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn patch(&self) -> &PatchMap {
        &self.patch
    }

    pub fn steps_processed(&self) -> usize {
        self.next_step
    }

    fn estimate(&self, step: usize) -> Result<(Pose, Pose)> {
        Ok((
            *self.values.get(&VariableKey::object(step))?,
            *self.values.get(&VariableKey::end_effector(step))?,
        ))
    }

    fn extrapolate(&self, kind: fn(usize) -> VariableKey, t: usize) -> Result<Pose> {
        let last = *self.values.get(&kind(t - 1))?;
        if t < 2 {
            return Ok(last);
        }
        let before = *self.values.get(&kind(t - 2))?;
        Ok(last.compose(&before.inverse().compose(&last)).orthonormalized())
    }

    /// Runs ICP and turns recoverable failures into a warning.
    fn register(
        &self,
        source: &PointCloud,
        target: &PointCloud,
        init: &Pose,
        what: &str,
        diag: &mut StepDiagnostics,
    ) -> Result<Option<ICPResult>> {
        match icp_register(source, target, init, &self.config.icp) {
            Ok(r) => Ok(Some(r)),
            Err(e @ (Error::InsufficientOverlap { .. } | Error::Degenerate { .. })) => {
                let msg = format!("step {}: {what} registration dropped: {e}", diag.step);
                info!("{msg}");
                diag.warnings.push(msg);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn step(&mut self, normals: &NormalImage, eff_measurement: &Pose) -> Result<PoseEstimate> {
        let t = self.next_step;
        let mut diag = StepDiagnostics {
            step: t,
            contact_pixels: normals.mask.count(),
            ..StepDiagnostics::default()
        };
        if t > 0 {
            let o = self.extrapolate(VariableKey::object, t)?;
            let e = self.extrapolate(VariableKey::end_effector, t)?;
            self.values.insert(VariableKey::object(t), o);
            self.values.insert(VariableKey::end_effector(t), e);
            self.graph.add(Factor::end_effector_prior(t, *eff_measurement, self.noise.eff));
            if t >= 2 {
                self.graph.add(Factor::constant_velocity(t, self.noise.const_vel));
            }
        }

        let cloud = if !normals.mask.any() {
            diag.skipped = Some("no contact".into());
            None
        } else if contact_touches_border(&normals.mask) {
            diag.skipped = Some("contact crosses the image border".into());
            None
        } else {
            Some(reconstruct_frame(normals, &self.gel)?.1.with_step(t))
        };

        if let Some(cloud) = &cloud {
            let (o, e) = self.estimate(t)?;
            let predicted = o.inverse().compose(&e);
            let use_im2im = match self.mode {
                TrackerMode::ImageToImage => true,
                TrackerMode::PatchGraph => self.config.patch_image_to_image,
                _ => false,
            };
            if use_im2im && t > 0 {
                if let Some(prev) = self.previous_cloud.as_ref().filter(|p| p.step == Some(t - 1)) {
                    if let Some(r) = self.register(cloud, prev, &Pose::identity(), "image-to-image", &mut diag)? {
                        self.graph.add(Factor::image_to_image(t, r.transform, self.noise.im2im));
                        diag.image_to_image = Some((&r).into());
                    }
                }
            }
            let patch_target = match self.mode {
                TrackerMode::PatchGraph if !self.patch.is_empty() => Some(self.patch.cloud.clone()),
                TrackerMode::GroundtruthPatch => {
                    let surface = self.surface.as_ref().expect("surface sampled at init");
                    let center = predicted.transform_point(&cloud.centroid().expect("nonempty cloud"));
                    let radius = self.config.groundtruth_radius_factor * 0.5 * self.gel.extent_mm[0].max(self.gel.extent_mm[1]);
                    Some(select_ball(surface, &center, radius))
                }
                _ => None,
            };
            if let Some(target) = patch_target.filter(|c| !c.is_empty()) {
                if let Some(r) = self.register(cloud, &target, &predicted, "image-to-patch", &mut diag)? {
                    self.graph.add(Factor::image_to_patch(t, r.transform, self.noise.im2patch));
                    diag.image_to_patch = Some((&r).into());
                }
            }
        }

        self.optimize(&mut diag)?;

        if let (TrackerMode::PatchGraph, Some(cloud)) = (self.mode, &cloud) {
            let (o, e) = self.estimate(t)?;
            let pose = o.inverse().compose(&e);
            let add = if self.patch.is_empty() {
                true
            } else {
                let overlap = match self.config.keyframes {
                    KeyframePolicy::Overlap { .. } => Some(overlap_fraction(
                        &cloud.transformed(&pose, Frame::Object),
                        &self.patch,
                        self.config.overlap_radius,
                    )?),
                    KeyframePolicy::FixedInterval { .. } => None,
                };
                should_add_keyframe(&self.config.keyframes, t, overlap)?
            };
            if add {
                self.patch.fuse(cloud, &pose)?;
                diag.keyframe = true;
            }
        }
        self.previous_cloud = cloud;
        self.next_step += 1;

        let (object, effector) = self.estimate(t)?;
        self.diagnostics.push(diag.clone());
        Ok(PoseEstimate {
            step: t,
            object,
            effector,
            diagnostics: diag,
        })
    }

    fn optimize(&mut self, diag: &mut StepDiagnostics) -> Result<()> {
        let constrained = self.graph.keys();
        let newest = self.next_step;
        let mut fixed = BTreeSet::new();
        for k in self.values.keys() {
            let stale = self.config.window.is_some_and(|w| k.step + w <= newest);
            if stale {
                fixed.insert(*k);
            } else if !constrained.contains(k) {
                let msg = format!("step {}: variable {k} has no factors and is held at its initial value", diag.step);
                info!("{msg}");
                diag.warnings.push(msg);
                fixed.insert(*k);
            }
        }
        let (values, stats) = optimize_with_fixed(&self.graph, &self.values, &self.config.optimizer, &fixed)?;
        self.values = values;
        diag.optimizer_iterations = stats.iterations;
        diag.initial_cost = stats.initial_cost;
        diag.final_cost = stats.final_cost;
        Ok(())
    }

    /// Estimated trajectory and final errors against the true last object pose.
    pub fn finalize(&self, final_truth: &Pose) -> Result<EpisodeResult> {
        if self.next_step == 0 {
            return Err(Error::Argument("no steps processed".into()));
        }
        let trajectory = (0..self.next_step)
            .map(|t| {
                let (object, effector) = self.estimate(t)?;
                Ok(TrajectoryPoint { step: t, object, effector })
            })
            .collect::<Result<Vec<_>>>()?;
        let last = trajectory.last().expect("at least one step");
        let (rot, trans) = pose_errors(&last.object, final_truth);
        Ok(EpisodeResult {
            mode: self.mode,
            final_rotation_error: rot,
            final_translation_error: trans,
            patch_points: self.patch.len(),
            trajectory,
            diagnostics: self.diagnostics.clone(),
        })
    }
}

/// Tracks a whole episode and returns the result with the final patch.
pub fn track_episode(episode: &Episode, mode: TrackerMode, config: &TrackerConfig) -> Result<(EpisodeResult, PatchMap)> {
    let frames = &episode.meta.frames;
    let first = frames
        .first()
        .ok_or_else(|| Error::Argument("episode has no frames".into()))?;
    let mut tracker = Tracker::init(
        mode,
        config,
        &episode.meta.gel,
        &episode.meta.vision_prior,
        &first.eff_measurement,
        Some(&episode.meta.shape),
    )?;
    for (frame, normals) in frames.iter().zip(&episode.normals) {
        tracker.step(normals, &frame.eff_measurement)?;
    }
    let result = tracker.finalize(&frames.last().expect("nonempty").object_pose)?;
    Ok((result, tracker.patch))
}

/// Object-frame samples of the shape surface about `spacing` apart, with
/// normals pointing into the object like the gel normals do.
fn surface_cloud(shape: &Shape, spacing: f64) -> PointCloud {
    let r = shape.bounding_radius() + spacing;
    let coarse = 4.0 * spacing;
    let cells = (2.0 * r / coarse).ceil() as i64;
    let reach = coarse * 3f64.sqrt() / 2.0 + spacing;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for i in 0..cells {
        for j in 0..cells {
            for k in 0..cells {
                let corner = nalgebra::Vector3::new(i as f64, j as f64, k as f64) * coarse - nalgebra::Vector3::repeat(r);
                let mid = nalgebra::Point3::from(corner + nalgebra::Vector3::repeat(0.5 * coarse));
                if shape.sdf(&mid).abs() > reach {
                    continue;
                }
                for a in 0..4 {
                    for b in 0..4 {
                        for c in 0..4 {
                            let p = nalgebra::Point3::from(
                                corner + nalgebra::Vector3::new(a as f64 + 0.5, b as f64 + 0.5, c as f64 + 0.5) * spacing,
                            );
                            let d = shape.sdf(&p);
                            if d.abs() < 0.5 * spacing {
                                if let Some(q) = project_to_surface(shape, p) {
                                    points.push(q);
                                    normals.push(-shape.gradient(&q));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut seen = HashSet::new();
    let mut cloud = PointCloud::empty(Frame::Object);
    for (p, n) in points.into_iter().zip(normals) {
        let key = (p.coords / spacing).map(|v| v.floor() as i64);
        if seen.insert((key.x, key.y, key.z)) {
            cloud.points.push(p);
            cloud.normals.push(n);
        }
    }
    cloud
}

fn project_to_surface(shape: &Shape, mut p: nalgebra::Point3<f64>) -> Option<nalgebra::Point3<f64>> {
    for _ in 0..8 {
        let d = shape.sdf(&p);
        if d.abs() < 1e-9 {
            return Some(p);
        }
        p -= shape.gradient(&p) * d;
    }
    None
}

fn select_ball(cloud: &PointCloud, center: &nalgebra::Point3<f64>, radius: f64) -> PointCloud {
    let mut out = PointCloud::empty(cloud.frame);
    for (p, n) in cloud.points.iter().zip(&cloud.normals) {
        if (p - center).norm() <= radius {
            out.points.push(*p);
            out.normals.push(*n);
        }
    }
    out
}
