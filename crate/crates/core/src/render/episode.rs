//! Simulated contact episodes.
//!
//! A trajectory is described as the motion of the sensor relative to the
//! object (`object_from_sensor`). By default the object stays at the world
//! origin and the sensor moves; [`Anchor::Sensor`] relabels the world frame so
//! the sensor stays put and the object moves over it instead.

use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gel::GelConfig;
use super::sensor::{depth_to_normals, perturb_normals, render_depth};
use super::shape::Shape;
use crate::error::{Error, Result};
use crate::geometry::{oplus, Pose, Twist};
use crate::image::{contact_touches_border, DepthImage, NormalImage};
use crate::io;

/// Initial (mid-trajectory) contact: the sensor presses into the object's
/// extreme point along `direction` (object frame, pointing out of the object)
/// by `indentation` millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub direction: [f64; 3],
    #[serde(default)]
    pub spin_deg: f64,
    pub indentation: f64,
}

/// Sensor motion relative to the object. Every variant is centred on the
/// contact pose: the trajectory runs from progress -1/2 to +1/2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    Stationary,
    /// Translation in the gel plane.
    LinearSlide { heading_deg: f64, length: f64 },
    /// Rotation of the sensor about an object-frame axis through `pivot`.
    ArcSlide {
        axis: [f64; 3],
        pivot: [f64; 3],
        angle_deg: f64,
    },
    /// Rotation about the gel normal through the gel centre.
    InPlaceRotation { angle_deg: f64 },
    /// Parts executed one after another, each over an equal share of steps.
    Composite { parts: Vec<Motion> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// Object fixed at the world origin, sensor moving.
    #[default]
    Object,
    /// Sensor fixed at the world origin, object moving.
    Sensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub contact: ContactSpec,
    pub motion: Motion,
    pub steps: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub anchor: Anchor,
    /// Longest tolerated run of frames without any contact.
    #[serde(default = "default_contact_gap")]
    pub max_contact_gap: usize,
}

fn default_dt() -> f64 {
    0.1
}

fn default_contact_gap() -> usize {
    2
}

/// Isotropic per-axis standard deviations of a pose perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseSigmas {
    /// Radians.
    pub rotation: f64,
    /// Millimetres.
    pub translation: f64,
}

impl PoseSigmas {
    pub fn new(rotation: f64, translation: f64) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 6] {
        let (r, t) = (self.rotation, self.translation);
        [r, r, r, t, t, t]
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Twist {
        let s = self.as_array();
        let v = Vector6::from_fn(|i, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * s[i]
        });
        Twist::from_vector(&v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Angular noise on predicted normals, radians.
    pub normal_sigma: f64,
    /// End-effector (motion capture) measurement noise.
    pub eff: PoseSigmas,
    /// Start-of-episode vision prior noise.
    pub vis: PoseSigmas,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            normal_sigma: 0.0,
            eff: PoseSigmas::new(0.01, 1.0),
            vis: PoseSigmas::new(0.05, 2.0),
        }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            normal_sigma: 0.0,
            eff: PoseSigmas::zero(),
            vis: PoseSigmas::zero(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub time: f64,
    pub object_pose: Pose,
    pub sensor_pose: Pose,
    /// Noisy end-effector measurement.
    pub eff_measurement: Pose,
    pub object_from_sensor: Pose,
    /// `object_from_sensor` of the previous frame to this one (identity first).
    pub relative_motion: Pose,
    pub contact_pixels: usize,
    /// Contact reaches the image border; the image must not be integrated.
    pub dropped: bool,
}

/// Everything in `episode.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    /// Free-form object name, set by the suite runner.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    pub seed: u64,
    pub shape: Shape,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
    pub gel: GelConfig,
    pub vision_prior: Pose,
    pub frames: Vec<FrameRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    pub normals: Vec<NormalImage>,
    /// Ground-truth depth, for evaluation only.
    pub depths: Vec<DepthImage>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.meta.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.frames.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::write_json(&dir.join("episode.json"), &self.meta)?;
        for (i, (n, d)) in self.normals.iter().zip(&self.depths).enumerate() {
            io::write_normals_pfm(&dir.join(format!("normals_{i:04}.pfm")), n)?;
            io::write_mask_pgm(&dir.join(format!("mask_{i:04}.pgm")), &n.mask)?;
            io::write_depth_pfm(&dir.join(format!("depth_{i:04}.pfm")), &d.depth)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: EpisodeMeta = io::read_json(&dir.join("episode.json"))?;
        let mut normals = Vec::with_capacity(meta.frames.len());
        let mut depths = Vec::with_capacity(meta.frames.len());
        for i in 0..meta.frames.len() {
            let mask = io::read_mask_pgm(&dir.join(format!("mask_{i:04}.pgm")))?;
            let n = io::read_normals_pfm(&dir.join(format!("normals_{i:04}.pfm")))?;
            normals.push(NormalImage::new(n, mask.clone())?);
            let d = io::read_depth_pfm(&dir.join(format!("depth_{i:04}.pfm")))?;
            depths.push(DepthImage::new(d, mask)?);
        }
        Ok(Self {
            meta,
            normals,
            depths,
        })
    }

    /// The episode exactly as [`Episode::load`] would return it after
    /// [`Episode::save`]: poses pass through JSON and images through `f32`.
    pub fn stored_copy(&self) -> Result<Self> {
        let meta = serde_json::from_slice(&serde_json::to_vec(&self.meta)?)?;
        let normals = self
            .normals
            .iter()
            .map(|n| NormalImage::new(n.normals.map(|v| v.map(|c| c as f32 as f64)), n.mask.clone()))
            .collect::<Result<_>>()?;
        let depths = self
            .depths
            .iter()
            .map(|d| DepthImage::new(d.depth.map(|&v| v as f32 as f64), d.mask.clone()))
            .collect::<Result<_>>()?;
        Ok(Self { meta, normals, depths })
    }

    pub fn ground_truth(&self) -> Vec<Pose> {
        self.meta.frames.iter().map(|f| f.object_pose).collect()
    }
}

/// Contact pose of the sensor in the object frame.
pub fn contact_pose(shape: &Shape, contact: &ContactSpec) -> Result<Pose> {
    let n = Vector3::from(contact.direction);
    if !(n.norm() > 0.0) || !n.iter().all(|v| v.is_finite()) {
        return Err(Error::Config(format!(
            "contact direction must be a nonzero vector, got {:?}",
            contact.direction
        )));
    }
    let n = n.normalize();
    let z = -n;
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x0 = (helper - z * helper.dot(&z)).normalize();
    let y0 = z.cross(&x0);
    let (s, c) = contact.spin_deg.to_radians().sin_cos();
    let x = x0 * c + y0 * s;
    let y = z.cross(&x);
    let rotation = Matrix3::from_columns(&[x, y, z]);
    let touch = shape.support(&n);
    Ok(Pose::new(rotation, touch.coords - n * contact.indentation))
}

impl Motion {
    /// Object-frame and sensor-frame factors `(A, B)` so that the sensor pose
    /// is `A * contact * B` at progress `tau` in `[-1/2, 1/2]`.
    fn factors(&self, tau: f64) -> (Pose, Pose) {
        match self {
            Motion::Stationary => (Pose::identity(), Pose::identity()),
            Motion::LinearSlide {
                heading_deg,
                length,
            } => {
                let (s, c) = heading_deg.to_radians().sin_cos();
                let d = tau * length;
                (Pose::identity(), Pose::from_translation(d * c, d * s, 0.0))
            }
            Motion::InPlaceRotation { angle_deg } => {
                (Pose::identity(), Pose::rot_z(tau * angle_deg.to_radians()))
            }
            Motion::ArcSlide {
                axis,
                pivot,
                angle_deg,
            } => {
                let p = Vector3::from(*pivot);
                let rot = Pose::from_axis_angle(Vector3::from(*axis), tau * angle_deg.to_radians());
                let a = Pose::new(Matrix3::identity(), p)
                    .compose(&rot)
                    .compose(&Pose::new(Matrix3::identity(), -p));
                (a, Pose::identity())
            }
            Motion::Composite { parts } => {
                let k = parts.len() as f64;
                let u = tau + 0.5;
                let mut a = Pose::identity();
                let mut b = Pose::identity();
                for (i, part) in parts.iter().enumerate() {
                    let local = (k * u - i as f64).clamp(0.0, 1.0) - 0.5;
                    let (pa, pb) = part.factors(local);
                    a = a.compose(&pa);
                    b = b.compose(&pb);
                }
                (a, b)
            }
        }
    }
}

impl TrajectorySpec {
    /// Object-from-sensor pose of every frame.
    pub fn relative_poses(&self, shape: &Shape) -> Result<Vec<Pose>> {
        let center = contact_pose(shape, &self.contact)?;
        let n = self.steps;
        Ok((0..n)
            .map(|t| {
                let tau = if n > 1 { t as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
                let (a, b) = self.motion.factors(tau);
                a.compose(&center).compose(&b)
            })
            .collect())
    }
}

/// Per-frame seed for the normal perturbation.
fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((frame as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn generate_episode(
    shape: &Shape,
    trajectory: &TrajectorySpec,
    gel: &GelConfig,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<Episode> {
    shape.validate()?;
    gel.validate()?;
    if trajectory.steps < 3 {
        return Err(Error::Config(format!(
            "episodes need at least 3 steps, got {}",
            trajectory.steps
        )));
    }
    let ind = trajectory.contact.indentation;
    if !(ind > 0.0 && ind <= gel.max_indentation) {
        return Err(Error::Config(format!(
            "indentation {ind} mm outside (0, {}]",
            gel.max_indentation
        )));
    }
    if !(noise.normal_sigma >= 0.0)
        || [noise.eff, noise.vis]
            .iter()
            .any(|s| !(s.rotation >= 0.0 && s.translation >= 0.0))
    {
        return Err(Error::Config("noise sigmas must be non-negative".into()));
    }

    let relative = trajectory.relative_poses(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut frames = Vec::with_capacity(relative.len());
    let mut normals = Vec::with_capacity(relative.len());
    let mut depths = Vec::with_capacity(relative.len());
    let mut gap = 0usize;
    for (t, r) in relative.iter().enumerate() {
        let (object_pose, sensor_pose) = match trajectory.anchor {
            Anchor::Object => (Pose::identity(), *r),
            Anchor::Sensor => (r.inverse(), Pose::identity()),
        };
        let depth = render_depth(shape, &object_pose, &sensor_pose, gel);
        let contact_pixels = depth.mask.count();
        if contact_pixels == 0 {
            gap += 1;
            if gap > trajectory.max_contact_gap {
                return Err(Error::EpisodeGeneration {
                    step: t,
                    reason: format!("no contact for {gap} consecutive steps"),
                });
            }
        } else {
            gap = 0;
        }
        let clean = depth_to_normals(&depth, gel);
        let noisy = perturb_normals(&clean, noise.normal_sigma, frame_seed(seed, t))?;
        let relative_motion = if t == 0 {
            Pose::identity()
        } else {
            relative[t - 1].inverse().compose(r)
        };
        frames.push(FrameRecord {
            index: t,
            time: t as f64 * trajectory.dt,
            object_pose,
            sensor_pose,
            eff_measurement: oplus(&sensor_pose, &noise.eff.sample(&mut rng)),
            object_from_sensor: *r,
            relative_motion,
            contact_pixels,
            dropped: contact_touches_border(&depth.mask),
        });
        normals.push(noisy);
        depths.push(depth);
    }
    let vision_prior = oplus(&frames[0].object_pose, &noise.vis.sample(&mut rng));

    Ok(Episode {
        meta: EpisodeMeta {
            label: String::new(),
            seed,
            shape: shape.clone(),
            trajectory: trajectory.clone(),
            noise: noise.clone(),
            gel: gel.clone(),
            vision_prior,
            frames,
        },
        normals,
        depths,
    })
}
