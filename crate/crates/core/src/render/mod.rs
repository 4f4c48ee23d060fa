//! Synthetic tactile data: object shapes, the sensor model and episodes.

mod episode;
mod gel;
mod sensor;
mod shape;

pub use episode::{
    contact_pose, generate_episode, Anchor, ContactSpec, Episode, EpisodeMeta, FrameRecord, Motion, NoiseSpec,
    PoseSigmas, TrajectorySpec,
};
pub use gel::{CameraModel, GelConfig};
pub use sensor::{depth_to_normals, perturb_normals, render_depth};
pub use shape::{Primitive, Shape};
