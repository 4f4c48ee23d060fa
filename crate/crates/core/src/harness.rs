//! Suite configuration, episode caching, batch tracking and error reports.
//!
//! A suite file is TOML; see `docs/suite-config.md` for the grammar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::io;
use crate::patchmap::PatchMap;
use crate::render::{generate_episode, Anchor, ContactSpec, Episode, GelConfig, Motion, NoiseSpec, Shape, TrajectorySpec};
use crate::tracker::{track_episode, EpisodeResult, StepDiagnostics, TrackerConfig, TrackerMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: Shape,
    /// Candidate contact directions (object frame, pointing out of the
    /// object); each episode picks one uniformly.
    pub contacts: Vec<[f64; 3]>,
    /// Each chosen direction is tilted by up to this many degrees.
    #[serde(default)]
    pub contact_jitter_deg: f64,
    /// Indentation range in millimetres, sampled uniformly.
    pub indentation: [f64; 2],
}

impl ObjectSpec {
    pub fn sphere() -> Self {
        Self {
            name: "sphere".into(),
            shape: Shape::sphere(6.35),
            contacts: vec![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [-1.0, 1.0, -1.0]],
            contact_jitter_deg: 10.0,
            indentation: [1.0, 1.5],
        }
    }

    /// Contacts at the corners; a face or edge alone leaves sliding unobservable.
    pub fn cube() -> Self {
        let mut contacts = Vec::new();
        for sx in [1.0, -1.0] {
            for sy in [1.0, -1.0] {
                for sz in [1.0, -1.0] {
                    contacts.push([sx, sy, sz]);
                }
            }
        }
        Self {
            name: "cube".into(),
            shape: Shape::cube(12.7),
            contacts,
            contact_jitter_deg: 10.0,
            indentation: [1.2, 1.5],
        }
    }

    pub fn pyramid() -> Self {
        Self {
            name: "pyramid".into(),
            shape: Shape::pyramid(22.225, 12.7),
            contacts: vec![[0.0, 0.0, 1.0]],
            contact_jitter_deg: 10.0,
            indentation: [1.0, 1.5],
        }
    }
}

/// Random trajectory family; every episode draws its own parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryTemplate {
    pub steps: usize,
    pub dt: f64,
    pub anchor: Anchor,
    /// Slide length range in millimetres; the heading is uniform.
    pub slide_length: [f64; 2],
    /// In-place rotation magnitude range in degrees, random sign. A nonzero
    /// range appends a rotation after the slide.
    pub rotation_deg: [f64; 2],
    pub max_contact_gap: usize,
}

impl Default for TrajectoryTemplate {
    fn default() -> Self {
        Self {
            steps: 20,
            dt: 0.1,
            anchor: Anchor::Sensor,
            slide_length: [3.0, 8.0],
            rotation_deg: [0.0, 0.0],
            max_contact_gap: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub seed: u64,
    pub episodes_per_object: usize,
    pub modes: Vec<TrackerMode>,
    /// Episode cache and per-run outputs; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
    pub noise: NoiseSpec,
    pub gel: GelConfig,
    pub trajectory: TrajectoryTemplate,
    pub tracker: TrackerConfig,
    pub objects: Vec<ObjectSpec>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes_per_object: 20,
            modes: TrackerMode::ALL.to_vec(),
            output_dir: None,
            noise: NoiseSpec::default(),
            gel: GelConfig::default(),
            trajectory: TrajectoryTemplate::default(),
            tracker: TrackerConfig::default(),
            objects: vec![ObjectSpec::sphere(), ObjectSpec::cube(), ObjectSpec::pyramid()],
        }
    }
}

fn ordered_range(r: [f64; 2], what: &str) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{what} range {r:?} must be finite and ordered")));
    }
    Ok(())
}

impl SuiteConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = io::read_toml(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_object == 0 {
            return Err(Error::Config("episodes_per_object must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one tracker mode is required".into()));
        }
        if self.objects.is_empty() {
            return Err(Error::Config("at least one object is required".into()));
        }
        self.gel.validate()?;
        self.tracker.validate()?;
        let t = &self.trajectory;
        if t.steps < 3 || !(t.dt > 0.0) {
            return Err(Error::Config("trajectory needs at least 3 steps and a positive dt".into()));
        }
        ordered_range(t.slide_length, "slide_length")?;
        ordered_range(t.rotation_deg, "rotation_deg")?;
        let mut names = std::collections::BTreeSet::new();
        for o in &self.objects {
            if o.name.is_empty() || o.name.contains(['/', '\\', ',']) {
                return Err(Error::Config(format!("object name {:?} must be nonempty without '/', '\\' or ','", o.name)));
            }
            if !names.insert(o.name.as_str()) {
                return Err(Error::Config(format!("duplicate object name {:?}", o.name)));
            }
            o.shape.validate()?;
            if o.contacts.is_empty() {
                return Err(Error::Config(format!("object {:?} has no contact directions", o.name)));
            }
            ordered_range(o.indentation, "indentation")?;
            if !(o.indentation[0] > 0.0) || o.indentation[1] > self.gel.max_indentation {
                return Err(Error::Config(format!(
                    "object {:?}: indentation must lie in (0, {}]",
                    o.name, self.gel.max_indentation
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// One job per (object, episode), in report order.
    pub fn episode_jobs(&self) -> Vec<EpisodeJob> {
        let n = self.episodes_per_object;
        self.objects
            .iter()
            .enumerate()
            .flat_map(|(oi, object)| {
                (0..n).map(move |ei| {
                    let seed = self.seed.wrapping_add((oi * n + ei) as u64);
                    EpisodeJob {
                        object: object.name.clone(),
                        object_index: oi,
                        episode: ei,
                        seed,
                        trajectory: sample_trajectory(object, &self.trajectory, seed),
                    }
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeJob {
    pub object: String,
    pub object_index: usize,
    pub episode: usize,
    pub seed: u64,
    pub trajectory: TrajectorySpec,
}

impl EpisodeJob {
    pub fn dir_name(&self) -> PathBuf {
        PathBuf::from(&self.object).join(format!("{:03}", self.episode))
    }
}

/// Draws the per-episode trajectory from a stream separate from the one
/// [`generate_episode`] uses for noise.
pub fn sample_trajectory(object: &ObjectSpec, template: &TrajectoryTemplate, seed: u64) -> TrajectorySpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let dir = Vector3::from(object.contacts[rng.random_range(0..object.contacts.len())]);
    let dir = if dir.norm() > 0.0 { dir.normalize() } else { dir };
    let tilt = object.contact_jitter_deg.to_radians() * rng.random::<f64>();
    let helper = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = dir.cross(&helper).normalize();
    let v = dir.cross(&u);
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let axis = Unit::new_normalize(u * phi.cos() + v * phi.sin());
    let direction = UnitQuaternion::from_axis_angle(&axis, tilt) * dir;
    let lerp = |r: [f64; 2], x: f64| r[0] + (r[1] - r[0]) * x;
    let indentation = lerp(object.indentation, rng.random());
    let spin_deg = 360.0 * rng.random::<f64>();
    let heading_deg = 360.0 * rng.random::<f64>();
    let length = lerp(template.slide_length, rng.random());
    let rotation = lerp(template.rotation_deg, rng.random());
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let slide = Motion::LinearSlide { heading_deg, length };
    let motion = if template.rotation_deg[1] > 0.0 {
        Motion::Composite {
            parts: vec![slide, Motion::InPlaceRotation { angle_deg: sign * rotation }],
        }
    } else {
        slide
    };
    TrajectorySpec {
        contact: ContactSpec {
            direction: direction.into(),
            spin_deg,
            indentation,
        },
        motion,
        steps: template.steps,
        dt: template.dt,
        anchor: template.anchor,
        max_contact_gap: template.max_contact_gap,
    }
}

#[derive(Serialize)]
struct CacheKey<'a> {
    version: &'a str,
    label: &'a str,
    seed: u64,
    shape: &'a Shape,
    trajectory: &'a TrajectorySpec,
    noise: &'a NoiseSpec,
    gel: &'a GelConfig,
}

const CACHE_KEY_FILE: &str = "cache_key";

/// Generates the episode for `job`, or loads it from `cache` when a copy
/// generated from identical inputs is stored there. The result always equals
/// what a save/load roundtrip yields, so cached and fresh runs agree bit for bit.
pub fn prepare_episode(config: &SuiteConfig, job: &EpisodeJob, cache: Option<&Path>) -> Result<Episode> {
    let object = &config.objects[job.object_index];
    let key = CacheKey {
        version: env!("CARGO_PKG_VERSION"),
        label: &job.object,
        seed: job.seed,
        shape: &object.shape,
        trajectory: &job.trajectory,
        noise: &config.noise,
        gel: &config.gel,
    };
    let key = hex::encode(Sha256::digest(serde_json::to_vec(&key)?));
    let dir = cache.map(|c| c.join(job.dir_name()));
    if let Some(dir) = &dir {
        if fs::read_to_string(dir.join(CACHE_KEY_FILE)).is_ok_and(|k| k.trim() == key) {
            if let Ok(ep) = Episode::load(dir) {
                return Ok(ep);
            }
        }
    }
    let mut episode = generate_episode(&object.shape, &job.trajectory, &config.gel, &config.noise, job.seed)?;
    episode.meta.label = job.object.clone();
    if let Some(dir) = &dir {
        if dir.exists() {
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        episode.save(dir)?;
        fs::write(dir.join(CACHE_KEY_FILE), &key).map_err(|e| Error::io(dir, e))?;
    }
    episode.stored_copy()
}

/// Generates every suite episode into `out`, returning each job with its
/// directory or failure.
pub fn simulate_suite(config: &SuiteConfig, out: &Path) -> Result<Vec<(EpisodeJob, Result<PathBuf>)>> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(config
        .episode_jobs()
        .into_par_iter()
        .map(|job| {
            let res = prepare_episode(config, &job, Some(out)).map(|_| out.join(job.dir_name()));
            (job, res)
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub skipped_frames: usize,
    pub image_to_image_factors: usize,
    pub image_to_patch_factors: usize,
    pub dropped_registrations: usize,
    pub keyframes: usize,
    pub optimizer_iterations: usize,
}

impl RunSummary {
    pub fn from_steps(steps: &[StepDiagnostics]) -> Self {
        let mut s = Self {
            frames: steps.len(),
            ..Self::default()
        };
        for d in steps {
            s.skipped_frames += d.skipped.is_some() as usize;
            s.image_to_image_factors += d.image_to_image.is_some() as usize;
            s.image_to_patch_factors += d.image_to_patch.is_some() as usize;
            s.dropped_registrations += d.warnings.iter().filter(|w| w.contains("registration dropped")).count();
            s.keyframes += d.keyframe as usize;
            s.optimizer_iterations += d.optimizer_iterations;
        }
        s
    }
}

/// Contents of `metrics.json` for one tracked episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub object: String,
    pub seed: u64,
    pub mode: TrackerMode,
    pub final_rotation_error: Option<f64>,
    pub final_translation_error: Option<f64>,
    pub error: Option<String>,
    pub summary: RunSummary,
    pub steps: Vec<StepDiagnostics>,
}

impl RunMetrics {
    pub fn success(object: &str, seed: u64, result: &EpisodeResult) -> Self {
        Self {
            object: object.to_string(),
            seed,
            mode: result.mode,
            final_rotation_error: Some(result.final_rotation_error),
            final_translation_error: Some(result.final_translation_error),
            error: None,
            summary: RunSummary::from_steps(&result.diagnostics),
            steps: result.diagnostics.clone(),
        }
    }

    pub fn failure(object: &str, seed: u64, mode: TrackerMode, error: &Error) -> Self {
        Self {
            object: object.to_string(),
            seed,
            mode,
            final_rotation_error: None,
            final_translation_error: None,
            error: Some(error.to_string()),
            summary: RunSummary::default(),
            steps: Vec::new(),
        }
    }

    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Serialize)]
struct TrajectoryFile<'a> {
    object: &'a str,
    seed: u64,
    mode: TrackerMode,
    poses: Vec<TrajectoryRow>,
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: usize,
    object: Pose,
    effector: Pose,
    true_object: Pose,
}

/// Writes `trajectory.json`, `metrics.json` and `patch.ply` into `dir`.
pub fn write_run(dir: &Path, episode: &Episode, result: &EpisodeResult, patch: &PatchMap) -> Result<RunMetrics> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = &episode.meta;
    let poses = result
        .trajectory
        .iter()
        .zip(&meta.frames)
        .map(|(p, f)| TrajectoryRow {
            step: p.step,
            object: p.object,
            effector: p.effector,
            true_object: f.object_pose,
        })
        .collect();
    io::write_json(
        &dir.join("trajectory.json"),
        &TrajectoryFile {
            object: &meta.label,
            seed: meta.seed,
            mode: result.mode,
            poses,
        },
    )?;
    let metrics = RunMetrics::success(&meta.label, meta.seed, result);
    io::write_json(&dir.join("metrics.json"), &metrics)?;
    patch.write_ply(&dir.join("patch.ply"))?;
    Ok(metrics)
}

/// Reads every `metrics.json` below `dir`.
pub fn load_runs(dir: &Path) -> Result<Vec<RunMetrics>> {
    if !dir.is_dir() {
        return Err(Error::Argument(format!("{} is not a directory", dir.display())));
    }
    let mut runs = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Argument(format!("walking {}: {e}", dir.display())))?;
        if entry.file_type().is_file() && entry.file_name() == "metrics.json" {
            runs.push(io::read_json(entry.path())?);
        }
    }
    Ok(runs)
}

/// Five-number summary with quartiles by inclusive linear interpolation:
/// the `p` quantile of sorted `x[0..n]` sits at fractional index `p (n - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::Argument("boxplot of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("boxplot input contains non-finite values".into()));
    }
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (x.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        x[lo] + (x[hi] - x[lo]) * (pos - lo as f64)
    };
    Ok(BoxStats {
        min: x[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: x[x.len() - 1],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub seed: u64,
    pub rotation_error: Option<f64>,
    pub translation_error: Option<f64>,
    pub error: Option<String>,
    pub summary: RunSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub object: String,
    pub mode: TrackerMode,
    pub episodes: usize,
    pub failures: usize,
    /// Over successful episodes only; absent when every episode failed.
    pub rotation: Option<BoxStats>,
    pub translation: Option<BoxStats>,
    pub entries: Vec<ReportEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub groups: Vec<GroupReport>,
}

#[derive(Serialize, Deserialize)]
pub struct CsvRow {
    pub object: String,
    pub mode: TrackerMode,
    pub seed: u64,
    pub rotation_error: Option<f64>,
    pub translation_error: Option<f64>,
    pub error: Option<String>,
}

impl SuiteReport {
    /// Groups runs by (object, mode). Objects appear in order of their
    /// smallest seed, modes in [`TrackerMode::ALL`] order, entries by seed.
    pub fn from_runs(runs: &[RunMetrics]) -> Result<Self> {
        let mut first_seed: BTreeMap<&str, u64> = BTreeMap::new();
        for r in runs {
            let s = first_seed.entry(&r.object).or_insert(r.seed);
            *s = (*s).min(r.seed);
        }
        let mut grouped: BTreeMap<(u64, &str, TrackerMode), Vec<&RunMetrics>> = BTreeMap::new();
        for r in runs {
            grouped.entry((first_seed[r.object.as_str()], &r.object, r.mode)).or_default().push(r);
        }
        let mut groups = Vec::with_capacity(grouped.len());
        for ((_, object, mode), mut members) in grouped {
            members.sort_by_key(|r| r.seed);
            let ok: Vec<&&RunMetrics> = members.iter().filter(|r| !r.failed()).collect();
            let stats = |f: fn(&RunMetrics) -> Option<f64>| -> Result<Option<BoxStats>> {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                if v.is_empty() {
                    Ok(None)
                } else {
                    boxplot_stats(&v).map(Some)
                }
            };
            groups.push(GroupReport {
                object: object.to_string(),
                mode,
                episodes: members.len(),
                failures: members.len() - ok.len(),
                rotation: stats(|r| r.final_rotation_error)?,
                translation: stats(|r| r.final_translation_error)?,
                entries: members
                    .iter()
                    .map(|r| ReportEntry {
                        seed: r.seed,
                        rotation_error: r.final_rotation_error,
                        translation_error: r.final_translation_error,
                        error: r.error.clone(),
                        summary: r.summary.clone(),
                    })
                    .collect(),
            });
        }
        Ok(Self { groups })
    }

    pub fn group(&self, object: &str, mode: TrackerMode) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.object == object && g.mode == mode)
    }

    pub fn entry_count(&self) -> usize {
        self.groups.iter().map(|g| g.entries.len()).sum()
    }

    pub fn all_failed(&self) -> bool {
        self.groups.iter().all(|g| g.failures == g.episodes)
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.groups
            .iter()
            .flat_map(|g| {
                g.entries.iter().map(|e| CsvRow {
                    object: g.object.clone(),
                    mode: g.mode,
                    seed: e.seed,
                    rotation_error: e.rotation_error,
                    translation_error: e.translation_error,
                    error: e.error.clone(),
                })
            })
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// One row per episode and mode.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::format(path, e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in self.csv_rows() {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Generates (or loads cached) episodes, tracks each with every configured
/// mode and aggregates the final errors. Failures are recorded per run; only
/// an invalid configuration is an error.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    config.validate()?;
    let out = config.output_dir.as_deref();
    let episode_cache = out.map(|o| o.join("episodes"));
    let runs: Vec<RunMetrics> = config
        .episode_jobs()
        .into_par_iter()
        .map(|job| {
            let episode = prepare_episode(config, &job, episode_cache.as_deref());
            config
                .modes
                .iter()
                .map(|&mode| {
                    let tracked = episode
                        .as_ref()
                        .map_err(|e| Error::Argument(format!("episode unavailable: {e}")))
                        .and_then(|ep| {
                            let (result, patch) = track_episode(ep, mode, &config.tracker)?;
                            match out {
                                Some(o) => write_run(&o.join("runs").join(job.dir_name()).join(mode.as_str()), ep, &result, &patch),
                                None => Ok(RunMetrics::success(&job.object, job.seed, &result)),
                            }
                        });
                    tracked.unwrap_or_else(|e| {
                        log::warn!("{} episode {} ({mode}): {e}", job.object, job.episode);
                        RunMetrics::failure(&job.object, job.seed, mode, &e)
                    })
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    SuiteReport::from_runs(&runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxplot_examples() {
        let s = boxplot_stats(&[5.0]).unwrap();
        assert_eq!([s.min, s.q1, s.median, s.q3, s.max], [5.0; 5]);
        let s = boxplot_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
        assert_eq!(boxplot_stats(&[4.0, 1.0, 3.0, 2.0]).unwrap(), s);
        assert!(matches!(boxplot_stats(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn default_config_is_valid_and_roundtrips_through_toml() {
        let cfg = SuiteConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(SuiteConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = SuiteConfig::from_toml_str("seed = 3\nepisodes_per_object = 2\nmodes = [\"im2im\"]\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.modes, vec![TrackerMode::ImageToImage]);
        assert_eq!(cfg.objects.len(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "episodes_per_object = 0",
            "modes = []",
            "modes = [\"icp\"]",
            "unknown_key = 1",
            "[trajectory]\nslide_length = [5.0, 1.0]",
            "[[objects]]\nname = \"a\"\nshape = { kind = \"sphere\", radius = -1.0 }\ncontacts = [[0.0, 0.0, 1.0]]\nindentation = [1.0, 1.0]",
            "[[objects]]\nname = \"a\"\nshape = { kind = \"sphere\", radius = 5.0 }\ncontacts = []\nindentation = [1.0, 1.0]",
        ] {
            assert!(matches!(SuiteConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn jobs_have_sequential_seeds_and_fixed_trajectories() {
        let cfg = SuiteConfig {
            seed: 100,
            episodes_per_object: 3,
            ..SuiteConfig::default()
        };
        let jobs = cfg.episode_jobs();
        assert_eq!(jobs.len(), 9);
        assert_eq!(jobs.iter().map(|j| j.seed).collect::<Vec<_>>(), (100..109).collect::<Vec<_>>());
        assert_eq!(jobs, cfg.episode_jobs());
        for j in &jobs {
            let d = Vector3::from(j.trajectory.contact.direction);
            assert!((d.norm() - 1.0).abs() < 1e-12);
            let ind = j.trajectory.contact.indentation;
            let range = cfg.objects[j.object_index].indentation;
            assert!(ind >= range[0] && ind <= range[1]);
        }
    }

    #[test]
    fn report_groups_in_order() {
        let run = |object: &str, seed, mode, err: Option<f64>| RunMetrics {
            object: object.into(),
            seed,
            mode,
            final_rotation_error: err,
            final_translation_error: err,
            error: if err.is_none() { Some("boom".into()) } else { None },
            summary: RunSummary::default(),
            steps: Vec::new(),
        };
        let runs = vec![
            run("zeta", 1, TrackerMode::PatchGraph, Some(2.0)),
            run("alpha", 5, TrackerMode::ConstVel, None),
            run("zeta", 0, TrackerMode::PatchGraph, Some(1.0)),
            run("zeta", 0, TrackerMode::ConstVel, Some(3.0)),
        ];
        let report = SuiteReport::from_runs(&runs).unwrap();
        let order: Vec<_> = report.groups.iter().map(|g| (g.object.as_str(), g.mode)).collect();
        assert_eq!(
            order,
            [
                ("zeta", TrackerMode::ConstVel),
                ("zeta", TrackerMode::PatchGraph),
                ("alpha", TrackerMode::ConstVel)
            ]
        );
        let g = report.group("zeta", TrackerMode::PatchGraph).unwrap();
        assert_eq!(g.entries.iter().map(|e| e.seed).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(g.translation.unwrap().median, 1.5);
        let a = report.group("alpha", TrackerMode::ConstVel).unwrap();
        assert_eq!((a.failures, a.translation), (1, None));
        assert!(!report.all_failed());
        assert_eq!(report.entry_count(), 4);
    }

    proptest::proptest! {
        #[test]
        fn boxplot_is_order_invariant_and_ordered(
            mut values in proptest::collection::vec(-1e3f64..1e3, 1..40),
            rot in 0usize..40,
        ) {
            let s = boxplot_stats(&values).unwrap();
            proptest::prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            let k = rot % values.len();
            values.rotate_left(k);
            values.reverse();
            proptest::prop_assert_eq!(boxplot_stats(&values).unwrap(), s);
        }
    }
}
