//! Command-line interface. The binary only forwards its arguments to [`run`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{load_runs, run_suite, simulate_suite, write_run, BoxStats, RunMetrics, SuiteConfig, SuiteReport};
use crate::image::NormalImage;
use crate::io;
use crate::reconstruct::reconstruct_frame;
use crate::render::{Episode, GelConfig};
use crate::tracker::{track_episode, TrackerConfig, TrackerMode};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_BAD_CONFIG: u8 = 2;

/// Tactile pose tracking: simulate episodes, track them, and evaluate the errors.
#[derive(Parser)]
#[command(name = "patchtrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate every episode of a suite into a directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the master seed of the suite file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track one episode and write trajectory.json, metrics.json and patch.ply.
    Track {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        mode: TrackerMode,
        /// Tracker settings (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate every metrics.json below a directory into box-plot statistics.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Integrate a normal image into depth.pfm and cloud.ply.
    Reconstruct {
        #[arg(long)]
        normals: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Gel settings (TOML); the image size always comes from the input.
        #[arg(long)]
        gel: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate, track with every configured mode and evaluate in one go.
    Suite {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the suite output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Serialize)]
struct ManifestEntry {
    object: String,
    episode: usize,
    seed: u64,
    path: Option<PathBuf>,
    error: Option<String>,
}

fn load_suite(path: &Path, seed: Option<u64>) -> Result<SuiteConfig> {
    let mut cfg = SuiteConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<u8> {
    let cfg = load_suite(config, seed)?;
    let results = simulate_suite(&cfg, out)?;
    let mut ok = 0;
    let manifest: Vec<ManifestEntry> = results
        .into_iter()
        .map(|(job, res)| {
            let (path, error) = match res {
                Ok(_) => {
                    ok += 1;
                    (Some(job.dir_name()), None)
                }
                Err(e) => {
                    log::error!("{} episode {}: {e}", job.object, job.episode);
                    (None, Some(e.to_string()))
                }
            };
            ManifestEntry {
                object: job.object,
                episode: job.episode,
                seed: job.seed,
                path,
                error,
            }
        })
        .collect();
    io::write_json(&out.join("manifest.json"), &manifest)?;
    println!("{ok}/{} episodes written to {}", manifest.len(), out.display());
    Ok(if ok == 0 { EXIT_FAILURE } else { EXIT_OK })
}

fn track(episode: &Path, mode: TrackerMode, config: Option<&Path>, out: &Path) -> Result<u8> {
    let cfg = match config {
        Some(p) => io::read_toml::<TrackerConfig>(p)?,
        None => TrackerConfig::default(),
    };
    cfg.validate()?;
    let ep = Episode::load(episode)?;
    match track_episode(&ep, mode, &cfg) {
        Ok((result, patch)) => {
            let m = write_run(out, &ep, &result, &patch)?;
            println!(
                "{mode}: final rotation error {:.4} rad, translation error {:.4} mm",
                m.final_rotation_error.unwrap_or(f64::NAN),
                m.final_translation_error.unwrap_or(f64::NAN)
            );
            Ok(EXIT_OK)
        }
        Err(e @ Error::Config(_)) => Err(e),
        Err(e) => {
            log::error!("tracking failed: {e}");
            std::fs::create_dir_all(out).map_err(|err| Error::io(out, err))?;
            io::write_json(&out.join("metrics.json"), &RunMetrics::failure(&ep.meta.label, ep.meta.seed, mode, &e))?;
            Ok(EXIT_FAILURE)
        }
    }
}

fn write_report(report: &SuiteReport, json: &Path, csv: &Path) -> Result<u8> {
    report.write_json(json)?;
    report.write_csv(csv)?;
    for g in &report.groups {
        let median = |s: Option<BoxStats>| s.map_or(f64::NAN, |s| s.median);
        println!(
            "{:<10} {:<10} n={:<3} failed={:<3} median rotation {:.4} rad, translation {:.4} mm",
            g.object,
            g.mode,
            g.episodes,
            g.failures,
            median(g.rotation),
            median(g.translation)
        );
    }
    Ok(if report.all_failed() { EXIT_FAILURE } else { EXIT_OK })
}

fn eval(runs: &Path, out: &Path, csv: &Path) -> Result<u8> {
    let runs = load_runs(runs)?;
    if runs.is_empty() {
        log::error!("no metrics.json files found");
        return Ok(EXIT_FAILURE);
    }
    write_report(&SuiteReport::from_runs(&runs)?, out, csv)
}

fn reconstruct(normals: &Path, mask: &Path, gel: Option<&Path>, out: &Path) -> Result<u8> {
    let mut gel = match gel {
        Some(p) => io::read_toml::<GelConfig>(p)?,
        None => GelConfig::default(),
    };
    let image = NormalImage::new(io::read_normals_pfm(normals)?, io::read_mask_pgm(mask)?)?;
    (gel.width, gel.height) = image.dims();
    gel.validate()?;
    let (depth, cloud) = reconstruct_frame(&image, &gel)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    io::write_depth_pfm(&out.join("depth.pfm"), &depth.depth)?;
    io::write_ply(&out.join("cloud.ply"), &cloud.points, &cloud.normals)?;
    println!("{} contact pixels integrated", cloud.len());
    Ok(EXIT_OK)
}

fn suite(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<u8> {
    let mut cfg = load_suite(config, seed)?;
    if let Some(o) = out {
        cfg.output_dir = Some(o.to_path_buf());
    }
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let report = run_suite(&cfg)?;
    write_report(&report, &dir.join("report.json"), &dir.join("report.csv"))
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_BAD_CONFIG } else { EXIT_OK };
        }
    };
    let res = match &cli.command {
        Command::Simulate { config, out, seed } => simulate(config, out, *seed),
        Command::Track {
            episode,
            mode,
            config,
            out,
        } => track(episode, *mode, config.as_deref(), out),
        Command::Eval { runs, out, csv } => eval(runs, out, csv),
        Command::Reconstruct { normals, mask, gel, out } => reconstruct(normals, mask, gel.as_deref(), out),
        Command::Suite { config, out, seed } => suite(config, out.as_deref(), *seed),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_BAD_CONFIG,
                _ => EXIT_FAILURE,
            }
        }
    }
}
