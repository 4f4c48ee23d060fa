//! File formats: PFM images, binary PGM masks, ASCII PLY clouds and JSON.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{ContactMask, Grid};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Parses a TOML configuration file; syntax and schema problems are
/// configuration errors.
pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, values: impl Fn(usize, usize, usize) -> f64) -> Result<()> {
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut buf = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    buf.reserve(width * height * channels * 4);
    // PFM stores the bottom row first
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                buf.extend_from_slice(&(values(x, y, c) as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Splits a binary netpbm-style file into its whitespace-separated header
/// tokens and the payload that follows.
fn split_header<'a>(path: &Path, bytes: &'a [u8], tokens: usize) -> Result<(Vec<String>, &'a [u8])> {
    let mut out = Vec::with_capacity(tokens);
    let mut i = 0;
    while out.len() < tokens {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, "truncated header"));
        }
        out.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the payload
    if i >= bytes.len() {
        return Err(Error::format(path, "missing payload"));
    }
    Ok((out, &bytes[i + 1..]))
}

fn parse_dim(path: &Path, s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::format(path, format!("bad dimension {s:?}")))
}

fn read_pfm(path: &Path, channels: usize) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, payload) = split_header(path, &bytes, 4)?;
    let expected = if channels == 3 { "PF" } else { "Pf" };
    if header[0] != expected {
        return Err(Error::format(path, format!("expected {expected}, found {:?}", header[0])));
    }
    let width = parse_dim(path, &header[1])?;
    let height = parse_dim(path, &header[2])?;
    let scale: f64 = header[3]
        .parse()
        .map_err(|_| Error::format(path, "bad scale"))?;
    let little = scale < 0.0;
    let n = width * height * channels;
    if payload.len() != n * 4 {
        return Err(Error::format(
            path,
            format!("expected {} bytes of samples, found {}", n * 4, payload.len()),
        ));
    }
    let mut values = vec![0.0; n];
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let row = height - 1 - k / (width * channels);
        let rest = k % (width * channels);
        values[(row * width + rest / channels) * channels + rest % channels] = v as f64;
    }
    Ok((width, height, values))
}

pub fn write_normals_pfm(path: &Path, normals: &crate::image::NormalImage) -> Result<()> {
    let (w, h) = normals.dims();
    write_pfm(path, w, h, 3, |x, y, c| normals.normals.get(x, y)[c])
}

pub fn read_normals_pfm(path: &Path) -> Result<Grid<Vector3<f64>>> {
    let (w, h, v) = read_pfm(path, 3)?;
    let data = v.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
    Grid::from_vec(w, h, data)
}

pub fn write_depth_pfm(path: &Path, depth: &Grid<f64>) -> Result<()> {
    let (w, h) = depth.dims();
    write_pfm(path, w, h, 1, |x, y, _| *depth.get(x, y))
}

pub fn read_depth_pfm(path: &Path) -> Result<Grid<f64>> {
    let (w, h, v) = read_pfm(path, 1)?;
    Grid::from_vec(w, h, v)
}

pub fn write_mask_pgm(path: &Path, mask: &ContactMask) -> Result<()> {
    let (w, h) = mask.dims();
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    buf.extend(mask.as_slice().iter().map(|&m| if m { 255u8 } else { 0 }));
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a binary 8-bit PGM; any nonzero pixel counts as contact.
pub fn read_mask_pgm(path: &Path) -> Result<ContactMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, payload) = split_header(path, &bytes, 4)?;
    if header[0] != "P5" {
        return Err(Error::format(path, format!("expected P5, found {:?}", header[0])));
    }
    let width = parse_dim(path, &header[1])?;
    let height = parse_dim(path, &header[2])?;
    let maxval = parse_dim(path, &header[3])?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, "only 8-bit PGM masks are supported"));
    }
    if payload.len() != width * height {
        return Err(Error::format(
            path,
            format!("expected {} pixels, found {}", width * height, payload.len()),
        ));
    }
    Grid::from_vec(width, height, payload.iter().map(|&b| b != 0).collect())
}

/// ASCII PLY with `x y z nx ny nz` per vertex.
pub fn write_ply(path: &Path, points: &[Point3<f64>], normals: &[Vector3<f64>]) -> Result<()> {
    if points.len() != normals.len() {
        return Err(Error::Argument(format!(
            "{} points but {} normals",
            points.len(),
            normals.len()
        )));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(out, "ply")?;
        writeln!(out, "format ascii 1.0")?;
        writeln!(out, "element vertex {}", points.len())?;
        for name in ["x", "y", "z", "nx", "ny", "nz"] {
            writeln!(out, "property float {name}")?;
        }
        writeln!(out, "end_header")?;
        for (p, n) in points.iter().zip(normals) {
            writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
        }
        out.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<(Vec<Point3<f64>>, Vec<Vector3<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format(path, "missing ply magic"));
    }
    let mut count = None;
    let mut properties = Vec::new();
    for line in lines.by_ref() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(Error::format(path, "only ASCII PLY is supported")),
            ["element", "vertex", n] => count = Some(parse_dim(path, n)?),
            ["property", _, name] => properties.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    if properties != ["x", "y", "z", "nx", "ny", "nz"] {
        return Err(Error::format(path, format!("unexpected vertex properties {properties:?}")));
    }
    let count = count.ok_or_else(|| Error::format(path, "missing vertex count"))?;
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for line in lines.take(count) {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, format!("bad vertex line {line:?}")))?;
        if v.len() != 6 {
            return Err(Error::format(path, format!("bad vertex line {line:?}")));
        }
        points.push(Point3::new(v[0], v[1], v[2]));
        normals.push(Vector3::new(v[3], v[4], v[5]));
    }
    if points.len() != count {
        return Err(Error::format(path, "fewer vertices than declared"));
    }
    Ok((points, normals))
}
