//! On-disk formats: the native point-video container, label sidecars, the
//! category manifest, intrinsics JSON, heat-map PLY export and 16-bit depth
//! PNG ingestion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::pointcloud::{CameraIntrinsics, PointFrame};

pub const PCV_MAGIC: &[u8; 4] = b"PCV1";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad file: {0}")]
    Malformed(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Write a point-cloud video: magic `PCV1`, `u32` frame count, then per frame
/// a `u32` point count and little-endian `f32` xyz triples.
pub fn write_pcv(path: &Path, frames: &[PointFrame]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(PCV_MAGIC)?;
    w.write_all(&(frames.len() as u32).to_le_bytes())?;
    for f in frames {
        w.write_all(&(f.len() as u32).to_le_bytes())?;
        for p in &f.points {
            for &c in p {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pcv(path: &Path) -> Result<Vec<PointFrame>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != PCV_MAGIC {
        return Err(FormatError::Malformed(format!("bad magic {magic:?}")));
    }
    let frame_count = read_u32(&mut r)? as usize;
    let mut frames = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let n = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; n * 12];
        r.read_exact(&mut buf)?;
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let at = |j: usize| {
                f32::from_le_bytes(buf[i * 12 + j * 4..i * 12 + j * 4 + 4].try_into().unwrap())
                    as f64
            };
            points.push([at(0), at(1), at(2)]);
        }
        frames.push(PointFrame::new(points));
    }
    Ok(frames)
}

/// One `0`/`1` line per frame.
pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &l in labels {
        writeln!(w, "{}", if l == 0 { 0 } else { 1 })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let r = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        match t {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(FormatError::Malformed(format!("label line {other:?} is not 0/1")))
            }
        }
    }
    Ok(labels)
}

/// Video id -> category name, consumed by the evaluation harness.
pub fn write_manifest(path: &Path, manifest: &BTreeMap<String, String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_intrinsics(path: &Path, intr: &CameraIntrinsics) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, intr)?;
    w.flush()?;
    Ok(())
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// ASCII PLY with x, y, z and a scalar `error` per vertex.
pub fn write_heatmap_ply(path: &Path, points: &[[f64; 3]], errors: &[f64]) -> Result<()> {
    if points.len() != errors.len() {
        return Err(FormatError::Malformed(format!(
            "{} points vs {} errors",
            points.len(),
            errors.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "property float error")?;
    writeln!(w, "end_header")?;
    for (p, e) in points.iter().zip(errors) {
        writeln!(w, "{} {} {} {}", p[0] as f32, p[1] as f32, p[2] as f32, *e as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Load a 16-bit grayscale PNG depth image as `(width, height, raw values)`.
pub fn read_depth_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| FormatError::Png(e.to_string()))?;
    let gray = img.into_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok((w, h, gray.into_raw()))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
