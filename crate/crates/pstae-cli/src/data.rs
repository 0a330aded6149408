//! Disk layout helpers: video directories, score CSVs and sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pstae::formats;
use pstae::pointcloud::PointFrame;

pub struct VideoRecord {
    pub id: String,
    pub frames: Vec<PointFrame>,
    pub labels: Vec<u8>,
}

/// All `.pcv` videos of a directory in file-name order, with their label
/// sidecars (missing sidecar means all-normal).
pub fn load_video_dir(dir: &Path) -> Result<Vec<VideoRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "pcv").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .pcv videos in {}", dir.display());
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .map(String::from)
            .unwrap_or_else(|| "video".into());
        let frames = formats::read_pcv(&p).with_context(|| format!("reading {}", p.display()))?;
        let label_path = p.with_extension("labels");
        let labels = if label_path.exists() {
            formats::read_labels(&label_path)
                .with_context(|| format!("reading {}", label_path.display()))?
        } else {
            vec![0u8; frames.len()]
        };
        if labels.len() != frames.len() {
            bail!("{}: {} labels for {} frames", p.display(), labels.len(), frames.len());
        }
        out.push(VideoRecord { id, frames, labels });
    }
    Ok(out)
}

/// Class-labeled videos for the pretraining ingestion hook: `.class`
/// sidecars hold one integer per video.
pub fn load_action_dir(dir: &Path) -> Result<Vec<(String, Vec<PointFrame>, usize)>> {
    let mut out = Vec::new();
    for record in load_video_dir(dir)? {
        let class_path = dir.join(format!("{}.class", record.id));
        let text = fs::read_to_string(&class_path)
            .with_context(|| format!("reading {}", class_path.display()))?;
        let class: usize = text
            .trim()
            .parse()
            .with_context(|| format!("{}: class index", class_path.display()))?;
        out.push((record.id, record.frames, class));
    }
    Ok(out)
}

pub const SCORE_CSV_HEADER: &str = "frame,raw_loss,smoothed,score,label";

pub fn write_score_csv(path: &Path, series: &pstae::pipeline::ScoreSeries) -> Result<()> {
    let mut text = String::from(SCORE_CSV_HEADER);
    text.push('\n');
    for t in 0..series.len() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            t, series.raw_loss[t], series.smoothed[t], series.score[t], series.labels[t]
        ));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// `(video id, scores, labels)` from every CSV of a directory, file-name
/// order.
pub fn load_score_dir(dir: &Path) -> Result<Vec<(String, Vec<f64>, Vec<u8>)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no score CSVs in {}", dir.display());
    }
    let mut out = Vec::new();
    for p in paths {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .map(String::from)
            .unwrap_or_else(|| "video".into());
        let text = fs::read_to_string(&p)?;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                if line.trim() != SCORE_CSV_HEADER {
                    bail!("{}: unexpected header {line:?}", p.display());
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                bail!("{}: bad row {line:?}", p.display());
            }
            scores.push(cols[3].parse::<f64>().with_context(|| format!("{}: score", p.display()))?);
            labels.push(cols[4].parse::<u8>().with_context(|| format!("{}: label", p.display()))?);
        }
        out.push((id, scores, labels));
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    Ok(formats::read_manifest(path)?)
}
