//! Voxel-density background subtraction.
//!
//! Static scene structure accumulates a high point count in its voxel over a
//! window of frames; anything below the density threshold is treated as
//! moving foreground.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::pointcloud::PointFrame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BgWindow {
    /// Consecutive nonoverlapping blocks of `window_frames` frames, each
    /// classified against its own density grid.
    Block,
    /// One grid accumulated over the entire video.
    WholeVideo,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BgsubConfig {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// Frames accumulated into one density grid.
    pub window_frames: usize,
    /// Points above this cumulative count mark a voxel as background.
    pub density_threshold: u64,
    pub window: BgWindow,
}

impl Default for BgsubConfig {
    fn default() -> Self {
        Self { voxel_size: 0.05, window_frames: 30, density_threshold: 100, window: BgWindow::Block }
    }
}

pub type VoxelKey = (i64, i64, i64);

/// Cumulative point count per voxel. Voxel of a point is `floor(p / r)`
/// componentwise, so boundary points belong to the higher-index voxel.
#[derive(Clone, Debug, Default)]
pub struct DensityGrid {
    counts: HashMap<VoxelKey, u64>,
}

impl DensityGrid {
    pub fn count(&self, key: VoxelKey) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn occupied_voxels(&self) -> usize {
        self.counts.len()
    }
}

pub fn voxel_of(p: [f64; 3], voxel_size: f64) -> VoxelKey {
    (
        (p[0] / voxel_size).floor() as i64,
        (p[1] / voxel_size).floor() as i64,
        (p[2] / voxel_size).floor() as i64,
    )
}

/// Total point count per voxel across all frames.
pub fn build_density_grid(frames: &[PointFrame], voxel_size: f64) -> DensityGrid {
    let mut grid = DensityGrid::default();
    for f in frames {
        for &p in &f.points {
            *grid.counts.entry(voxel_of(p, voxel_size)).or_insert(0) += 1;
        }
    }
    grid
}

/// Split every frame into (foreground, background) by voxel density. The
/// video is processed in windows per `cfg.window`; a final short block uses
/// its own length. Point order is preserved within each class.
pub fn classify_foreground(
    video: &[PointFrame],
    cfg: &BgsubConfig,
) -> (Vec<PointFrame>, Vec<PointFrame>) {
    let mut fg = Vec::with_capacity(video.len());
    let mut bg = Vec::with_capacity(video.len());
    let block_len = match cfg.window {
        BgWindow::Block => cfg.window_frames.max(1),
        BgWindow::WholeVideo => video.len().max(1),
    };
    let mut start = 0usize;
    while start < video.len() {
        let end = (start + block_len).min(video.len());
        let grid = build_density_grid(&video[start..end], cfg.voxel_size);
        for frame in &video[start..end] {
            let mut f = Vec::new();
            let mut b = Vec::new();
            for &p in &frame.points {
                if grid.count(voxel_of(p, cfg.voxel_size)) > cfg.density_threshold {
                    b.push(p);
                } else {
                    f.push(p);
                }
            }
            fg.push(PointFrame::new(f));
            bg.push(PointFrame::new(b));
        }
        start = end;
    }
    (fg, bg)
}

/// Baseline scoring: 1 for frames with any foreground point, 0 otherwise.
pub fn bgsub_baseline_score(foreground: &[PointFrame]) -> Vec<f64> {
    foreground.iter().map(|f| if f.is_empty() { 0.0 } else { 1.0 }).collect()
}
