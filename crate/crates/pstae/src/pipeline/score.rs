//! Per-frame anomaly scoring: foreground isolation, descriptor extraction,
//! reconstruction, loss smoothing and per-video normalization.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::bgsub::{classify_foreground, BgsubConfig};
use crate::net::{
    extractor_forward_values, pstae_forward_values, pstae_geometry, ExtractorConfig, FpsSeed,
    PstaeNetwork,
};
use crate::pipeline::loss::{anchor_errors, per_frame_loss};
use crate::pipeline::{PipelineError, Result};
use crate::pointcloud::{resample_frame, segment_video, PointFrame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothOrder {
    /// Smooth raw losses, then min-max normalize (default).
    PreNorm,
    /// Min-max normalize raw losses, then smooth.
    PostNorm,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Points per frame after normalization.
    pub points_per_frame: usize,
    /// Clip length in frames.
    pub clip_len: usize,
    /// Trailing moving-average window over per-frame losses.
    pub smooth_window: usize,
    pub smooth_order: SmoothOrder,
    /// Frames with fewer foreground points count as empty and score zero.
    pub min_foreground_points: usize,
    pub fps_seed: FpsSeed,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            points_per_frame: 2048,
            clip_len: 15,
            smooth_window: 10,
            smooth_order: SmoothOrder::PreNorm,
            min_foreground_points: 16,
            fps_seed: FpsSeed::InputOrder,
        }
    }
}

/// Frame-by-frame scoring record of one video.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub video_id: String,
    pub raw_loss: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Min-max normalized per video, in [0, 1].
    pub score: Vec<f64>,
    pub labels: Vec<u8>,
    /// Retained for the record; padding clips are already dropped from the
    /// series, so entries are false.
    pub padded: Vec<bool>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.raw_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_loss.is_empty()
    }
}

/// Trailing moving average: mean of up to `window` samples ending at `t`.
pub fn smooth_trailing(raw: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    raw.iter()
        .enumerate()
        .map(|(t, _)| {
            let lo = (t + 1).saturating_sub(w);
            let slice = &raw[lo..=t];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Map to [0, 1] per video; a constant series maps to all zeros.
pub fn min_max_normalize(x: &[f64]) -> Vec<f64> {
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() || max <= min {
        return vec![0.0; x.len()];
    }
    x.iter().map(|&v| (v - min) / (max - min)).collect()
}

/// Everything the reconstruction scorer needs, borrowed from the caller.
pub struct ScoreContext<'a> {
    pub bgsub: &'a BgsubConfig,
    pub pipeline: &'a PipelineConfig,
    pub extractor_cfg: &'a ExtractorConfig,
    pub extractor_params: &'a ParamSet,
    pub net: &'a PstaeNetwork,
    pub net_params: &'a ParamSet,
}

/// Foreground frames normalized to the pipeline point count; frames whose
/// foreground falls below the minimum size come back empty. Shared by
/// training preparation and scoring.
pub fn prepare_video_frames(
    frames: &[PointFrame],
    bgsub: &BgsubConfig,
    pipeline: &PipelineConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<PointFrame>> {
    let (fg, _) = classify_foreground(frames, bgsub);
    let mut out = Vec::with_capacity(fg.len());
    for f in &fg {
        if f.len() < pipeline.min_foreground_points {
            out.push(PointFrame::default());
        } else {
            out.push(resample_frame(f, pipeline.points_per_frame, rng)?);
        }
    }
    Ok(out)
}

/// For every empty frame of a clip, the index of the nearest nonempty frame
/// (earlier preferred on ties). `None` when the whole clip is empty.
fn substitution_plan(frames: &[PointFrame]) -> Option<Vec<usize>> {
    let nonempty: Vec<usize> =
        frames.iter().enumerate().filter(|(_, f)| !f.is_empty()).map(|(i, _)| i).collect();
    if nonempty.is_empty() {
        return None;
    }
    Some(
        (0..frames.len())
            .map(|t| {
                *nonempty
                    .iter()
                    .min_by_key(|&&i| (t.abs_diff(i), i))
                    .expect("nonempty checked")
            })
            .collect(),
    )
}

/// Reconstruction losses for all real frames of one prepared clip; empty
/// frames score zero without influencing the network evaluation.
fn clip_losses(clip_frames: &[PointFrame], real_len: usize, ctx: &ScoreContext) -> Result<Vec<f64>> {
    let Some(subst) = substitution_plan(clip_frames) else {
        return Ok(vec![0.0; real_len]);
    };
    let coords: Vec<Vec<[f64; 3]>> =
        subst.iter().map(|&src| clip_frames[src].points.clone()).collect();
    let extracted = extractor_forward_values(
        ctx.extractor_params,
        ctx.extractor_cfg,
        &coords,
        ctx.pipeline.fps_seed,
    )?;
    let geom = pstae_geometry(&extracted.coords(), ctx.net, ctx.pipeline.fps_seed)?;
    let recon = pstae_forward_values(ctx.net_params, ctx.net, &geom, &extracted)?;
    let losses = per_frame_loss(&extracted, &recon)?;
    Ok((0..real_len)
        .map(|t| if clip_frames[t].is_empty() { 0.0 } else { losses[t] })
        .collect())
}

/// Score one video end to end. `video_seed` drives the resampling draws so a
/// fixed (config, video) pair always produces identical output.
pub fn score_video(
    video_id: &str,
    frames: &[PointFrame],
    labels: &[u8],
    ctx: &ScoreContext,
    video_seed: u64,
) -> Result<ScoreSeries> {
    if labels.len() != frames.len() {
        return Err(PipelineError::Usage(format!(
            "{} labels for {} frames",
            labels.len(),
            frames.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(video_seed);
    let prepared = prepare_video_frames(frames, ctx.bgsub, ctx.pipeline, &mut rng)?;
    let clips = segment_video(&prepared, video_id, ctx.pipeline.clip_len, true)?;

    let mut raw = Vec::with_capacity(frames.len());
    for clip in &clips {
        let losses = clip_losses(&clip.frames, clip.real_len(), ctx)?;
        raw.extend(losses);
    }
    debug_assert_eq!(raw.len(), frames.len());

    let (smoothed, score) = match ctx.pipeline.smooth_order {
        SmoothOrder::PreNorm => {
            let smoothed = smooth_trailing(&raw, ctx.pipeline.smooth_window);
            let score = min_max_normalize(&smoothed);
            (smoothed, score)
        }
        SmoothOrder::PostNorm => {
            let normalized = min_max_normalize(&raw);
            let smoothed = smooth_trailing(&normalized, ctx.pipeline.smooth_window);
            let score = smoothed.clone();
            (smoothed, score)
        }
    };
    Ok(ScoreSeries {
        video_id: video_id.to_string(),
        padded: vec![false; raw.len()],
        raw_loss: raw,
        smoothed,
        score,
        labels: labels.to_vec(),
    })
}

/// Per-anchor reconstruction errors of one frame, for heat-map export.
#[derive(Clone, Debug)]
pub struct HeatmapFrame {
    pub frame_index: usize,
    pub coords: Vec<[f64; 3]>,
    pub errors: Vec<f64>,
}

/// Anchor-level reconstruction errors over a whole video.
pub fn heatmap_video(
    frames: &[PointFrame],
    ctx: &ScoreContext,
    video_seed: u64,
) -> Result<Vec<HeatmapFrame>> {
    let mut rng = ChaCha20Rng::seed_from_u64(video_seed);
    let prepared = prepare_video_frames(frames, ctx.bgsub, ctx.pipeline, &mut rng)?;
    let clips = segment_video(&prepared, "heatmap", ctx.pipeline.clip_len, true)?;
    let mut out = Vec::with_capacity(frames.len());
    for clip in &clips {
        let real = clip.real_len();
        match substitution_plan(&clip.frames) {
            None => {
                for t in 0..real {
                    out.push(HeatmapFrame {
                        frame_index: clip.start_frame_index + t,
                        coords: Vec::new(),
                        errors: Vec::new(),
                    });
                }
            }
            Some(subst) => {
                let coords: Vec<Vec<[f64; 3]>> =
                    subst.iter().map(|&src| clip.frames[src].points.clone()).collect();
                let extracted = extractor_forward_values(
                    ctx.extractor_params,
                    ctx.extractor_cfg,
                    &coords,
                    ctx.pipeline.fps_seed,
                )?;
                let geom = pstae_geometry(&extracted.coords(), ctx.net, ctx.pipeline.fps_seed)?;
                let recon = pstae_forward_values(ctx.net_params, ctx.net, &geom, &extracted)?;
                for t in 0..real {
                    if clip.frames[t].is_empty() {
                        out.push(HeatmapFrame {
                            frame_index: clip.start_frame_index + t,
                            coords: Vec::new(),
                            errors: Vec::new(),
                        });
                    } else {
                        out.push(HeatmapFrame {
                            frame_index: clip.start_frame_index + t,
                            coords: extracted.frames[t].coords.clone(),
                            errors: anchor_errors(
                                &extracted.frames[t].features,
                                &recon.frames[t].features,
                            ),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_window_hand_case() {
        // 12 frames, spike of 10 at the end: last window mean is 10/10
        let mut raw = vec![0.0; 12];
        raw[11] = 10.0;
        let sm = smooth_trailing(&raw, 10);
        assert!((sm[11] - 1.0).abs() < 1e-12);
        assert_eq!(sm[0], 0.0);
        let norm = min_max_normalize(&sm);
        assert_eq!(norm[11], 1.0);
    }

    #[test]
    fn constant_series_normalizes_to_zero() {
        let raw = vec![3.5; 8];
        assert!(min_max_normalize(&raw).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothing_is_convex_and_length_preserving() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let raw: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..5.0)).collect();
        let sm = smooth_trailing(&raw, 10);
        assert_eq!(sm.len(), raw.len());
        let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
        for &v in &sm {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12 && v >= 0.0);
        }
    }

    #[test]
    fn min_max_maps_extremes() {
        let x = vec![2.0, 8.0, 5.0];
        let n = min_max_normalize(&x);
        assert_eq!(n[0], 0.0);
        assert_eq!(n[1], 1.0);
        assert!((n[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn substitution_prefers_earlier_on_ties() {
        let e = PointFrame::default;
        let p = || PointFrame::new(vec![[0.0; 3]]);
        // nonempty at 1 and 3; frame 2 ties -> earlier (1)
        let frames = vec![e(), p(), e(), p()];
        let plan = substitution_plan(&frames).unwrap();
        assert_eq!(plan, vec![1, 1, 1, 3]);
        assert!(substitution_plan(&[e(), e()]).is_none());
    }
}
