//! Dataset ingestion: depth-image conversion, per-frame point-count
//! normalization and clip segmentation.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tube::fps;

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, PointCloudError>;

/// Pinhole camera model plus the meters-per-raw-unit depth scale.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(PointCloudError::Config("focal lengths must be positive".into()));
        }
        if self.depth_scale <= 0.0 {
            return Err(PointCloudError::Config("depth_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Per-point feature rows attached to a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    pub dim: usize,
    pub values: Vec<f64>,
}

/// One time step of a point-cloud video.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointFrame {
    pub points: Vec<[f64; 3]>,
    pub features: Option<FrameFeatures>,
}

impl PointFrame {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points, features: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.points {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(PointCloudError::Usage("non-finite coordinate in frame".into()));
            }
        }
        if let Some(f) = &self.features {
            if f.dim == 0 || f.values.len() != self.points.len() * f.dim {
                return Err(PointCloudError::Usage(format!(
                    "feature rows ({}) do not match point count ({})",
                    if f.dim == 0 { 0 } else { f.values.len() / f.dim },
                    self.points.len()
                )));
            }
        }
        Ok(())
    }
}

/// Fixed-length frame window, the autoencoder's unit of work.
#[derive(Clone, Debug)]
pub struct Clip {
    pub frames: Vec<PointFrame>,
    pub source_video_id: String,
    pub start_frame_index: usize,
    /// Number of repeated tail frames appended to reach full length.
    pub padded_tail: usize,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Count of frames that carry real data (excludes the padded tail).
    pub fn real_len(&self) -> usize {
        self.frames.len() - self.padded_tail
    }
}

/// Unproject a depth image through the pinhole model. Depth value 0 marks an
/// invalid pixel and is omitted; an all-invalid image yields an empty frame.
/// Points come out in row-major pixel order.
pub fn depth_to_pointcloud(
    depth: &[u16],
    width: usize,
    height: usize,
    intr: &CameraIntrinsics,
) -> Result<PointFrame> {
    intr.validate()?;
    if depth.len() != width * height {
        return Err(PointCloudError::Usage(format!(
            "depth buffer {} does not match {width}x{height}",
            depth.len()
        )));
    }
    let mut points = Vec::new();
    for v in 0..height {
        for u in 0..width {
            let d = depth[v * width + u];
            if d == 0 {
                continue;
            }
            let z = d as f64 * intr.depth_scale;
            let x = (u as f64 - intr.cx) * z / intr.fx;
            let y = (v as f64 - intr.cy) * z / intr.fy;
            points.push([x, y, z]);
        }
    }
    Ok(PointFrame::new(points))
}

/// Project a point back to pixel coordinates `(u, v, raw_depth)`.
pub fn project_point(p: [f64; 3], intr: &CameraIntrinsics) -> (f64, f64, f64) {
    let u = p[0] * intr.fx / p[2] + intr.cx;
    let v = p[1] * intr.fy / p[2] + intr.cy;
    (u, v, p[2] / intr.depth_scale)
}

/// Normalize a frame to exactly `target` points: farthest point sampling when
/// oversized, seeded uniform duplication of originals when undersized. An
/// empty frame passes through empty as the caller-visible sentinel.
pub fn resample_frame(frame: &PointFrame, target: usize, rng: &mut ChaCha20Rng) -> Result<PointFrame> {
    if target == 0 {
        return Err(PointCloudError::Config("resample target must be >= 1".into()));
    }
    let n = frame.len();
    if n == 0 {
        return Ok(PointFrame::new(Vec::new()));
    }
    if n == target {
        return Ok(PointFrame::new(frame.points.clone()));
    }
    if n > target {
        let idx = fps(&frame.points, target, 0)
            .map_err(|e| PointCloudError::Usage(e.to_string()))?;
        return Ok(PointFrame::new(idx.into_iter().map(|i| frame.points[i]).collect()));
    }
    let mut points = frame.points.clone();
    while points.len() < target {
        points.push(frame.points[rng.gen_range(0..n)]);
    }
    Ok(PointFrame::new(points))
}

/// Split a video into consecutive nonoverlapping clips of length `clip_len`.
/// With `pad_tail` a short remainder is completed by repeating its last frame
/// (the repeats are flagged); without it the remainder is dropped.
pub fn segment_video(
    frames: &[PointFrame],
    video_id: &str,
    clip_len: usize,
    pad_tail: bool,
) -> Result<Vec<Clip>> {
    if clip_len == 0 {
        return Err(PointCloudError::Config("clip length must be >= 1".into()));
    }
    let mut clips = Vec::new();
    let mut start = 0usize;
    while start + clip_len <= frames.len() {
        clips.push(Clip {
            frames: frames[start..start + clip_len].to_vec(),
            source_video_id: video_id.to_string(),
            start_frame_index: start,
            padded_tail: 0,
        });
        start += clip_len;
    }
    let rest = frames.len() - start;
    if rest > 0 && pad_tail {
        let mut tail: Vec<PointFrame> = frames[start..].to_vec();
        let last = tail.last().expect("rest > 0").clone();
        while tail.len() < clip_len {
            tail.push(last.clone());
        }
        clips.push(Clip {
            frames: tail,
            source_video_id: video_id.to_string(),
            start_frame_index: start,
            padded_tail: clip_len - rest,
        });
    }
    Ok(clips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics { fx: 500.0, fy: 450.0, cx: 320.0, cy: 240.0, depth_scale: 0.001 }
    }

    #[test]
    fn principal_point_maps_to_optical_axis() {
        let mut depth = vec![0u16; 640 * 480];
        depth[240 * 640 + 320] = 1000; // 1.0 m
        let f = depth_to_pointcloud(&depth, 640, 480, &intr()).unwrap();
        assert_eq!(f.len(), 1);
        let p = f.points[0];
        assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_focal_length_to_the_right_is_one_meter() {
        let i = intr();
        let u = (i.cx + i.fx) as usize;
        let mut depth = vec![0u16; 900 * 480];
        depth[240 * 900 + u] = 1000;
        let f = depth_to_pointcloud(&depth, 900, 480, &i).unwrap();
        let p = f.points[0];
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_invalid_depth_gives_empty_frame() {
        let depth = vec![0u16; 16 * 16];
        let f = depth_to_pointcloud(&depth, 16, 16, &intr()).unwrap();
        assert!(f.is_empty());
    }

    #[test]
    fn reprojection_recovers_source_pixels() {
        let i = intr();
        let mut depth = vec![0u16; 64 * 48];
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for d in depth.iter_mut() {
            *d = rng.gen_range(0..4000);
        }
        let f = depth_to_pointcloud(&depth, 64, 48, &i).unwrap();
        let mut it = f.points.iter();
        for v in 0..48 {
            for u in 0..64 {
                let d = depth[v * 64 + u];
                if d == 0 {
                    continue;
                }
                let p = it.next().unwrap();
                let (ur, vr, dr) = project_point(*p, &i);
                assert!((ur - u as f64).abs() < 0.5);
                assert!((vr - v as f64).abs() < 0.5);
                assert!((dr - d as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn resample_identity_when_sizes_match() {
        let f = PointFrame::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let r = resample_frame(&f, 2, &mut rng).unwrap();
        assert_eq!(r.points, f.points);
    }

    #[test]
    fn resample_down_returns_subset() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let pts: Vec<[f64; 3]> =
            (0..300).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let f = PointFrame::new(pts.clone());
        let r = resample_frame(&f, 64, &mut rng).unwrap();
        assert_eq!(r.len(), 64);
        for p in &r.points {
            assert!(pts.contains(p), "fabricated coordinate {p:?}");
        }
    }

    #[test]
    fn resample_up_duplicates_originals_only() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let pts: Vec<[f64; 3]> =
            (0..100).map(|i| [i as f64, 0.0, 0.0]).collect();
        let f = PointFrame::new(pts.clone());
        let r = resample_frame(&f, 256, &mut rng).unwrap();
        assert_eq!(r.len(), 256);
        // all originals still present, in order, at the front
        assert_eq!(&r.points[..100], &pts[..]);
        for p in &r.points[100..] {
            assert!(pts.contains(p));
        }
    }

    #[test]
    fn resample_empty_passes_through_as_sentinel() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let r = resample_frame(&PointFrame::default(), 128, &mut rng).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn segment_exact_multiple() {
        let frames = vec![PointFrame::default(); 45];
        let clips = segment_video(&frames, "v", 15, false).unwrap();
        assert_eq!(clips.len(), 3);
        assert_eq!(clips[2].start_frame_index, 30);
    }

    #[test]
    fn segment_drops_remainder_without_padding() {
        let frames = vec![PointFrame::default(); 44];
        let clips = segment_video(&frames, "v", 15, false).unwrap();
        assert_eq!(clips.len(), 2);
    }

    #[test]
    fn segment_pads_and_flags_remainder() {
        let frames = vec![PointFrame::default(); 44];
        let clips = segment_video(&frames, "v", 15, true).unwrap();
        assert_eq!(clips.len(), 3);
        assert_eq!(clips[2].padded_tail, 1);
        assert_eq!(clips[2].real_len(), 14);
    }

    #[test]
    fn segment_tiles_are_disjoint_and_ordered() {
        let frames = vec![PointFrame::default(); 52];
        let clips = segment_video(&frames, "v", 15, true).unwrap();
        let mut next = 0;
        for c in &clips {
            assert_eq!(c.start_frame_index, next);
            next += c.real_len();
        }
        assert_eq!(next, 52);
    }

    #[test]
    fn segment_empty_video() {
        assert!(segment_video(&[], "v", 15, true).unwrap().is_empty());
    }
}
