//! Spatio-temporal indexing kernels: farthest point sampling, ball query and
//! the temporal anchor/window arithmetic that together carve out the point
//! tube an operator aggregates over.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TubeError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TubeError>;

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Farthest point sampling. Starts at `seed_index`, then greedily appends the
/// point with the largest minimum distance to the selected set. Ties break to
/// the lowest index, so the result is deterministic.
pub fn fps(points: &[[f64; 3]], n: usize, seed_index: usize) -> Result<Vec<usize>> {
    if n == 0 || n > points.len() {
        return Err(TubeError::Usage(format!(
            "fps wants 1 <= n <= {}, got {n} (resample the frame first)",
            points.len()
        )));
    }
    if seed_index >= points.len() {
        return Err(TubeError::Usage(format!(
            "fps seed {seed_index} out of range {}",
            points.len()
        )));
    }
    let mut selected = Vec::with_capacity(n);
    selected.push(seed_index);
    let mut min_d2: Vec<f64> = points.iter().map(|&p| dist2(p, points[seed_index])).collect();
    while selected.len() < n {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = 0usize;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best {
                best = d;
                best_i = i;
            }
        }
        selected.push(best_i);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = dist2(points[i], points[best_i]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// Index of the lexicographically smallest coordinate, used as a
/// permutation-invariant sampling seed.
pub fn lex_min_seed(points: &[[f64; 3]]) -> usize {
    let mut best = 0usize;
    for (i, p) in points.iter().enumerate().skip(1) {
        let b = points[best];
        if (p[0], p[1], p[2]) < (b[0], b[1], b[2]) {
            best = i;
        }
    }
    best
}

/// Neighborhood assignment produced by `ball_query`.
///
/// `neighbor_indices` is an `anchor_count x k` row-major matrix of indices
/// into the queried source frame. Every listed neighbor lies within the query
/// radius of its anchor or duplicates one that does; the only exception is a
/// degenerate anchor (no source point in range at all), whose slots hold the
/// globally nearest point.
#[derive(Clone, Debug)]
pub struct NeighborTable {
    pub k: usize,
    pub anchor_indices: Vec<usize>,
    pub neighbor_indices: Vec<usize>,
    pub degenerate: Vec<bool>,
}

impl NeighborTable {
    pub fn anchor_count(&self) -> usize {
        self.degenerate.len()
    }

    pub fn neighbors_of(&self, anchor: usize) -> &[usize] {
        &self.neighbor_indices[anchor * self.k..(anchor + 1) * self.k]
    }
}

/// Up-to-`k` nearest source points within `radius` of each anchor, ascending
/// by distance with ties to the lowest index. Fewer than `k` qualifiers repeat
/// the nearest qualifier; zero qualifiers fall back to the globally nearest
/// source point and flag the anchor degenerate.
///
/// `anchor_indices` in the result is the identity; callers that obtained the
/// anchors by sampling can overwrite it with the sampled indices.
pub fn ball_query(
    anchors: &[[f64; 3]],
    source: &[[f64; 3]],
    radius: f64,
    k: usize,
) -> Result<NeighborTable> {
    if source.is_empty() {
        return Err(TubeError::Usage("ball_query on empty source frame".into()));
    }
    if radius <= 0.0 || k == 0 {
        return Err(TubeError::Config("ball_query wants radius > 0 and k >= 1".into()));
    }
    let r2 = radius * radius;
    let cell = radius;
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in source.iter().enumerate() {
        grid.entry(cell_of(*p, cell)).or_default().push(i);
    }

    let mut neighbor_indices = Vec::with_capacity(anchors.len() * k);
    let mut degenerate = vec![false; anchors.len()];
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for (ai, &a) in anchors.iter().enumerate() {
        candidates.clear();
        let (cx, cy, cz) = cell_of(a, cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ix) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in ix {
                            let d = dist2(a, source[i]);
                            if d <= r2 {
                                candidates.push((d, i));
                            }
                        }
                    }
                }
            }
        }
        candidates.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
        if candidates.is_empty() {
            // possible only when the anchor is not itself a source point
            let mut best = (f64::INFINITY, 0usize);
            for (i, &p) in source.iter().enumerate() {
                let d = dist2(a, p);
                if d < best.0 {
                    best = (d, i);
                }
            }
            degenerate[ai] = true;
            neighbor_indices.extend(std::iter::repeat(best.1).take(k));
        } else {
            for j in 0..k {
                let pick = if j < candidates.len() { candidates[j].1 } else { candidates[0].1 };
                neighbor_indices.push(pick);
            }
        }
    }
    Ok(NeighborTable {
        k,
        anchor_indices: (0..anchors.len()).collect(),
        neighbor_indices,
        degenerate,
    })
}

fn cell_of(p: [f64; 3], cell: f64) -> (i64, i64, i64) {
    (
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    )
}

/// Anchor frames and aggregation windows of a temporally strided operator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemporalPlan {
    pub input_length: usize,
    pub radius: usize,
    pub stride: usize,
    pub pad_begin: usize,
    pub pad_end: usize,
    pub anchor_frames: Vec<i64>,
}

impl TemporalPlan {
    pub fn output_length(&self) -> usize {
        self.anchor_frames.len()
    }

    pub fn window_size(&self) -> usize {
        2 * self.radius + 1
    }

    /// Input frames of the window around anchor `out_idx`, one entry per
    /// offset `-radius..=radius`; `None` marks a padding slot.
    pub fn window(&self, out_idx: usize) -> Vec<Option<usize>> {
        let anchor = self.anchor_frames[out_idx];
        (-(self.radius as i64)..=self.radius as i64)
            .map(|delta| {
                let f = anchor + delta;
                if f >= 0 && (f as usize) < self.input_length {
                    Some(f as usize)
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Plan a strided temporal aggregation:
/// `output_length = (input_length + p_begin + p_end - (2*r_t + 1)) / s_t + 1`
/// and `anchor_frames[k] = r_t - p_begin + k*s_t`.
pub fn temporal_plan(
    input_length: usize,
    r_t: usize,
    s_t: usize,
    p_begin: usize,
    p_end: usize,
) -> Result<TemporalPlan> {
    if s_t == 0 {
        return Err(TubeError::Config("temporal stride must be >= 1".into()));
    }
    let window = 2 * r_t as i64 + 1;
    let numer = input_length as i64 + p_begin as i64 + p_end as i64 - window;
    if numer < 0 {
        return Err(TubeError::Config(format!(
            "temporal plan infeasible: input {input_length}, radius {r_t}, padding [{p_begin},{p_end}]"
        )));
    }
    let output_length = (numer / s_t as i64 + 1) as usize;
    let anchor_frames: Vec<i64> = (0..output_length)
        .map(|k| r_t as i64 - p_begin as i64 + (k * s_t) as i64)
        .collect();
    Ok(TemporalPlan {
        input_length,
        radius: r_t,
        stride: s_t,
        pad_begin: p_begin,
        pad_end: p_end,
        anchor_frames,
    })
}

/// Scatter map of a transposed temporal operator. Input frame `k` scatters
/// into output frames `k*s_t + delta + p_begin` for `delta in 0..=2*r_t`,
/// clipped to the output range (negative padding trims symmetrically).
#[derive(Clone, Debug)]
pub struct ScatterPlan {
    pub input_length: usize,
    pub radius: usize,
    pub stride: usize,
    pub pad_begin: i64,
    pub pad_end: i64,
    pub output_length: usize,
    contributors: Vec<Vec<(usize, usize)>>,
}

impl ScatterPlan {
    /// `(input frame, offset)` pairs that land on output frame `o`.
    pub fn contributors(&self, o: usize) -> &[(usize, usize)] {
        &self.contributors[o]
    }

    /// The contributing input frame whose window center lies nearest to `o`
    /// (ties to the lowest input index); carries the coordinate set for the
    /// scattered features at `o`.
    pub fn carrier(&self, o: usize) -> usize {
        let mut best_k = self.contributors[o][0].0;
        let mut best_d = i64::MAX;
        for &(k, _) in &self.contributors[o] {
            let center = (k * self.stride) as i64 + self.radius as i64 + self.pad_begin;
            let d = (o as i64 - center).abs();
            if d < best_d {
                best_d = d;
                best_k = k;
            }
        }
        best_k
    }
}

pub fn transposed_temporal_plan(
    input_length: usize,
    r_t: usize,
    s_t: usize,
    p_begin: i64,
    p_end: i64,
) -> Result<ScatterPlan> {
    if s_t == 0 {
        return Err(TubeError::Config("temporal stride must be >= 1".into()));
    }
    if input_length == 0 {
        return Err(TubeError::Config("transposed plan needs at least one input frame".into()));
    }
    let window = 2 * r_t as i64 + 1;
    let out = (input_length as i64 - 1) * s_t as i64 + window + p_begin + p_end;
    if out < 1 {
        return Err(TubeError::Config(format!(
            "transposed plan yields length {out} < 1 (input {input_length}, radius {r_t}, \
             stride {s_t}, padding [{p_begin},{p_end}])"
        )));
    }
    let output_length = out as usize;
    let mut contributors: Vec<Vec<(usize, usize)>> = vec![Vec::new(); output_length];
    for k in 0..input_length {
        for delta in 0..=2 * r_t {
            let o = (k * s_t) as i64 + delta as i64 + p_begin;
            if o >= 0 && (o as usize) < output_length {
                contributors[o as usize].push((k, delta));
            }
        }
    }
    if let Some(gap) = contributors.iter().position(|c| c.is_empty()) {
        return Err(TubeError::Config(format!(
            "transposed plan leaves output frame {gap} without contributors"
        )));
    }
    Ok(ScatterPlan {
        input_length,
        radius: r_t,
        stride: s_t,
        pad_begin: p_begin,
        pad_end: p_end,
        output_length,
        contributors,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn line_points(xs: &[f64]) -> Vec<[f64; 3]> {
        xs.iter().map(|&x| [x, 0.0, 0.0]).collect()
    }

    #[test]
    fn fps_picks_farthest_first() {
        let pts = line_points(&[0.0, 0.1, 1.0, 2.0]);
        let idx = fps(&pts, 2, 0).unwrap();
        assert_eq!(idx, vec![0, 3]);
    }

    #[test]
    fn fps_full_is_permutation() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let pts: Vec<[f64; 3]> =
            (0..32).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let mut idx = fps(&pts, 32, 3).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn fps_single_returns_seed() {
        let pts = line_points(&[0.0, 1.0]);
        assert_eq!(fps(&pts, 1, 1).unwrap(), vec![1]);
    }

    #[test]
    fn fps_rejects_oversized_request() {
        let pts = line_points(&[0.0]);
        assert!(fps(&pts, 2, 0).is_err());
    }

    #[test]
    fn fps_matches_naive_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.gen_range(2..=64);
            let pts: Vec<[f64; 3]> = (0..n)
                .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
                .collect();
            let take = rng.gen_range(1..=n);
            assert_eq!(fps(&pts, take, 0).unwrap(), oracle::fps_naive(&pts, take, 0));
        }
    }

    #[test]
    fn fps_is_rigid_motion_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let pts: Vec<[f64; 3]> =
            (0..48).map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let idx = fps(&pts, 16, 2).unwrap();
        // translation + rotation about z by 90 degrees preserves distances
        let moved: Vec<[f64; 3]> =
            pts.iter().map(|p| [-(p[1]) + 4.0, p[0] - 7.0, p[2] + 0.5]).collect();
        assert_eq!(fps(&moved, 16, 2).unwrap(), idx);
    }

    #[test]
    fn ball_query_fill_rule() {
        let anchors = [[0.0, 0.0, 0.0]];
        let source = line_points(&[0.1, 0.4, 0.6]);
        let t = ball_query(&anchors, &source, 0.5, 4).unwrap();
        assert_eq!(t.neighbors_of(0), &[0, 1, 0, 0]);
        assert!(!t.degenerate[0]);
    }

    #[test]
    fn ball_query_isolated_coincident_point() {
        let anchors = [[1.0, 2.0, 3.0]];
        let source = [[1.0, 2.0, 3.0]];
        let t = ball_query(&anchors, &source, 0.5, 9).unwrap();
        assert_eq!(t.neighbors_of(0), &[0usize; 9]);
    }

    #[test]
    fn ball_query_takes_k_nearest_within_large_radius() {
        let anchors = [[0.0, 0.0, 0.0]];
        let source = line_points(&[0.1, 0.4, 0.6]);
        let t = ball_query(&anchors, &source, 10.0, 2).unwrap();
        assert_eq!(t.neighbors_of(0), &[0, 1]);
    }

    #[test]
    fn ball_query_degenerate_anchor_uses_global_nearest() {
        let anchors = [[100.0, 0.0, 0.0]];
        let source = line_points(&[0.0, 50.0, -3.0]);
        let t = ball_query(&anchors, &source, 0.5, 3).unwrap();
        assert!(t.degenerate[0]);
        assert_eq!(t.neighbors_of(0), &[1, 1, 1]);
    }

    #[test]
    fn ball_query_empty_source_errors() {
        let anchors = [[0.0, 0.0, 0.0]];
        assert!(ball_query(&anchors, &[], 1.0, 4).is_err());
    }

    #[test]
    fn ball_query_matches_naive_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        for round in 0..25 {
            let n = rng.gen_range(4..=200);
            let source: Vec<[f64; 3]> = (0..n)
                .map(|_| {
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
                })
                .collect();
            let a = rng.gen_range(1..=16);
            let anchors: Vec<[f64; 3]> = (0..a)
                .map(|_| {
                    [rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)]
                })
                .collect();
            let radius = rng.gen_range(0.05..0.8);
            let k = rng.gen_range(1..=9);
            let fast = ball_query(&anchors, &source, radius, k).unwrap();
            let (naive, naive_deg) = oracle::ball_query_naive(&anchors, &source, radius, k);
            assert_eq!(fast.neighbor_indices, naive, "round {round}");
            assert_eq!(fast.degenerate, naive_deg, "round {round}");
        }
    }

    #[test]
    fn ball_query_neighbors_stay_in_radius() {
        let mut rng = ChaCha20Rng::seed_from_u64(43);
        let source: Vec<[f64; 3]> = (0..128)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let anchors: Vec<[f64; 3]> = source.iter().step_by(4).copied().collect();
        let radius = 0.35;
        let t = ball_query(&anchors, &source, radius, 9).unwrap();
        for (ai, &a) in anchors.iter().enumerate() {
            assert!(!t.degenerate[ai]);
            for &ni in t.neighbors_of(ai) {
                assert!(dist2(a, source[ni]).sqrt() <= radius + 1e-12);
            }
            // the anchor is a source point, so it must appear among its own neighbors
            assert!(t.neighbors_of(ai).contains(&(ai * 4)));
        }
    }

    #[test]
    fn temporal_plan_strided() {
        let p = temporal_plan(15, 1, 2, 0, 0).unwrap();
        assert_eq!(p.anchor_frames, vec![1, 3, 5, 7, 9, 11, 13]);
        assert_eq!(p.output_length(), 7);
    }

    #[test]
    fn temporal_plan_padded_identity_length() {
        let p = temporal_plan(7, 1, 1, 1, 1).unwrap();
        assert_eq!(p.anchor_frames, (0..7).collect::<Vec<i64>>());
        // first window has a leading padding slot
        assert_eq!(p.window(0), vec![None, Some(0), Some(1)]);
        assert_eq!(p.window(6), vec![Some(5), Some(6), None]);
    }

    #[test]
    fn temporal_plan_identity() {
        let p = temporal_plan(3, 0, 1, 0, 0).unwrap();
        assert_eq!(p.anchor_frames, vec![0, 1, 2]);
        assert_eq!(p.window(1), vec![Some(1)]);
    }

    #[test]
    fn temporal_plan_infeasible_is_config_error() {
        assert!(matches!(temporal_plan(2, 1, 2, 0, 0), Err(TubeError::Config(_))));
    }

    #[test]
    fn transposed_lengths_invert_the_strided_plans() {
        assert_eq!(transposed_temporal_plan(3, 1, 1, -1, -1).unwrap().output_length, 3);
        assert_eq!(transposed_temporal_plan(3, 1, 2, 0, 0).unwrap().output_length, 7);
        assert_eq!(transposed_temporal_plan(7, 1, 2, 0, 0).unwrap().output_length, 15);
    }

    #[test]
    fn encoder_decoder_chain_round_trips() {
        // encoder stack on 15 frames
        let e2 = temporal_plan(15, 1, 2, 0, 0).unwrap();
        let e3 = temporal_plan(e2.output_length(), 1, 1, 1, 1).unwrap();
        let e4 = temporal_plan(e3.output_length(), 1, 2, 0, 0).unwrap();
        let e5 = temporal_plan(e4.output_length(), 1, 1, 1, 1).unwrap();
        assert_eq!(
            [e2.output_length(), e3.output_length(), e4.output_length(), e5.output_length()],
            [7, 7, 3, 3]
        );
        // paired decoder stack restores each input length in turn
        let d5 = transposed_temporal_plan(e5.output_length(), 1, 1, -1, -1).unwrap();
        assert_eq!(d5.output_length, e5.input_length);
        let d4 = transposed_temporal_plan(d5.output_length, 1, 2, 0, 0).unwrap();
        assert_eq!(d4.output_length, e4.input_length);
        let d3 = transposed_temporal_plan(d4.output_length, 1, 1, -1, -1).unwrap();
        assert_eq!(d3.output_length, e3.input_length);
        let d2 = transposed_temporal_plan(d3.output_length, 1, 2, 0, 0).unwrap();
        assert_eq!(d2.output_length, 15);
    }

    #[test]
    fn scatter_contributors_mirror_encoder_windows() {
        let p = transposed_temporal_plan(7, 1, 2, 0, 0).unwrap();
        // output frame 2 receives from input 0 (offset 2) and input 1 (offset 0)
        assert_eq!(p.contributors(2), &[(0, 2), (1, 0)]);
        // carrier prefers the nearer window center; centers are 1, 3 -> tie, lowest k
        assert_eq!(p.carrier(2), 0);
        assert_eq!(p.contributors(0), &[(0, 0)]);
        assert_eq!(p.contributors(14), &[(6, 2)]);
    }

    #[test]
    fn scatter_with_gaps_is_config_error() {
        // stride 3 with radius 0 leaves output frames uncovered
        assert!(transposed_temporal_plan(3, 0, 3, 0, 0).is_err());
    }
}
