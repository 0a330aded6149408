//! Forward passes of the two point spatio-temporal operators.
//!
//! Geometry (sampling, neighborhoods, interpolation stencils) depends only on
//! coordinates, never on features or weights, so it is planned once per clip
//! and reused across every training step.

use std::sync::Arc;

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::net::{FpsSeed, NetError, PstLayerConfig, Result, TransLayerConfig};
use crate::tube::{
    ball_query, fps, lex_min_seed, temporal_plan, transposed_temporal_plan, NeighborTable,
    ScatterPlan, TemporalPlan,
};

/// Sampled anchors and per-window-slot neighborhoods of one downsampling
/// layer applied to one clip.
#[derive(Clone, Debug)]
pub struct PstOpGeometry {
    pub plan: TemporalPlan,
    /// Per output frame: anchor indices into the central frame.
    pub anchor_indices: Vec<Vec<usize>>,
    /// Per output frame: anchor coordinates (the output coordinates).
    pub anchor_coords: Vec<Vec<[f64; 3]>>,
    /// Per output frame, per window slot: `None` marks a padding slot,
    /// otherwise `(source frame, neighbors of every anchor in that frame)`.
    pub windows: Vec<Vec<Option<(usize, NeighborTable)>>>,
}

impl PstOpGeometry {
    pub fn output_spatial_len(&self) -> usize {
        self.anchor_coords.first().map(|a| a.len()).unwrap_or(0)
    }
}

/// Sample anchors on each central frame and query the spatial neighborhood of
/// those anchors in every frame of the temporal window.
pub fn plan_pstop(
    coords: &[Vec<[f64; 3]>],
    cfg: &PstLayerConfig,
    seed: FpsSeed,
) -> Result<PstOpGeometry> {
    let plan = temporal_plan(coords.len(), cfg.temporal_radius, cfg.temporal_stride, cfg.pad.0, cfg.pad.1)?;
    let spatial_len = coords.first().map(|c| c.len()).unwrap_or(0);
    for (t, frame) in coords.iter().enumerate() {
        if frame.is_empty() {
            return Err(NetError::Config(format!("frame {t} is empty; pre-handle empty frames")));
        }
        if frame.len() != spatial_len {
            return Err(NetError::Config(format!(
                "frame {t} has {} points, expected {spatial_len}",
                frame.len()
            )));
        }
    }
    if cfg.spatial_stride == 0 {
        return Err(NetError::Config("spatial stride must be >= 1".into()));
    }
    let n_anchors = (spatial_len / cfg.spatial_stride).max(1);

    let mut anchor_indices = Vec::with_capacity(plan.output_length());
    let mut anchor_coords = Vec::with_capacity(plan.output_length());
    let mut windows = Vec::with_capacity(plan.output_length());
    for out_idx in 0..plan.output_length() {
        let central = plan.anchor_frames[out_idx];
        if central < 0 || central as usize >= coords.len() {
            return Err(NetError::Config(format!(
                "anchor frame {central} outside the input; padding exceeds the temporal radius"
            )));
        }
        let central_pts = &coords[central as usize];
        let seed_index = match seed {
            FpsSeed::InputOrder => 0,
            FpsSeed::LexMin => lex_min_seed(central_pts),
        };
        let idx = fps(central_pts, n_anchors, seed_index)?;
        let a_coords: Vec<[f64; 3]> = idx.iter().map(|&i| central_pts[i]).collect();

        let mut slots = Vec::with_capacity(plan.window_size());
        for frame in plan.window(out_idx) {
            match frame {
                None => slots.push(None),
                Some(src) => {
                    let mut table =
                        ball_query(&a_coords, &coords[src], cfg.spatial_radius, cfg.k)?;
                    table.anchor_indices = idx.clone();
                    slots.push(Some((src, table)));
                }
            }
        }
        anchor_indices.push(idx);
        anchor_coords.push(a_coords);
        windows.push(slots);
    }
    Ok(PstOpGeometry { plan, anchor_indices, anchor_coords, windows })
}

/// Graph nodes of one downsampling layer's weights.
#[derive(Clone, Copy, Debug)]
pub struct PstOpWeights {
    pub spatial_w: NodeId,
    pub spatial_b: NodeId,
    pub temporal_w: NodeId,
    pub temporal_b: NodeId,
}

impl PstOpWeights {
    pub fn bind(g: &mut Graph, params: &ParamSet, layer: &str) -> Result<Self> {
        Ok(Self {
            spatial_w: g.param(params, &format!("{layer}.spatial.w"))?,
            spatial_b: g.param(params, &format!("{layer}.spatial.b"))?,
            temporal_w: g.param(params, &format!("{layer}.temporal.w"))?,
            temporal_b: g.param(params, &format!("{layer}.temporal.b"))?,
        })
    }
}

/// Run one downsampling operator inside a graph.
///
/// `features` holds one `[points, channels]` node per input frame, or `None`
/// when the layer consumes raw geometry only (the displacement vectors are
/// then the entire spatial MLP input). Returns one `[anchors, c_t]` node per
/// output frame.
pub fn pstop_forward(
    g: &mut Graph,
    w: &PstOpWeights,
    cfg: &PstLayerConfig,
    geom: &PstOpGeometry,
    coords: &[Vec<[f64; 3]>],
    features: Option<&[NodeId]>,
) -> Result<Vec<NodeId>> {
    let mut outputs = Vec::with_capacity(geom.plan.output_length());
    for out_idx in 0..geom.plan.output_length() {
        let anchors = &geom.anchor_coords[out_idx];
        let n_anchors = anchors.len();
        let mut window_feats = Vec::with_capacity(geom.plan.window_size());
        for slot in &geom.windows[out_idx] {
            match slot {
                None => window_feats.push(g.zeros(vec![n_anchors, cfg.spatial_channels])),
                Some((src, table)) => {
                    let src_pts = &coords[*src];
                    let mut delta = Vec::with_capacity(n_anchors * table.k * 3);
                    for (a, anchor) in anchors.iter().enumerate() {
                        for &ni in table.neighbors_of(a) {
                            let p = src_pts[ni];
                            delta.push(p[0] - anchor[0]);
                            delta.push(p[1] - anchor[1]);
                            delta.push(p[2] - anchor[2]);
                        }
                    }
                    let delta =
                        Tensor::new(vec![n_anchors * table.k, 3], delta).map_err(NetError::from)?;
                    let delta = g.constant(&delta);
                    let mlp_in = match features {
                        None => delta,
                        Some(feats) => {
                            let gathered = g
                                .gather_rows(feats[*src], Arc::new(table.neighbor_indices.clone()))?;
                            g.concat(1, &[delta, gathered])?
                        }
                    };
                    let h = g.matmul(mlp_in, w.spatial_w)?;
                    let h = g.add_bias(h, w.spatial_b)?;
                    let h = g.relu(h);
                    let h = g.reshape(h, vec![n_anchors, table.k, cfg.spatial_channels])?;
                    window_feats.push(g.max_axis(h, 1)?);
                }
            }
        }
        let stacked = if window_feats.len() == 1 {
            window_feats[0]
        } else {
            g.concat(1, &window_feats)?
        };
        let h = g.matmul(stacked, w.temporal_w)?;
        let h = g.add_bias(h, w.temporal_b)?;
        outputs.push(g.relu(h));
    }
    Ok(outputs)
}

/// Interpolation stencil: for each target point, its 3 nearest anchors with
/// inverse-square-distance weights; an exactly coincident anchor takes the
/// full weight alone.
fn interp_stencil(sources: &[[f64; 3]], targets: &[[f64; 3]]) -> (Vec<usize>, Vec<f64>, usize) {
    let k = sources.len().min(3);
    let mut indices = Vec::with_capacity(targets.len() * k);
    let mut weights = Vec::with_capacity(targets.len() * k);
    for t in targets {
        let mut nearest: Vec<(f64, usize)> = sources
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let dx = s[0] - t[0];
                let dy = s[1] - t[1];
                let dz = s[2] - t[2];
                (dx * dx + dy * dy + dz * dz, i)
            })
            .collect();
        nearest.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        nearest.truncate(k);
        if nearest[0].0 == 0.0 {
            for j in 0..k {
                indices.push(nearest[0].1);
                weights.push(if j == 0 { 1.0 } else { 0.0 });
            }
        } else {
            let inv: Vec<f64> = nearest.iter().map(|(d2, _)| 1.0 / d2).collect();
            let total: f64 = inv.iter().sum();
            for j in 0..k {
                indices.push(nearest[j].1);
                weights.push(inv[j] / total);
            }
        }
    }
    (indices, weights, k)
}

/// Scatter targets, carrier frames and interpolation stencils of one
/// transposed layer applied to one clip.
#[derive(Clone, Debug)]
pub struct PstTransGeometry {
    pub plan: ScatterPlan,
    /// Per output frame: the input frame whose coordinates carry the scattered
    /// features.
    pub carriers: Vec<usize>,
    /// Per output frame: 3-NN inverse-distance stencil from the carrier
    /// coordinates onto the skip coordinates.
    pub interp: Vec<(Arc<Vec<usize>>, Arc<Vec<f64>>, usize)>,
    /// Target coordinates per output frame (the paired layer's input).
    pub skip_coords: Vec<Vec<[f64; 3]>>,
}

pub fn plan_psttrans(
    input_coords: &[Vec<[f64; 3]>],
    skip_coords: &[Vec<[f64; 3]>],
    cfg: &TransLayerConfig,
) -> Result<PstTransGeometry> {
    let plan = transposed_temporal_plan(
        input_coords.len(),
        cfg.temporal_radius,
        cfg.temporal_stride,
        cfg.pad.0,
        cfg.pad.1,
    )?;
    if skip_coords.len() != plan.output_length {
        return Err(NetError::Config(format!(
            "skip connection supplies {} frames, transposed plan yields {}",
            skip_coords.len(),
            plan.output_length
        )));
    }
    let spatial_len = input_coords.first().map(|c| c.len()).unwrap_or(0);
    for (t, frame) in input_coords.iter().enumerate() {
        if frame.len() != spatial_len || frame.is_empty() {
            return Err(NetError::Config(format!(
                "input frame {t} has {} points, expected nonzero {spatial_len}",
                frame.len()
            )));
        }
    }
    let mut carriers = Vec::with_capacity(plan.output_length);
    let mut interp = Vec::with_capacity(plan.output_length);
    for o in 0..plan.output_length {
        let carrier = plan.carrier(o);
        let (idx, w, k) = interp_stencil(&input_coords[carrier], &skip_coords[o]);
        carriers.push(carrier);
        interp.push((Arc::new(idx), Arc::new(w), k));
    }
    Ok(PstTransGeometry { plan, carriers, interp, skip_coords: skip_coords.to_vec() })
}

/// Graph nodes of one transposed layer's weights.
#[derive(Clone, Debug)]
pub struct PstTransWeights {
    pub temporal_w: Vec<NodeId>,
    pub temporal_b: NodeId,
    pub spatial_w: NodeId,
    pub spatial_b: NodeId,
}

impl PstTransWeights {
    pub fn bind(g: &mut Graph, params: &ParamSet, layer: &str, window: usize) -> Result<Self> {
        let mut temporal_w = Vec::with_capacity(window);
        for delta in 0..window {
            temporal_w.push(g.param(params, &format!("{layer}.temporal.w{delta}"))?);
        }
        Ok(Self {
            temporal_w,
            temporal_b: g.param(params, &format!("{layer}.temporal.b"))?,
            spatial_w: g.param(params, &format!("{layer}.spatial.w"))?,
            spatial_b: g.param(params, &format!("{layer}.spatial.b"))?,
        })
    }
}

/// Run one transposed operator inside a graph: per-offset temporal scatter
/// summed per output frame, activation, then inverse-distance propagation
/// onto the skip coordinates and a spatial projection. The final decoder
/// layer omits the output activation.
pub fn psttrans_forward(
    g: &mut Graph,
    w: &PstTransWeights,
    cfg: &TransLayerConfig,
    geom: &PstTransGeometry,
    features: &[NodeId],
    final_layer: bool,
) -> Result<Vec<NodeId>> {
    if features.len() != geom.plan.input_length {
        return Err(NetError::Config(format!(
            "{} input frames vs plan length {}",
            features.len(),
            geom.plan.input_length
        )));
    }
    if w.temporal_w.len() != 2 * cfg.temporal_radius + 1 {
        return Err(NetError::Config(format!(
            "{} temporal matrices vs window {}",
            w.temporal_w.len(),
            2 * cfg.temporal_radius + 1
        )));
    }
    let mut outputs = Vec::with_capacity(geom.plan.output_length);
    for o in 0..geom.plan.output_length {
        let mut acc: Option<NodeId> = None;
        for &(k, delta) in geom.plan.contributors(o) {
            let part = g.matmul(features[k], w.temporal_w[delta])?;
            acc = Some(match acc {
                None => part,
                Some(prev) => g.add(prev, part)?,
            });
        }
        let summed = acc.expect("transposed plan guarantees a contributor");
        let h = g.add_bias(summed, w.temporal_b)?;
        let h = g.relu(h);
        let (idx, wts, k) = &geom.interp[o];
        let h = g.interp_rows(h, Arc::clone(idx), Arc::clone(wts), *k)?;
        let h = g.matmul(h, w.spatial_w)?;
        let h = g.add_bias(h, w.spatial_b)?;
        outputs.push(if final_layer { h } else { g.relu(h) });
    }
    Ok(outputs)
}
