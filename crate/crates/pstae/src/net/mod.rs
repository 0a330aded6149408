//! Point spatio-temporal operators and the autoencoder assembled from them.
//!
//! `PstOp` aggregates per-anchor spatial neighborhoods and then a temporal
//! window of frames (spatial stage, then temporal stage). `PstTransOp` runs
//! the mirror image: a transposed temporal scatter followed by spatial
//! propagation onto skip coordinates. The autoencoder chains four of each
//! around a latent bottleneck; a separate one-layer extractor attaches local
//! geometric descriptors to anchor points and is frozen after pretraining.

mod model;
mod ops;

pub use model::{
    action_head_forward, action_head_init_params, action_head_param_shapes, arch_summary,
    extractor_forward, extractor_forward_values, extractor_init_params, extractor_param_shapes,
    miniature_network, pstae_forward, pstae_forward_values, pstae_geometry, ActionHeadConfig,
    PstaeGeometry, PstaeNetwork,
};
pub use ops::{
    plan_pstop, plan_psttrans, pstop_forward, psttrans_forward, PstOpGeometry, PstOpWeights,
    PstTransGeometry, PstTransWeights,
};

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_uniform, ParamSet, Tensor};
use crate::tube::TubeError;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tube(#[from] TubeError),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// How the first farthest-point-sampling index is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpsSeed {
    /// Index 0 of the frame (input order).
    #[default]
    InputOrder,
    /// The lexicographically smallest coordinate; invariant under point
    /// permutation.
    LexMin,
}

/// Hyperparameters of one downsampling operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PstLayerConfig {
    pub name: String,
    /// Ball-query radius in meters.
    pub spatial_radius: f64,
    /// Spatial subsampling divisor (anchors = points / stride).
    pub spatial_stride: usize,
    /// Output channels of the spatial MLP.
    pub spatial_channels: usize,
    /// Temporal window radius in frames.
    pub temporal_radius: usize,
    pub temporal_stride: usize,
    /// Output channels of the temporal MLP.
    pub temporal_channels: usize,
    pub pad: (usize, usize),
    /// Max neighbors per ball query.
    pub k: usize,
}

/// Hyperparameters of one transposed (upsampling) operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransLayerConfig {
    pub name: String,
    /// Output channels of the spatial MLP applied after interpolation.
    pub spatial_channels: usize,
    pub temporal_radius: usize,
    pub temporal_stride: usize,
    /// Output channels of the per-offset temporal MLPs.
    pub temporal_channels: usize,
    /// May be negative: trims the scattered output symmetrically.
    pub pad: (i64, i64),
}

/// The shallow feature extractor: one spatial aggregation per frame, no
/// temporal mixing (radius 0, stride 1).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    /// Local descriptor dimension.
    pub f: usize,
    /// Ball-query base radius in meters.
    pub base_radius: f64,
    pub k: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { f: 8, base_radius: 0.5, k: 9 }
    }
}

pub const DESCRIPTOR_DIMS: [usize; 4] = [4, 8, 16, 32];

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if !DESCRIPTOR_DIMS.contains(&self.f) {
            return Err(NetError::Config(format!(
                "descriptor dimension f must be one of {DESCRIPTOR_DIMS:?}, got {}",
                self.f
            )));
        }
        if self.base_radius <= 0.0 || self.k == 0 {
            return Err(NetError::Config("base_radius must be > 0 and k >= 1".into()));
        }
        Ok(())
    }

    pub fn layer(&self) -> PstLayerConfig {
        PstLayerConfig {
            name: "extractor".into(),
            spatial_radius: self.base_radius,
            spatial_stride: 2,
            spatial_channels: 4,
            temporal_radius: 0,
            temporal_stride: 1,
            temporal_channels: self.f,
            pad: (0, 0),
            k: self.k,
        }
    }
}

/// One frame of coordinates with a feature row per point.
#[derive(Clone, Debug)]
pub struct FeaturedFrame {
    pub coords: Vec<[f64; 3]>,
    /// `[points, channels]`
    pub features: Tensor,
}

/// A clip after feature extraction: equal point count and channel width on
/// every frame of a stage.
#[derive(Clone, Debug)]
pub struct FeaturedClip {
    pub frames: Vec<FeaturedFrame>,
}

impl FeaturedClip {
    pub fn temporal_len(&self) -> usize {
        self.frames.len()
    }

    pub fn spatial_len(&self) -> usize {
        self.frames.first().map(|f| f.coords.len()).unwrap_or(0)
    }

    pub fn channels(&self) -> usize {
        self.frames.first().map(|f| f.features.shape()[1]).unwrap_or(0)
    }

    pub fn coords(&self) -> Vec<Vec<[f64; 3]>> {
        self.frames.iter().map(|f| f.coords.clone()).collect()
    }
}

/// Parameter names of a downsampling layer, in insertion order.
pub(crate) fn pstop_param_shapes(cfg: &PstLayerConfig, in_channels: usize) -> Vec<(String, Vec<usize>)> {
    let spatial_in = 3 + in_channels;
    let window = 2 * cfg.temporal_radius + 1;
    vec![
        (format!("{}.spatial.w", cfg.name), vec![spatial_in, cfg.spatial_channels]),
        (format!("{}.spatial.b", cfg.name), vec![cfg.spatial_channels]),
        (format!("{}.temporal.w", cfg.name), vec![window * cfg.spatial_channels, cfg.temporal_channels]),
        (format!("{}.temporal.b", cfg.name), vec![cfg.temporal_channels]),
    ]
}

/// Parameter names of a transposed layer: one temporal matrix per window
/// offset, a shared temporal bias, then the spatial projection.
pub(crate) fn psttrans_param_shapes(cfg: &TransLayerConfig, in_channels: usize) -> Vec<(String, Vec<usize>)> {
    let mut shapes = Vec::new();
    for delta in 0..=2 * cfg.temporal_radius {
        shapes.push((format!("{}.temporal.w{delta}", cfg.name), vec![in_channels, cfg.temporal_channels]));
    }
    shapes.push((format!("{}.temporal.b", cfg.name), vec![cfg.temporal_channels]));
    shapes.push((format!("{}.spatial.w", cfg.name), vec![cfg.temporal_channels, cfg.spatial_channels]));
    shapes.push((format!("{}.spatial.b", cfg.name), vec![cfg.spatial_channels]));
    shapes
}

pub(crate) fn init_shapes(
    params: &mut ParamSet,
    shapes: &[(String, Vec<usize>)],
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    for (name, shape) in shapes {
        let t = if shape.len() == 2 {
            glorot_uniform(rng, shape[0], shape[1], shape.clone())
        } else {
            // small positive bias keeps max-pooled relu units alive early on
            let n: usize = shape.iter().product();
            Tensor::new(shape.clone(), vec![0.05; n])?
        };
        params.insert(name, t, false)?;
    }
    Ok(())
}

/// Count of scalar parameters grouped by the layer prefix of each name.
pub fn param_counts_by_layer(params: &ParamSet) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    for p in params.iter() {
        let layer = p.name.split('.').next().unwrap_or(&p.name).to_string();
        match out.iter_mut().find(|(name, _)| *name == layer) {
            Some((_, n)) => *n += p.value.numel(),
            None => out.push((layer, p.value.numel())),
        }
    }
    out
}
