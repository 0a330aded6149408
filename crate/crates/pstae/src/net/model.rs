//! Network assembly: the shallow extractor, the encoder/decoder stack with
//! coordinate skip connections, and the action-recognition head used to
//! pretrain the extractor.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{Graph, NodeId, ParamSet};
use crate::net::ops::{
    plan_pstop, plan_psttrans, pstop_forward, psttrans_forward, PstOpGeometry, PstOpWeights,
    PstTransGeometry, PstTransWeights,
};
use crate::net::{
    init_shapes, pstop_param_shapes, psttrans_param_shapes, ExtractorConfig, FeaturedClip,
    FeaturedFrame, FpsSeed, NetError, PstLayerConfig, Result, TransLayerConfig,
};

/// Encoder and decoder stacks in application order. Decoder `i` is paired
/// with encoder `n-1-i` and receives that encoder's input coordinates over
/// the skip connection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PstaeNetwork {
    pub f: usize,
    pub encoders: Vec<PstLayerConfig>,
    pub decoders: Vec<TransLayerConfig>,
}

impl PstaeNetwork {
    /// The default stack. Channel widths are fixed; only the terminal decoder
    /// width follows `f` so the output is comparable with the extractor
    /// descriptors.
    pub fn standard(f: usize, base_radius: f64, k: usize) -> Result<Self> {
        ExtractorConfig { f, base_radius, k }.validate()?;
        let r0 = base_radius;
        let enc = |name: &str, r_s: f64, s_s, c_s, r_t, s_t, c_t, pad| PstLayerConfig {
            name: name.into(),
            spatial_radius: r_s,
            spatial_stride: s_s,
            spatial_channels: c_s,
            temporal_radius: r_t,
            temporal_stride: s_t,
            temporal_channels: c_t,
            pad,
            k,
        };
        let dec = |name: &str, c_s, r_t, s_t, c_t, pad| TransLayerConfig {
            name: name.into(),
            spatial_channels: c_s,
            temporal_radius: r_t,
            temporal_stride: s_t,
            temporal_channels: c_t,
            pad,
        };
        Ok(Self {
            f,
            encoders: vec![
                enc("encoder2", 2.0 * r0, 2, 45, 1, 2, 64, (0, 0)),
                enc("encoder3", 2.0 * r0, 1, 128, 1, 1, 256, (1, 1)),
                enc("encoder4", 4.0 * r0, 2, 384, 1, 2, 512, (0, 0)),
                enc("encoder5", 8.0 * r0, 2, 768, 1, 1, 1024, (1, 1)),
            ],
            decoders: vec![
                dec("decoder5", 512, 1, 1, 768, (-1, -1)),
                dec("decoder4", 256, 1, 2, 384, (0, 0)),
                dec("decoder3", 64, 1, 1, 128, (-1, -1)),
                dec("decoder2", f, 1, 2, 45, (0, 0)),
            ],
        })
    }

    pub fn custom(f: usize, encoders: Vec<PstLayerConfig>, decoders: Vec<TransLayerConfig>) -> Result<Self> {
        if encoders.len() != decoders.len() || encoders.is_empty() {
            return Err(NetError::Config(
                "encoder and decoder stacks must pair up and be nonempty".into(),
            ));
        }
        Ok(Self { f, encoders, decoders })
    }

    /// Parameter shapes in insertion order, following the channel chain
    /// `f -> c_s -> c_t -> ...` through encoders then decoders.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::new();
        let mut channels = self.f;
        for cfg in &self.encoders {
            shapes.extend(pstop_param_shapes(cfg, channels));
            channels = cfg.temporal_channels;
        }
        for cfg in &self.decoders {
            shapes.extend(psttrans_param_shapes(cfg, channels));
            channels = cfg.spatial_channels;
        }
        shapes
    }

    pub fn init_params(&self, rng: &mut ChaCha20Rng) -> Result<ParamSet> {
        let mut params = ParamSet::new();
        init_shapes(&mut params, &self.param_shapes(), rng)?;
        Ok(params)
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Channel width of the final decoder output.
    pub fn output_channels(&self) -> usize {
        self.decoders.last().map(|d| d.spatial_channels).unwrap_or(0)
    }
}

/// All geometry of one clip through the full stack, reusable across steps.
#[derive(Clone, Debug)]
pub struct PstaeGeometry {
    pub encoder_geoms: Vec<PstOpGeometry>,
    pub decoder_geoms: Vec<PstTransGeometry>,
}

impl PstaeGeometry {
    /// (temporal length, spatial length) after each encoder stage.
    pub fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        self.encoder_geoms
            .iter()
            .map(|g| (g.plan.output_length(), g.output_spatial_len()))
            .collect()
    }

    pub fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        self.decoder_geoms
            .iter()
            .map(|g| (g.plan.output_length, g.skip_coords.first().map(|c| c.len()).unwrap_or(0)))
            .collect()
    }
}

/// Plan sampling, neighborhoods and skips for one clip. `input_coords` are
/// the extractor-output coordinates the autoencoder consumes.
pub fn pstae_geometry(
    input_coords: &[Vec<[f64; 3]>],
    net: &PstaeNetwork,
    seed: FpsSeed,
) -> Result<PstaeGeometry> {
    let mut encoder_inputs: Vec<Vec<Vec<[f64; 3]>>> = Vec::with_capacity(net.encoders.len());
    let mut current: Vec<Vec<[f64; 3]>> = input_coords.to_vec();
    let mut encoder_geoms = Vec::with_capacity(net.encoders.len());
    for cfg in &net.encoders {
        encoder_inputs.push(current.clone());
        let geom = plan_pstop(&current, cfg, seed)?;
        current = geom.anchor_coords.clone();
        encoder_geoms.push(geom);
    }
    let mut decoder_geoms = Vec::with_capacity(net.decoders.len());
    for (i, cfg) in net.decoders.iter().enumerate() {
        let skip = &encoder_inputs[net.encoders.len() - 1 - i];
        let geom = plan_psttrans(&current, skip, cfg)?;
        current = geom.skip_coords.clone();
        decoder_geoms.push(geom);
    }
    Ok(PstaeGeometry { encoder_geoms, decoder_geoms })
}

/// Full autoencoder forward. Input features must match the coordinates the
/// geometry was planned on; returns the reconstructed descriptor node per
/// frame.
pub fn pstae_forward(
    g: &mut Graph,
    params: &ParamSet,
    net: &PstaeNetwork,
    geom: &PstaeGeometry,
    input_coords: &[Vec<[f64; 3]>],
    input_features: &[NodeId],
) -> Result<Vec<NodeId>> {
    if input_features.len() != input_coords.len() {
        return Err(NetError::Config(format!(
            "{} feature frames vs {} coordinate frames",
            input_features.len(),
            input_coords.len()
        )));
    }
    let mut features = input_features.to_vec();
    let mut coords: Vec<Vec<[f64; 3]>> = input_coords.to_vec();
    for (cfg, layer_geom) in net.encoders.iter().zip(&geom.encoder_geoms) {
        let w = PstOpWeights::bind(g, params, &cfg.name)?;
        features = pstop_forward(g, &w, cfg, layer_geom, &coords, Some(&features))?;
        coords = layer_geom.anchor_coords.clone();
    }
    let last = net.decoders.len() - 1;
    for (i, (cfg, layer_geom)) in net.decoders.iter().zip(&geom.decoder_geoms).enumerate() {
        let w = PstTransWeights::bind(g, params, &cfg.name, 2 * cfg.temporal_radius + 1)?;
        features = psttrans_forward(g, &w, cfg, layer_geom, &features, i == last)?;
    }
    Ok(features)
}

/// Value-level autoencoder pass for scoring: builds a private graph and
/// returns the reconstruction as a clip.
pub fn pstae_forward_values(
    params: &ParamSet,
    net: &PstaeNetwork,
    geom: &PstaeGeometry,
    input: &FeaturedClip,
) -> Result<FeaturedClip> {
    let mut g = Graph::new();
    let coords = input.coords();
    let features: Vec<NodeId> = input.frames.iter().map(|f| g.constant(&f.features)).collect();
    let out = pstae_forward(&mut g, params, net, geom, &coords, &features)?;
    let frames = out
        .iter()
        .zip(geom.decoder_geoms.last().map(|d| &d.skip_coords).unwrap_or(&coords))
        .map(|(&id, c)| FeaturedFrame { coords: c.clone(), features: g.tensor(id) })
        .collect();
    Ok(FeaturedClip { frames })
}

pub fn extractor_param_shapes(cfg: &ExtractorConfig) -> Vec<(String, Vec<usize>)> {
    pstop_param_shapes(&cfg.layer(), 0)
}

pub fn extractor_init_params(cfg: &ExtractorConfig, rng: &mut ChaCha20Rng) -> Result<ParamSet> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    init_shapes(&mut params, &extractor_param_shapes(cfg), rng)?;
    Ok(params)
}

/// One spatial aggregation per frame; no temporal mixing or downsampling.
pub fn extractor_forward(
    g: &mut Graph,
    params: &ParamSet,
    cfg: &ExtractorConfig,
    geom: &PstOpGeometry,
    coords: &[Vec<[f64; 3]>],
) -> Result<Vec<NodeId>> {
    let layer = cfg.layer();
    let w = PstOpWeights::bind(g, params, &layer.name)?;
    pstop_forward(g, &w, &layer, geom, coords, None)
}

/// Extract descriptors for a whole clip at value level.
pub fn extractor_forward_values(
    params: &ParamSet,
    cfg: &ExtractorConfig,
    coords: &[Vec<[f64; 3]>],
    seed: FpsSeed,
) -> Result<FeaturedClip> {
    let geom = plan_pstop(coords, &cfg.layer(), seed)?;
    let mut g = Graph::new();
    let out = extractor_forward(&mut g, params, cfg, &geom, coords)?;
    let frames = out
        .iter()
        .zip(&geom.anchor_coords)
        .map(|(&id, c)| FeaturedFrame { coords: c.clone(), features: g.tensor(id) })
        .collect();
    Ok(FeaturedClip { frames })
}

/// Classifier head for extractor pretraining: global max-pool over every
/// anchor of every frame, then a two-layer MLP.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ActionHeadConfig {
    pub hidden: usize,
    pub num_classes: usize,
}

impl Default for ActionHeadConfig {
    fn default() -> Self {
        Self { hidden: 64, num_classes: 4 }
    }
}

pub fn action_head_param_shapes(f: usize, cfg: &ActionHeadConfig) -> Vec<(String, Vec<usize>)> {
    vec![
        ("action.w1".into(), vec![f, cfg.hidden]),
        ("action.b1".into(), vec![cfg.hidden]),
        ("action.w2".into(), vec![cfg.hidden, cfg.num_classes]),
        ("action.b2".into(), vec![cfg.num_classes]),
    ]
}

pub fn action_head_init_params(
    f: usize,
    cfg: &ActionHeadConfig,
    rng: &mut ChaCha20Rng,
) -> Result<ParamSet> {
    if cfg.num_classes == 0 {
        return Err(NetError::Config("action head needs at least one class".into()));
    }
    let mut params = ParamSet::new();
    init_shapes(&mut params, &action_head_param_shapes(f, cfg), rng)?;
    Ok(params)
}

/// `[1, num_classes]` logits for one clip of per-frame descriptor nodes.
pub fn action_head_forward(
    g: &mut Graph,
    params: &ParamSet,
    features: &[NodeId],
) -> Result<NodeId> {
    let all = if features.len() == 1 { features[0] } else { g.concat(0, features)? };
    let pooled = g.max_axis(all, 0)?;
    let f = g.shape(pooled)[0];
    let pooled = g.reshape(pooled, vec![1, f])?;
    let w1 = g.param(params, "action.w1")?;
    let b1 = g.param(params, "action.b1")?;
    let w2 = g.param(params, "action.w2")?;
    let b2 = g.param(params, "action.b2")?;
    let h = g.matmul(pooled, w1)?;
    let h = g.add_bias(h, b1)?;
    let h = g.relu(h);
    let h = g.matmul(h, w2)?;
    let logits = g.add_bias(h, b2)?;
    Ok(logits)
}

/// JSON architecture dump: per-layer hyperparameters and parameter counts.
pub fn arch_summary(extractor: &ExtractorConfig, net: &PstaeNetwork) -> serde_json::Value {
    let count = |shapes: &[(String, Vec<usize>)]| -> usize {
        shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    };
    let mut layers = Vec::new();
    let ext_layer = extractor.layer();
    let ext_params = count(&extractor_param_shapes(extractor));
    layers.push(json!({
        "name": "extractor",
        "kind": "pstop",
        "spatial_radius": ext_layer.spatial_radius,
        "spatial_stride": ext_layer.spatial_stride,
        "spatial_channels": ext_layer.spatial_channels,
        "temporal_radius": ext_layer.temporal_radius,
        "temporal_stride": ext_layer.temporal_stride,
        "temporal_channels": ext_layer.temporal_channels,
        "pad": [ext_layer.pad.0, ext_layer.pad.1],
        "params": ext_params,
    }));
    let mut channels = net.f;
    for cfg in &net.encoders {
        let shapes = pstop_param_shapes(cfg, channels);
        layers.push(json!({
            "name": cfg.name,
            "kind": "pstop",
            "in_channels": channels,
            "spatial_radius": cfg.spatial_radius,
            "spatial_stride": cfg.spatial_stride,
            "spatial_channels": cfg.spatial_channels,
            "temporal_radius": cfg.temporal_radius,
            "temporal_stride": cfg.temporal_stride,
            "temporal_channels": cfg.temporal_channels,
            "pad": [cfg.pad.0, cfg.pad.1],
            "params": count(&shapes),
        }));
        channels = cfg.temporal_channels;
    }
    for cfg in &net.decoders {
        let shapes = psttrans_param_shapes(cfg, channels);
        layers.push(json!({
            "name": cfg.name,
            "kind": "psttransop",
            "in_channels": channels,
            "spatial_channels": cfg.spatial_channels,
            "temporal_radius": cfg.temporal_radius,
            "temporal_stride": cfg.temporal_stride,
            "temporal_channels": cfg.temporal_channels,
            "pad": [cfg.pad.0, cfg.pad.1],
            "params": count(&shapes),
        }));
        channels = cfg.spatial_channels;
    }
    let total = ext_params + net.param_count();
    json!({
        "f": net.f,
        "layers": layers,
        "autoencoder_params": net.param_count(),
        "extractor_params": ext_params,
        "total_params": total,
    })
}

/// A tiny but structurally complete network (extractor + 2 encoders +
/// 2 decoders) that runs on a 2-frame, 8-point clip. Used by gradient
/// checks.
pub fn miniature_network(f: usize) -> (ExtractorConfig, PstaeNetwork) {
    let extractor = ExtractorConfig { f, base_radius: 0.9, k: 3 };
    let enc = |name: &str, s_s, c_s, c_t| PstLayerConfig {
        name: name.into(),
        spatial_radius: 1.4,
        spatial_stride: s_s,
        spatial_channels: c_s,
        temporal_radius: 1,
        temporal_stride: 1,
        temporal_channels: c_t,
        pad: (1, 1),
        k: 3,
    };
    let dec = |name: &str, c_s, c_t| TransLayerConfig {
        name: name.into(),
        spatial_channels: c_s,
        temporal_radius: 1,
        temporal_stride: 1,
        temporal_channels: c_t,
        pad: (-1, -1),
    };
    let net = PstaeNetwork {
        f,
        encoders: vec![enc("enc_a", 2, 5, 6), enc("enc_b", 1, 7, 10)],
        decoders: vec![dec("dec_b", 6, 7), dec("dec_a", f, 5)],
    };
    (extractor, net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};

    fn random_coords(rng: &mut ChaCha20Rng, frames: usize, points: usize) -> Vec<Vec<[f64; 3]>> {
        (0..frames)
            .map(|_| {
                (0..points)
                    .map(|_| {
                        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn standard_network_parameter_count() {
        let net = PstaeNetwork::standard(8, 0.5, 9).unwrap();
        let ext = ExtractorConfig::default();
        let ext_count: usize = extractor_param_shapes(&ext)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(ext_count, 56);
        // hand-derived from the layer table with one MLP per stage
        assert_eq!(net.param_count() + ext_count, 7_121_649);
    }

    #[test]
    fn decoder_terminal_width_follows_f() {
        for f in [4usize, 8, 16, 32] {
            let net = PstaeNetwork::standard(f, 0.5, 9).unwrap();
            assert_eq!(net.output_channels(), f);
        }
        assert!(PstaeNetwork::standard(5, 0.5, 9).is_err());
    }

    #[test]
    fn extractor_keeps_temporal_length_and_halves_points() {
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let coords = random_coords(&mut rng, 3, 32);
        let cfg = ExtractorConfig { f: 8, base_radius: 0.9, k: 5 };
        let params = extractor_init_params(&cfg, &mut rng).unwrap();
        let clip = extractor_forward_values(&params, &cfg, &coords, FpsSeed::InputOrder).unwrap();
        assert_eq!(clip.temporal_len(), 3);
        assert_eq!(clip.spatial_len(), 16);
        assert_eq!(clip.channels(), 8);
    }

    #[test]
    fn extractor_frames_are_processed_independently() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let coords = random_coords(&mut rng, 4, 16);
        let cfg = ExtractorConfig { f: 4, base_radius: 0.9, k: 4 };
        let params = extractor_init_params(&cfg, &mut rng).unwrap();
        let clip = extractor_forward_values(&params, &cfg, &coords, FpsSeed::InputOrder).unwrap();
        // permuting whole frames permutes outputs identically
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<Vec<[f64; 3]>> = perm.iter().map(|&i| coords[i].clone()).collect();
        let clip_p = extractor_forward_values(&params, &cfg, &permuted, FpsSeed::InputOrder).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(clip_p.frames[dst].features.data(), clip.frames[src].features.data());
        }
    }

    #[test]
    fn extractor_is_point_permutation_invariant_with_lexmin_seed() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let coords = random_coords(&mut rng, 2, 20);
        let cfg = ExtractorConfig { f: 4, base_radius: 0.8, k: 4 };
        let params = extractor_init_params(&cfg, &mut rng).unwrap();
        let base = extractor_forward_values(&params, &cfg, &coords, FpsSeed::LexMin).unwrap();
        let mut shuffled = coords.clone();
        for f in shuffled.iter_mut() {
            f.reverse();
            f.swap(0, 5);
        }
        let out = extractor_forward_values(&params, &cfg, &shuffled, FpsSeed::LexMin).unwrap();
        for (a, b) in base.frames.iter().zip(&out.frames) {
            assert_eq!(a.coords, b.coords);
            assert_eq!(a.features.data(), b.features.data());
        }
    }

    #[test]
    fn miniature_autoencoder_round_trips_shapes() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let coords = random_coords(&mut rng, 2, 8);
        let (ext_cfg, net) = miniature_network(4);
        let ext_params = extractor_init_params(&ext_cfg, &mut rng).unwrap();
        let extracted =
            extractor_forward_values(&ext_params, &ext_cfg, &coords, FpsSeed::InputOrder).unwrap();
        assert_eq!(extracted.spatial_len(), 4);

        let geom = pstae_geometry(&extracted.coords(), &net, FpsSeed::InputOrder).unwrap();
        assert_eq!(geom.encoder_shapes(), vec![(2, 2), (2, 2)]);
        assert_eq!(geom.decoder_shapes(), vec![(2, 2), (2, 4)]);

        let params = net.init_params(&mut rng).unwrap();
        let out = pstae_forward_values(&params, &net, &geom, &extracted).unwrap();
        assert_eq!(out.temporal_len(), 2);
        assert_eq!(out.spatial_len(), 4);
        assert_eq!(out.channels(), 4);
        // reconstruction coordinates coincide with the extractor anchors
        for (a, b) in out.frames.iter().zip(&extracted.frames) {
            assert_eq!(a.coords, b.coords);
        }
    }

    #[test]
    fn standard_network_shape_chain_reduced_scale() {
        let mut rng = ChaCha20Rng::seed_from_u64(27);
        let coords = random_coords(&mut rng, 15, 64);
        let ext_cfg = ExtractorConfig { f: 8, base_radius: 0.5, k: 9 };
        let ext_params = extractor_init_params(&ext_cfg, &mut rng).unwrap();
        let extracted =
            extractor_forward_values(&ext_params, &ext_cfg, &coords, FpsSeed::InputOrder).unwrap();
        assert_eq!((extracted.temporal_len(), extracted.spatial_len()), (15, 32));

        let net = PstaeNetwork::standard(8, 0.5, 9).unwrap();
        let geom = pstae_geometry(&extracted.coords(), &net, FpsSeed::InputOrder).unwrap();
        assert_eq!(geom.encoder_shapes(), vec![(7, 16), (7, 16), (3, 8), (3, 4)]);
        assert_eq!(geom.decoder_shapes(), vec![(3, 8), (7, 16), (7, 16), (15, 32)]);
    }

    #[test]
    fn action_head_logit_shape_and_pool_invariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let cfg = ActionHeadConfig { hidden: 16, num_classes: 5 };
        let params = action_head_init_params(8, &cfg, &mut rng).unwrap();
        let frames: Vec<Tensor> = (0..3)
            .map(|_| {
                let data: Vec<f64> = (0..6 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::new(vec![6, 8], data).unwrap()
            })
            .collect();
        let mut g = Graph::new();
        let ids: Vec<_> = frames.iter().map(|t| g.constant(t)).collect();
        let logits = action_head_forward(&mut g, &params, &ids).unwrap();
        assert_eq!(g.shape(logits), &[1, 5]);
        let vals = g.value(logits).to_vec();

        // permuting anchor rows leaves the pooled logits unchanged
        let mut g2 = Graph::new();
        let ids2: Vec<_> = frames
            .iter()
            .map(|t| {
                let rows = t.shape()[0];
                let mut data = Vec::new();
                for r in (0..rows).rev() {
                    data.extend_from_slice(&t.data()[r * 8..(r + 1) * 8]);
                }
                let rev = Tensor::new(vec![rows, 8], data).unwrap();
                g2.constant(&rev)
            })
            .collect();
        let logits2 = action_head_forward(&mut g2, &params, &ids2).unwrap();
        assert_eq!(g2.value(logits2), vals.as_slice());
    }
}
