//! Seeded training loops for the autoencoder and the extractor pretraining
//! task. Batch members run in parallel when asked to, but gradients are
//! always reduced in batch order, so results do not depend on the worker
//! count.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_step, Graph, NodeId, ParamSet, SgdConfig, Tensor};
use crate::net::{
    action_head_forward, action_head_init_params, extractor_forward, extractor_init_params,
    plan_pstop, pstae_forward, pstae_geometry, ActionHeadConfig, ExtractorConfig, FpsSeed,
    PstOpGeometry, PstaeGeometry, PstaeNetwork,
};
use crate::pipeline::loss::reconstruction_loss_graph;
use crate::pipeline::{PipelineError, Result};
use crate::pointcloud::Clip;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_train_accuracy: Option<f64>,
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))
}

/// Reduce per-member gradients into the parameter set in batch order and take
/// one SGD step with the batch-mean gradient.
fn apply_batch(
    params: &mut ParamSet,
    members: Vec<Vec<(String, Vec<f64>)>>,
    sgd: &SgdConfig,
    epoch: usize,
) -> Result<()> {
    let batch_len = members.len().max(1);
    for member in members {
        for (name, grad) in member {
            params.accumulate_grad(&name, &grad)?;
        }
    }
    params.scale_grads(1.0 / batch_len as f64);
    sgd_step(params, sgd, epoch)?;
    Ok(())
}

struct AeItem {
    coords: Vec<Vec<[f64; 3]>>,
    targets: Vec<Tensor>,
    geom: PstaeGeometry,
}

/// Train the autoencoder on normal clips against frozen extractor
/// descriptors. Descriptors and geometry depend only on coordinates, so both
/// are computed once per clip up front.
pub fn train_pstae(
    clips: &[Clip],
    extractor_params: &ParamSet,
    extractor_cfg: &ExtractorConfig,
    net: &PstaeNetwork,
    sgd: &SgdConfig,
    fps_seed: FpsSeed,
    seed: u64,
    workers: usize,
) -> Result<(ParamSet, TrainReport)> {
    if clips.is_empty() {
        return Err(PipelineError::Usage("empty training set".into()));
    }
    sgd.validate()?;
    for (i, clip) in clips.iter().enumerate() {
        if clip.frames.iter().any(|f| f.is_empty()) {
            return Err(PipelineError::Usage(format!(
                "training clip {i} contains an empty frame; filter clips first"
            )));
        }
    }
    let pool = worker_pool(workers)?;
    let items: Vec<AeItem> = pool.install(|| {
        clips
            .par_iter()
            .map(|clip| -> Result<AeItem> {
                let coords: Vec<Vec<[f64; 3]>> =
                    clip.frames.iter().map(|f| f.points.clone()).collect();
                let extracted =
                    crate::net::extractor_forward_values(extractor_params, extractor_cfg, &coords, fps_seed)?;
                let anchor_coords = extracted.coords();
                let geom = pstae_geometry(&anchor_coords, net, fps_seed)?;
                let targets: Vec<Tensor> =
                    extracted.frames.iter().map(|f| f.features.clone()).collect();
                Ok(AeItem { coords: anchor_coords, targets, geom })
            })
            .collect::<Result<Vec<AeItem>>>()
    })?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = net.init_params(&mut rng)?;
    let mut report = TrainReport::default();

    for epoch in 1..=sgd.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(sgd.batch_size) {
            let step: Vec<Result<(f64, Vec<(String, Vec<f64>)>)>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let item = &items[i];
                        let mut g = Graph::new();
                        let feats: Vec<NodeId> =
                            item.targets.iter().map(|t| g.constant(t)).collect();
                        let out =
                            pstae_forward(&mut g, &params, net, &item.geom, &item.coords, &feats)?;
                        let loss = reconstruction_loss_graph(&mut g, &item.targets, &out)?;
                        let lv = g.value(loss)[0];
                        if !lv.is_finite() {
                            return Err(PipelineError::Usage(format!(
                                "non-finite loss at epoch {epoch}"
                            )));
                        }
                        g.backward(loss)?;
                        Ok((lv, g.param_grads()))
                    })
                    .collect()
            });
            let mut members = Vec::with_capacity(batch.len());
            for r in step {
                let (lv, grads) = r?;
                loss_sum += lv;
                members.push(grads);
            }
            apply_batch(&mut params, members, sgd, epoch)?;
        }
        report.epochs.push(EpochReport {
            epoch,
            mean_loss: loss_sum / items.len() as f64,
            learning_rate: crate::autodiff::effective_lr(sgd, epoch),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((params, report))
}

pub struct PretrainOutcome {
    /// Extractor weights only, marked frozen.
    pub extractor: ParamSet,
    pub report: TrainReport,
}

struct ActionItem {
    coords: Vec<Vec<[f64; 3]>>,
    geom: PstOpGeometry,
    label: usize,
}

/// Pretrain the extractor as the input layer of an action classifier, then
/// return the frozen extractor weights (the classification head is
/// discarded).
pub fn pretrain_extractor(
    action_clips: &[(Vec<crate::pointcloud::PointFrame>, usize)],
    extractor_cfg: &ExtractorConfig,
    head: &ActionHeadConfig,
    points_per_frame: usize,
    sgd: &SgdConfig,
    fps_seed: FpsSeed,
    seed: u64,
    workers: usize,
) -> Result<PretrainOutcome> {
    sgd.validate()?;
    let classes: std::collections::BTreeSet<usize> =
        action_clips.iter().map(|(_, l)| *l).collect();
    if classes.len() < 2 {
        return Err(PipelineError::Usage(format!(
            "pretraining needs at least 2 classes, got {}",
            classes.len()
        )));
    }
    if classes.iter().any(|&c| c >= head.num_classes) {
        return Err(PipelineError::Config("label outside the configured class count".into()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let layer = extractor_cfg.layer();
    let mut items = Vec::with_capacity(action_clips.len());
    for (frames, label) in action_clips {
        let mut coords = Vec::with_capacity(frames.len());
        for f in frames {
            let r = crate::pointcloud::resample_frame(f, points_per_frame, &mut rng)?;
            if r.is_empty() {
                return Err(PipelineError::Usage("empty frame in action clip".into()));
            }
            coords.push(r.points);
        }
        let geom = plan_pstop(&coords, &layer, fps_seed)?;
        items.push(ActionItem { coords, geom, label: *label });
    }

    let mut params = extractor_init_params(extractor_cfg, &mut rng)?;
    params.extend(action_head_init_params(extractor_cfg.f, head, &mut rng)?)?;

    let pool = worker_pool(workers)?;
    let mut report = TrainReport::default();
    for epoch in 1..=sgd.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(sgd.batch_size) {
            let step: Vec<Result<(f64, Vec<(String, Vec<f64>)>)>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let item = &items[i];
                        let mut g = Graph::new();
                        let feats =
                            extractor_forward(&mut g, &params, extractor_cfg, &item.geom, &item.coords)?;
                        let logits = action_head_forward(&mut g, &params, &feats)?;
                        let loss = g.cross_entropy(logits, Arc::new(vec![item.label]))?;
                        let lv = g.value(loss)[0];
                        if !lv.is_finite() {
                            return Err(PipelineError::Usage(format!(
                                "non-finite loss at epoch {epoch}"
                            )));
                        }
                        g.backward(loss)?;
                        Ok((lv, g.param_grads()))
                    })
                    .collect()
            });
            let mut members = Vec::with_capacity(batch.len());
            for r in step {
                let (lv, grads) = r?;
                loss_sum += lv;
                members.push(grads);
            }
            apply_batch(&mut params, members, sgd, epoch)?;
        }
        report.epochs.push(EpochReport {
            epoch,
            mean_loss: loss_sum / items.len() as f64,
            learning_rate: crate::autodiff::effective_lr(sgd, epoch),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }

    // train accuracy with the final weights
    let mut correct = 0usize;
    for item in &items {
        let mut g = Graph::new();
        let feats = extractor_forward(&mut g, &params, extractor_cfg, &item.geom, &item.coords)?;
        let logits = action_head_forward(&mut g, &params, &feats)?;
        let v = g.value(logits);
        let pred = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if pred == item.label {
            correct += 1;
        }
    }
    report.final_train_accuracy = Some(correct as f64 / items.len() as f64);

    let mut extractor = ParamSet::new();
    for p in params.iter() {
        if p.name.starts_with("extractor.") {
            extractor.insert(&p.name, p.value.clone(), true)?;
        }
    }
    Ok(PretrainOutcome { extractor, report })
}
