//! Anomaly scoring strategies behind a common trait, registered by name and
//! selected at runtime.
//!
//! Two strategies ship built in: `pstae` (descriptor reconstruction error
//! through the autoencoder) and `bgsub` (foreground presence, the
//! background-subtraction baseline). Downstream code — the CLI `--method`
//! flag and the evaluation harness's baseline column — goes through the
//! registry so strategies stay interchangeable.

use std::collections::BTreeMap;

use crate::autodiff::ParamSet;
use crate::bgsub::{bgsub_baseline_score, classify_foreground, BgsubConfig};
use crate::net::{ExtractorConfig, PstaeNetwork};
use crate::pipeline::{
    score_video, PipelineConfig, PipelineError, Result, ScoreContext, ScoreSeries,
};
use crate::pointcloud::PointFrame;

/// A per-video anomaly scorer.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &'static str;

    fn score(
        &self,
        video_id: &str,
        frames: &[PointFrame],
        labels: &[u8],
        video_seed: u64,
    ) -> Result<ScoreSeries>;
}

/// Everything a scorer may need; model-free strategies ignore the weights.
#[derive(Clone, Debug)]
pub struct ScorerAssets {
    pub bgsub: BgsubConfig,
    pub pipeline: PipelineConfig,
    pub extractor_cfg: ExtractorConfig,
    pub net: PstaeNetwork,
    pub extractor_params: Option<ParamSet>,
    pub net_params: Option<ParamSet>,
}

type ScorerBuilder = Box<dyn Fn(&ScorerAssets) -> Result<Box<dyn Scorer>> + Send + Sync>;

/// Name-keyed scorer factory.
pub struct ScorerRegistry {
    builders: BTreeMap<&'static str, ScorerBuilder>,
}

impl Default for ScorerRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ScorerRegistry {
    pub fn empty() -> Self {
        Self { builders: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("pstae", |assets| {
            let extractor_params = assets.extractor_params.clone().ok_or_else(|| {
                PipelineError::Usage("pstae scorer needs extractor weights".into())
            })?;
            let net_params = assets
                .net_params
                .clone()
                .ok_or_else(|| PipelineError::Usage("pstae scorer needs model weights".into()))?;
            Ok(Box::new(PstaeScorer {
                bgsub: assets.bgsub,
                pipeline: assets.pipeline,
                extractor_cfg: assets.extractor_cfg.clone(),
                net: assets.net.clone(),
                extractor_params,
                net_params,
            }))
        });
        r.register("bgsub", |assets| Ok(Box::new(BgsubScorer { cfg: assets.bgsub })));
        r
    }

    pub fn register(
        &mut self,
        name: &'static str,
        builder: impl Fn(&ScorerAssets) -> Result<Box<dyn Scorer>> + Send + Sync + 'static,
    ) {
        self.builders.insert(name, Box::new(builder));
    }

    pub fn build(&self, name: &str, assets: &ScorerAssets) -> Result<Box<dyn Scorer>> {
        match self.builders.get(name) {
            Some(b) => b(assets),
            None => Err(PipelineError::Usage(format!(
                "unknown scoring method {name:?}; available: {}",
                self.names().join(", ")
            ))),
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.builders.keys().copied().collect()
    }
}

/// Reconstruction-error scoring through the autoencoder.
pub struct PstaeScorer {
    bgsub: BgsubConfig,
    pipeline: PipelineConfig,
    extractor_cfg: ExtractorConfig,
    net: PstaeNetwork,
    extractor_params: ParamSet,
    net_params: ParamSet,
}

impl Scorer for PstaeScorer {
    fn name(&self) -> &'static str {
        "pstae"
    }

    fn score(
        &self,
        video_id: &str,
        frames: &[PointFrame],
        labels: &[u8],
        video_seed: u64,
    ) -> Result<ScoreSeries> {
        let ctx = ScoreContext {
            bgsub: &self.bgsub,
            pipeline: &self.pipeline,
            extractor_cfg: &self.extractor_cfg,
            extractor_params: &self.extractor_params,
            net: &self.net,
            net_params: &self.net_params,
        };
        score_video(video_id, frames, labels, &ctx, video_seed)
    }
}

/// Baseline: score 1 on frames with any foreground point, 0 otherwise.
pub struct BgsubScorer {
    cfg: BgsubConfig,
}

impl Scorer for BgsubScorer {
    fn name(&self) -> &'static str {
        "bgsub"
    }

    fn score(
        &self,
        video_id: &str,
        frames: &[PointFrame],
        labels: &[u8],
        _video_seed: u64,
    ) -> Result<ScoreSeries> {
        if labels.len() != frames.len() {
            return Err(PipelineError::Usage(format!(
                "{} labels for {} frames",
                labels.len(),
                frames.len()
            )));
        }
        let (fg, _) = classify_foreground(frames, &self.cfg);
        let raw = bgsub_baseline_score(&fg);
        Ok(ScoreSeries {
            video_id: video_id.to_string(),
            smoothed: raw.clone(),
            score: raw.clone(),
            padded: vec![false; raw.len()],
            raw_loss: raw,
            labels: labels.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::miniature_network;

    fn assets() -> ScorerAssets {
        let (extractor_cfg, net) = miniature_network(4);
        ScorerAssets {
            bgsub: BgsubConfig::default(),
            pipeline: PipelineConfig::default(),
            extractor_cfg,
            net,
            extractor_params: None,
            net_params: None,
        }
    }

    #[test]
    fn builtins_are_registered() {
        let reg = ScorerRegistry::with_builtins();
        assert_eq!(reg.names(), vec!["bgsub", "pstae"]);
    }

    #[test]
    fn unknown_method_is_an_error() {
        let reg = ScorerRegistry::with_builtins();
        assert!(reg.build("nope", &assets()).is_err());
    }

    #[test]
    fn pstae_without_weights_is_an_error() {
        let reg = ScorerRegistry::with_builtins();
        assert!(reg.build("pstae", &assets()).is_err());
    }

    #[test]
    fn bgsub_scorer_flags_foreground_frames() {
        let reg = ScorerRegistry::with_builtins();
        let scorer = reg.build("bgsub", &assets()).unwrap();
        assert_eq!(scorer.name(), "bgsub");
        // moving point = foreground on every frame; empty frames score 0
        let mut frames: Vec<PointFrame> =
            (0..8).map(|t| PointFrame::new(vec![[t as f64, 0.0, 0.0]])).collect();
        frames.push(PointFrame::default());
        let labels = vec![0u8; 9];
        let series = scorer.score("v", &frames, &labels, 1).unwrap();
        assert_eq!(series.score[..8], [1.0; 8][..]);
        assert_eq!(series.score[8], 0.0);
    }

    #[test]
    fn custom_strategy_can_be_registered() {
        struct Zero;
        impl Scorer for Zero {
            fn name(&self) -> &'static str {
                "zero"
            }
            fn score(
                &self,
                video_id: &str,
                frames: &[PointFrame],
                labels: &[u8],
                _seed: u64,
            ) -> Result<ScoreSeries> {
                Ok(ScoreSeries {
                    video_id: video_id.into(),
                    raw_loss: vec![0.0; frames.len()],
                    smoothed: vec![0.0; frames.len()],
                    score: vec![0.0; frames.len()],
                    labels: labels.to_vec(),
                    padded: vec![false; frames.len()],
                })
            }
        }
        let mut reg = ScorerRegistry::with_builtins();
        reg.register("zero", |_| Ok(Box::new(Zero)));
        let scorer = reg.build("zero", &assets()).unwrap();
        let series = scorer.score("v", &[PointFrame::default()], &[0], 0).unwrap();
        assert_eq!(series.score, vec![0.0]);
    }
}
