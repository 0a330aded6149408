//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use pstae::autodiff::{load_checkpoint, save_checkpoint, ParamSet};
use pstae::config::{video_seed, RunConfig};
use pstae::formats;
use pstae::net::{arch_summary, PstaeNetwork, DESCRIPTOR_DIMS};
use pstae::pipeline::{
    evaluate, prepare_video_frames, pretrain_extractor, roc_points, train_pstae, ScoreSeries,
};
use pstae::pointcloud::{segment_video, Clip, PointFrame};
use pstae::scoring::{Scorer, ScorerAssets, ScorerRegistry};
use pstae::synth::{gen_action_dataset, scripted_video, BehaviorKind, SceneConfig, Scenario};

use crate::data;

const ANOMALY_KINDS: [BehaviorKind; 5] = [
    BehaviorKind::Run,
    BehaviorKind::Collapse,
    BehaviorKind::Crawl,
    BehaviorKind::LeaveObject,
    BehaviorKind::Argue,
];

pub fn gen_data(config: &RunConfig, out: &Path) -> Result<()> {
    let train_dir = out.join("train");
    let test_dir = out.join("test");
    fs::create_dir_all(&train_dir)?;
    fs::create_dir_all(&test_dir)?;

    let write_video = |dir: &Path,
                       id: &str,
                       scenario: Scenario,
                       manifest: &mut BTreeMap<String, String>|
     -> Result<()> {
        let seed = video_seed(config.seed, id);
        let (frames, labels) = scripted_video(&config.scene, scenario, seed)?;
        formats::write_pcv(&dir.join(format!("{id}.pcv")), &frames)?;
        formats::write_labels(&dir.join(format!("{id}.labels")), &labels)?;
        manifest.insert(id.to_string(), scenario.category().to_string());
        Ok(())
    };

    let mut train_manifest = BTreeMap::new();
    for i in 0..config.dataset.train_videos {
        write_video(&train_dir, &format!("train_{i:04}"), Scenario::Normal, &mut train_manifest)?;
    }
    formats::write_manifest(&train_dir.join("manifest.json"), &train_manifest)?;

    let mut test_manifest = BTreeMap::new();
    let mut index = 0usize;
    for i in 0..config.dataset.test_normal {
        write_video(&test_dir, &format!("test_{index:04}_normal_{i}"), Scenario::Normal, &mut test_manifest)?;
        index += 1;
    }
    for kind in ANOMALY_KINDS {
        for i in 0..config.dataset.test_per_anomaly {
            write_video(
                &test_dir,
                &format!("test_{index:04}_{}_{i}", kind.category()),
                Scenario::Anomaly(kind),
                &mut test_manifest,
            )?;
            index += 1;
        }
    }
    formats::write_manifest(&test_dir.join("manifest.json"), &test_manifest)?;
    println!(
        "wrote {} training and {} test videos under {}",
        config.dataset.train_videos,
        test_manifest.len(),
        out.display()
    );
    Ok(())
}

/// Pretrain on synthetic action classes, or on labeled real clips when a
/// data directory is given.
pub fn pretrain(
    config: &RunConfig,
    out: &Path,
    data: Option<&Path>,
    report_path: Option<&Path>,
) -> Result<()> {
    let pc = &config.pretrain;
    let clips: Vec<(Vec<PointFrame>, usize)> = match data {
        None => {
            let scene = SceneConfig { seed: config.seed, ..config.scene };
            gen_action_dataset(&scene, pc.clip_len, pc.per_class)?
        }
        Some(dir) => {
            let mut out = Vec::new();
            for (id, frames, class) in data::load_action_dir(dir)? {
                let clips = segment_video(&frames, &id, pc.clip_len, false)?;
                for c in clips {
                    out.push((c.frames, class));
                }
            }
            out
        }
    };
    let mut head = pc.head;
    let max_class = clips.iter().map(|(_, l)| *l).max().unwrap_or(0);
    if max_class + 1 > head.num_classes {
        head.num_classes = max_class + 1;
    }
    let outcome = pretrain_extractor(
        &clips,
        &config.extractor,
        &head,
        pc.points_per_frame,
        &pc.sgd,
        config.pipeline.fps_seed,
        config.seed,
        config.workers.max(1),
    )?;
    save_checkpoint(&outcome.extractor, out)?;
    let accuracy = outcome.report.final_train_accuracy.unwrap_or(0.0);
    if let Some(p) = report_path {
        let mut report = outcome.report.clone();
        report.checkpoint_path = Some(out.display().to_string());
        fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    println!(
        "pretrained extractor on {} clips, train accuracy {accuracy:.3}, saved {}",
        clips.len(),
        out.display()
    );
    Ok(())
}

fn load_frozen_extractor(path: &Path) -> Result<ParamSet> {
    let mut params =
        load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    params.freeze_all();
    Ok(params)
}

/// Foreground-extract, resample and segment training videos, keeping only
/// clips where every frame has enough foreground.
pub fn prepare_training_clips(config: &RunConfig, dir: &Path) -> Result<Vec<Clip>> {
    let videos = data::load_video_dir(dir)?;
    let mut clips = Vec::new();
    for v in &videos {
        let mut rng = rand_seed(video_seed(config.seed, &v.id));
        let prepared = prepare_video_frames(&v.frames, &config.bgsub, &config.pipeline, &mut rng)?;
        for clip in segment_video(&prepared, &v.id, config.pipeline.clip_len, false)? {
            if clip.frames.iter().all(|f| !f.is_empty()) {
                clips.push(clip);
            }
        }
    }
    if clips.is_empty() {
        bail!("no usable training clips in {} (all frames empty after foreground extraction)", dir.display());
    }
    Ok(clips)
}

fn rand_seed(seed: u64) -> pstae::rand_chacha::ChaCha20Rng {
    use pstae::rand_chacha::rand_core::SeedableRng;
    pstae::rand_chacha::ChaCha20Rng::seed_from_u64(seed)
}

pub fn train(
    config: &RunConfig,
    data: &Path,
    extractor: &Path,
    out: &Path,
    report_path: Option<&Path>,
) -> Result<()> {
    let extractor_params = load_frozen_extractor(extractor)?;
    let net = config.network()?;
    let clips = prepare_training_clips(config, data)?;
    let (params, mut report) = train_pstae(
        &clips,
        &extractor_params,
        &config.extractor,
        &net,
        &config.sgd,
        config.pipeline.fps_seed,
        config.seed,
        config.workers.max(1),
    )?;
    save_checkpoint(&params, out)?;
    report.checkpoint_path = Some(out.display().to_string());
    if let Some(p) = report_path {
        fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    let last = report.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN);
    println!("trained on {} clips, final mean loss {last:.6}, saved {}", clips.len(), out.display());
    Ok(())
}

pub fn build_assets(
    config: &RunConfig,
    extractor: Option<&Path>,
    model: Option<&Path>,
) -> Result<ScorerAssets> {
    let net = config.network()?;
    let extractor_params = extractor.map(load_frozen_extractor).transpose()?;
    let net_params = model.map(load_checkpoint).transpose()?;
    Ok(ScorerAssets {
        bgsub: config.bgsub,
        pipeline: config.pipeline,
        extractor_cfg: config.extractor.clone(),
        net,
        extractor_params,
        net_params,
    })
}

/// Score every video of a directory in parallel; results keep directory
/// order, so output bytes do not depend on the worker count.
pub fn score_videos(
    config: &RunConfig,
    scorer: &dyn Scorer,
    videos: &[data::VideoRecord],
) -> Result<Vec<ScoreSeries>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| anyhow!("worker pool: {e}"))?;
    pool.install(|| {
        videos
            .par_iter()
            .map(|v| {
                scorer
                    .score(&v.id, &v.frames, &v.labels, video_seed(config.seed, &v.id))
                    .map_err(|e| anyhow!("{}: {e}", v.id))
            })
            .collect()
    })
}

pub fn score(
    config: &RunConfig,
    data_dir: &Path,
    extractor: Option<&Path>,
    model: Option<&Path>,
    out: &Path,
    method: &str,
) -> Result<()> {
    let assets = build_assets(config, extractor, model)?;
    let registry = ScorerRegistry::with_builtins();
    let scorer = registry.build(method, &assets)?;
    let videos = data::load_video_dir(data_dir)?;
    fs::create_dir_all(out)?;
    let series = score_videos(config, scorer.as_ref(), &videos)?;
    for s in &series {
        data::write_score_csv(&out.join(format!("{}.csv", s.video_id)), s)?;
    }
    println!("scored {} videos with {:?} into {}", series.len(), scorer.name(), out.display());
    Ok(())
}

pub fn eval(
    config: &RunConfig,
    scores: &Path,
    out: &Path,
    data_dir: Option<&Path>,
    manifest: Option<&Path>,
) -> Result<()> {
    let series = data::load_score_dir(scores)?;
    let manifest_path = match manifest {
        Some(p) => Some(p.to_path_buf()),
        None => data_dir.map(|d| d.join("manifest.json")).filter(|p| p.exists()),
    };
    let categories = match manifest_path {
        Some(p) => data::read_manifest(&p)?,
        None => BTreeMap::new(),
    };
    // the baseline column is recomputed from the raw videos, independent of
    // the score CSVs under evaluation
    let baseline = match data_dir {
        None => None,
        Some(dir) => {
            let assets = build_assets(config, None, None)?;
            let registry = ScorerRegistry::with_builtins();
            let scorer = registry.build("bgsub", &assets)?;
            let videos = data::load_video_dir(dir)?;
            let scored = score_videos(config, scorer.as_ref(), &videos)?;
            Some(scored.into_iter().map(|s| (s.video_id.clone(), s.score)).collect::<Vec<_>>())
        }
    };
    let report = evaluate(&series, baseline.as_deref(), &categories)?;
    fs::write(out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "auroc {:.4}{} over {} frames -> {}",
        report.auroc,
        report
            .bgsub_auroc
            .map(|b| format!(" (bgsub baseline {b:.4})"))
            .unwrap_or_default(),
        report.num_frames,
        out.display()
    );
    Ok(())
}

pub fn heatmap(
    config: &RunConfig,
    video: &Path,
    extractor: &Path,
    model: &Path,
    out: &Path,
) -> Result<()> {
    let frames = formats::read_pcv(video)?;
    let extractor_params = load_frozen_extractor(extractor)?;
    let net_params = load_checkpoint(model)?;
    let net = config.network()?;
    let ctx = pstae::pipeline::ScoreContext {
        bgsub: &config.bgsub,
        pipeline: &config.pipeline,
        extractor_cfg: &config.extractor,
        extractor_params: &extractor_params,
        net: &net,
        net_params: &net_params,
    };
    let id = video.file_stem().and_then(|s| s.to_str()).unwrap_or("video");
    let maps = pstae::pipeline::heatmap_video(&frames, &ctx, video_seed(config.seed, id))?;
    fs::create_dir_all(out)?;
    for m in &maps {
        formats::write_heatmap_ply(
            &out.join(format!("frame_{:04}.ply", m.frame_index)),
            &m.coords,
            &m.errors,
        )?;
    }
    println!("wrote {} heat-map frames to {}", maps.len(), out.display());
    Ok(())
}

/// Full pipeline per descriptor dimension; one ROC file per dimension plus a
/// summary JSON.
pub fn sweep_f(config: &RunConfig, train_data: &Path, test_data: &Path, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let test_videos = data::load_video_dir(test_data)?;
    let mut summary = BTreeMap::new();
    for f in DESCRIPTOR_DIMS {
        let mut cfg = config.clone();
        cfg.extractor.f = f;
        cfg.network = None;

        let scene = SceneConfig { seed: cfg.seed, ..cfg.scene };
        let action_clips = gen_action_dataset(&scene, cfg.pretrain.clip_len, cfg.pretrain.per_class)?;
        let outcome = pretrain_extractor(
            &action_clips,
            &cfg.extractor,
            &cfg.pretrain.head,
            cfg.pretrain.points_per_frame,
            &cfg.pretrain.sgd,
            cfg.pipeline.fps_seed,
            cfg.seed,
            cfg.workers.max(1),
        )?;
        let clips = prepare_training_clips(&cfg, train_data)?;
        let net = cfg.network()?;
        let (params, _) = train_pstae(
            &clips,
            &outcome.extractor,
            &cfg.extractor,
            &net,
            &cfg.sgd,
            cfg.pipeline.fps_seed,
            cfg.seed,
            cfg.workers.max(1),
        )?;
        let assets = ScorerAssets {
            bgsub: cfg.bgsub,
            pipeline: cfg.pipeline,
            extractor_cfg: cfg.extractor.clone(),
            net,
            extractor_params: Some(outcome.extractor.clone()),
            net_params: Some(params),
        };
        let registry = ScorerRegistry::with_builtins();
        let scorer = registry.build("pstae", &assets)?;
        let series = score_videos(&cfg, scorer.as_ref(), &test_videos)?;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for s in &series {
            scores.extend_from_slice(&s.score);
            labels.extend_from_slice(&s.labels);
        }
        let points = roc_points(&scores, &labels)?;
        let auc = pstae::pipeline::auroc(&scores, &labels)?;
        let mut text = String::from("fpr,tpr\n");
        for (fpr, tpr) in &points {
            text.push_str(&format!("{fpr},{tpr}\n"));
        }
        fs::write(out.join(format!("roc_f{f}.csv")), text)?;
        summary.insert(format!("f{f}"), auc);
        println!("f={f}: auroc {auc:.4}");
    }
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

pub fn arch_dump(config: &RunConfig, f: Option<usize>, out: Option<&Path>) -> Result<()> {
    let (extractor_cfg, net) = match f {
        Some(f) => {
            let mut e = config.extractor.clone();
            e.f = f;
            e.validate().map_err(|err| anyhow!("{err}"))?;
            let net = PstaeNetwork::standard(f, e.base_radius, e.k)?;
            (e, net)
        }
        None => (config.extractor.clone(), config.network()?),
    };
    let summary = arch_summary(&extractor_cfg, &net);
    let text = serde_json::to_string_pretty(&summary)?;
    match out {
        Some(p) => fs::write(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}
