//! Deterministic synthetic point-cloud videos: a static room, humanoid blob
//! actors with scripted behaviors, and frame-accurate anomaly labels.
//!
//! The generator is a desk-scale stand-in for a depth-camera dataset: normal
//! videos contain walking actors, anomalous videos add running, collapsing,
//! crawling, left-behind objects or two-actor argument scenes.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::PointFrame;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("script error: {0}")]
    Script(String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Room extents in meters: x, y (floor plane) and z (height).
    pub room: [f64; 3],
    pub clutter_boxes: usize,
    /// Min/max clutter box edge in meters.
    pub clutter_size: (f64, f64),
    pub frames: usize,
    pub frame_rate: f64,
    /// Per-frame Gaussian coordinate noise (meters).
    pub noise_sigma: f64,
    /// Grid pitch of background surface sites.
    pub background_pitch: f64,
    /// Coincident samples per background site; keeps static voxels above the
    /// density threshold.
    pub background_copies: usize,
    /// Points per actor blob.
    pub actor_points: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room: [3.0, 3.0, 2.4],
            clutter_boxes: 2,
            clutter_size: (0.3, 0.6),
            frames: 60,
            frame_rate: 10.0,
            noise_sigma: 0.005,
            background_pitch: 0.1,
            background_copies: 4,
            actor_points: 300,
            seed: 7,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.room.iter().any(|&v| v <= 0.0) {
            return Err(SynthError::Config("room bounds must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(SynthError::Config("noise sigma must be >= 0".into()));
        }
        if self.frames == 0 || self.frame_rate <= 0.0 {
            return Err(SynthError::Config("frames and frame_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorKind {
    Walk,
    Run,
    Collapse,
    Crawl,
    LeaveObject,
    Argue,
}

impl BehaviorKind {
    pub fn is_anomalous(self) -> bool {
        !matches!(self, BehaviorKind::Walk)
    }

    pub fn category(self) -> &'static str {
        match self {
            BehaviorKind::Walk => "normal",
            BehaviorKind::Run => "run",
            BehaviorKind::Collapse => "collapse",
            BehaviorKind::Crawl => "crawl",
            BehaviorKind::LeaveObject => "leave-object",
            BehaviorKind::Argue => "argue",
        }
    }
}

/// One behavior of one actor over an inclusive frame range. The actor exists
/// only while one of its scripts is active; `Argue` involves `actor` and
/// `actor + 1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BehaviorScript {
    pub kind: BehaviorKind,
    pub actor: usize,
    pub start_frame: usize,
    pub end_frame: usize,
    /// Entry position on the floor plane.
    pub origin: [f64; 2],
    /// Initial heading (normalized internally); motion bounces off walls.
    pub heading: [f64; 2],
}

impl BehaviorScript {
    fn actors(&self) -> Vec<usize> {
        match self.kind {
            BehaviorKind::Argue => vec![self.actor, self.actor + 1],
            _ => vec![self.actor],
        }
    }
}

fn walk_speed() -> f64 {
    0.9
}

fn speed_of(kind: BehaviorKind) -> f64 {
    match kind {
        BehaviorKind::Walk | BehaviorKind::LeaveObject => walk_speed(),
        BehaviorKind::Run => 3.0 * walk_speed(),
        BehaviorKind::Crawl => 0.6 * walk_speed(),
        BehaviorKind::Collapse | BehaviorKind::Argue => 0.0,
    }
}

/// Humanoid blob: ellipsoid part centers/radii relative to the ground point,
/// sampled once per actor and deformed per frame.
#[derive(Clone, Debug)]
struct ActorTemplate {
    /// (offset from ground anchor, part id) per point.
    points: Vec<([f64; 3], Part)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Torso,
    Head,
    ArmLeft,
    ArmRight,
    LegLeft,
    LegRight,
}

fn sample_ellipsoid(
    rng: &mut ChaCha20Rng,
    center: [f64; 3],
    radii: [f64; 3],
    n: usize,
    part: Part,
    out: &mut Vec<([f64; 3], Part)>,
) {
    for _ in 0..n {
        // direction on the unit sphere via normalized Gaussian
        let mut d = [0.0f64; 3];
        loop {
            for v in d.iter_mut() {
                *v = standard_normal(rng);
            }
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if norm > 1e-9 {
                for v in d.iter_mut() {
                    *v /= norm;
                }
                break;
            }
        }
        out.push((
            [center[0] + radii[0] * d[0], center[1] + radii[1] * d[1], center[2] + radii[2] * d[2]],
            part,
        ));
    }
}

fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    // Box-Muller; two uniforms per sample keeps the stream simple
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn actor_template(rng: &mut ChaCha20Rng, total_points: usize) -> ActorTemplate {
    let mut points = Vec::with_capacity(total_points);
    let share = |frac: f64| ((total_points as f64) * frac).round() as usize;
    sample_ellipsoid(rng, [0.0, 0.0, 1.15], [0.18, 0.12, 0.35], share(0.40), Part::Torso, &mut points);
    sample_ellipsoid(rng, [0.0, 0.0, 1.66], [0.11, 0.11, 0.12], share(0.12), Part::Head, &mut points);
    sample_ellipsoid(rng, [0.26, 0.0, 1.15], [0.06, 0.06, 0.30], share(0.12), Part::ArmLeft, &mut points);
    sample_ellipsoid(rng, [-0.26, 0.0, 1.15], [0.06, 0.06, 0.30], share(0.12), Part::ArmRight, &mut points);
    sample_ellipsoid(rng, [0.11, 0.0, 0.45], [0.07, 0.07, 0.44], share(0.12), Part::LegLeft, &mut points);
    sample_ellipsoid(rng, [-0.11, 0.0, 0.45], [0.07, 0.07, 0.44], share(0.12), Part::LegRight, &mut points);
    ActorTemplate { points }
}

/// Position on the floor after traveling `dist` meters from `origin` along
/// `heading`, reflecting off the walls (margin keeps blobs inside bounds).
fn bounce_position(origin: [f64; 2], heading: [f64; 2], dist: f64, room: [f64; 3]) -> [f64; 2] {
    let margin = 0.35;
    let lo = [margin, margin];
    let hi = [room[0] - margin, room[1] - margin];
    let norm = (heading[0] * heading[0] + heading[1] * heading[1]).sqrt().max(1e-9);
    let dir = [heading[0] / norm, heading[1] / norm];
    let mut pos = [0.0f64; 2];
    for a in 0..2 {
        let span = (hi[a] - lo[a]).max(1e-6);
        let mut x = origin[a] - lo[a] + dir[a] * dist;
        // reflect x into [0, span] with period 2*span
        let period = 2.0 * span;
        x = x.rem_euclid(period);
        if x > span {
            x = period - x;
        }
        pos[a] = lo[a] + x;
    }
    pos
}

struct ActorState {
    template: ActorTemplate,
}

/// Place an actor's points for one frame of one script.
fn place_actor(
    state: &ActorState,
    script: &BehaviorScript,
    frame: usize,
    cfg: &SceneConfig,
    role: usize,
    out: &mut Vec<[f64; 3]>,
) {
    let dt = (frame - script.start_frame) as f64 / cfg.frame_rate;
    let speed = speed_of(script.kind);
    let dist = speed * dt;
    let (origin, heading) = match script.kind {
        BehaviorKind::Argue => {
            // two actors approach from both sides of a meeting point and face off
            let side = if role == 0 { 1.0 } else { -1.0 };
            let offset = 0.45 * side;
            (
                [script.origin[0] + offset * script.heading[0], script.origin[1] + offset * script.heading[1]],
                [0.0, 0.0],
            )
        }
        _ => (script.origin, script.heading),
    };
    let pos = if speed > 0.0 {
        bounce_position(origin, heading, dist, cfg.room)
    } else {
        [origin[0].clamp(0.35, cfg.room[0] - 0.35), origin[1].clamp(0.35, cfg.room[1] - 0.35)]
    };

    // gait phase advances with distance (or time when stationary)
    let phase = if speed > 0.0 {
        std::f64::consts::TAU * dist / 0.65
    } else {
        std::f64::consts::TAU * dt * 1.6
    };
    let swing = phase.sin();

    // vertical scale: crawl halves the body, collapse contracts to the floor
    let height_scale = match script.kind {
        BehaviorKind::Crawl => 0.5,
        BehaviorKind::Collapse => {
            let k = ((frame - script.start_frame) as f64 / 15.0).min(1.0);
            1.0 - 0.75 * k
        }
        _ => 1.0,
    };
    // running posture: forward torso lean, wider stride, vertical bounce
    let running = script.kind == BehaviorKind::Run;
    let (leg_swing, arm_swing) = if running { (0.40, 0.24) } else { (0.16, 0.10) };
    let lean = if running { 0.45 } else { 0.0 };
    let bounce = if running { 0.08 * (2.0 * phase).sin().abs() } else { 0.0 };

    let norm = (heading[0] * heading[0] + heading[1] * heading[1]).sqrt().max(1e-9);
    let dir = [script.heading[0] / norm, script.heading[1] / norm];
    for (offset, part) in &state.template.points {
        let mut p = *offset;
        match (script.kind, part) {
            (BehaviorKind::Argue, Part::ArmLeft | Part::ArmRight) => {
                // agitated gesturing: arms pump up and toward the other actor
                let agitation = (std::f64::consts::TAU * dt * 2.4).sin();
                p[2] += 0.25 * agitation.abs();
                let toward = if role == 0 { -1.0 } else { 1.0 };
                p[0] += 0.18 * toward * script.heading[0] * agitation;
                p[1] += 0.18 * toward * script.heading[1] * agitation;
            }
            (_, Part::LegLeft) => {
                p[0] += dir[0] * leg_swing * swing;
                p[1] += dir[1] * leg_swing * swing;
            }
            (_, Part::LegRight) => {
                p[0] -= dir[0] * leg_swing * swing;
                p[1] -= dir[1] * leg_swing * swing;
            }
            (_, Part::ArmLeft) => {
                p[0] -= dir[0] * arm_swing * swing;
                p[1] -= dir[1] * arm_swing * swing;
            }
            (_, Part::ArmRight) => {
                p[0] += dir[0] * arm_swing * swing;
                p[1] += dir[1] * arm_swing * swing;
            }
            _ => {}
        }
        // shear the upper body along the heading when leaning
        let upper = (p[2] / 1.7).clamp(0.0, 1.0);
        p[0] += lean * upper * dir[0];
        p[1] += lean * upper * dir[1];
        p[2] *= height_scale;
        p[2] += bounce;
        out.push([pos[0] + p[0], pos[1] + p[1], p[2].max(0.02)]);
    }
}

/// Stationary actor waving one arm held straight overhead; used only by the
/// action-classification dataset.
fn place_waving_actor(
    state: &ActorState,
    origin: [f64; 2],
    frame: usize,
    cfg: &SceneConfig,
    out: &mut Vec<[f64; 3]>,
) {
    let dt = frame as f64 / cfg.frame_rate;
    let wave = (std::f64::consts::TAU * dt * 1.5).sin();
    for (offset, part) in &state.template.points {
        let mut p = *offset;
        if *part == Part::ArmLeft {
            // arm points straight up from the shoulder and sways laterally
            let along = (p[2] - 0.85) / 0.60; // 0 at the hand, 1 at the shoulder
            p = [0.12 + 0.25 * wave * (1.0 - along), p[1], 1.45 + 0.60 * (1.0 - along)];
        }
        out.push([origin[0] + p[0], origin[1] + p[1], p[2].max(0.02)]);
    }
}

/// Static surfaces are emitted at the centers of this voxel lattice so that
/// per-frame noise (sigma one tenth of the voxel) cannot push samples across
/// a voxel boundary; their density then reliably accumulates in one voxel of
/// the default background-subtraction grid.
pub const BACKGROUND_VOXEL: f64 = 0.05;

fn snap_to_voxel_center(v: f64) -> f64 {
    (v / BACKGROUND_VOXEL).floor() * BACKGROUND_VOXEL + BACKGROUND_VOXEL / 2.0
}

fn background_points(cfg: &SceneConfig, rng: &mut ChaCha20Rng) -> Vec<[f64; 3]> {
    let pitch = cfg.background_pitch;
    let mut pts = Vec::new();
    let site = |x: f64, y: f64, z: f64, out: &mut Vec<[f64; 3]>| {
        let p = [snap_to_voxel_center(x), snap_to_voxel_center(y), snap_to_voxel_center(z)];
        for _ in 0..cfg.background_copies {
            out.push(p);
        }
    };
    // floor lattice
    let nx = (cfg.room[0] / pitch).floor() as usize;
    let ny = (cfg.room[1] / pitch).floor() as usize;
    for ix in 0..nx {
        for iy in 0..ny {
            site(ix as f64 * pitch, iy as f64 * pitch, 0.0, &mut pts);
        }
    }
    // clutter boxes against the walls: top and one side face
    for _ in 0..cfg.clutter_boxes {
        let edge = rng.gen_range(cfg.clutter_size.0..=cfg.clutter_size.1);
        let x0 = rng.gen_range(0.0..(cfg.room[0] - edge));
        let y0 = if rng.gen::<bool>() { 0.1 } else { cfg.room[1] - edge - 0.1 };
        let n = (edge / pitch).ceil() as usize;
        for ix in 0..n {
            for iy in 0..n {
                site(x0 + ix as f64 * pitch, y0 + iy as f64 * pitch, edge, &mut pts);
            }
        }
        for ix in 0..n {
            for iz in 0..n {
                site(x0 + ix as f64 * pitch, y0, iz as f64 * pitch, &mut pts);
            }
        }
    }
    pts
}

fn validate_scripts(cfg: &SceneConfig, scripts: &[BehaviorScript]) -> Result<()> {
    for s in scripts {
        if s.end_frame < s.start_frame || s.end_frame >= cfg.frames {
            return Err(SynthError::Script(format!(
                "script {:?} range {}..={} does not fit {} frames",
                s.kind, s.start_frame, s.end_frame, cfg.frames
            )));
        }
    }
    for (i, a) in scripts.iter().enumerate() {
        for b in scripts.iter().skip(i + 1) {
            let overlap = a.start_frame <= b.end_frame && b.start_frame <= a.end_frame;
            if !overlap {
                continue;
            }
            let shared = a.actors().iter().any(|x| b.actors().contains(x));
            if shared {
                return Err(SynthError::Script(format!(
                    "actor {} has contradictory overlapping scripts {:?} and {:?}",
                    a.actor, a.kind, b.kind
                )));
            }
        }
    }
    Ok(())
}

/// Render a video from behavior scripts. Background is identical in every
/// frame (before noise); labels are 1 exactly on frames where an anomalous
/// script is active. Fully deterministic for a given config.
pub fn gen_video(cfg: &SceneConfig, scripts: &[BehaviorScript]) -> Result<(Vec<PointFrame>, Vec<u8>)> {
    cfg.validate()?;
    validate_scripts(cfg, scripts)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let background = background_points(cfg, &mut rng);

    let max_actor = scripts.iter().flat_map(|s| s.actors()).max().map(|m| m + 1).unwrap_or(0);
    let actors: Vec<ActorState> = (0..max_actor)
        .map(|_| ActorState { template: actor_template(&mut rng, cfg.actor_points) })
        .collect();

    // one static cluster per leave-object script, sampled up front
    let mut objects: Vec<(usize, Vec<[f64; 3]>)> = Vec::new();
    for s in scripts {
        if s.kind == BehaviorKind::LeaveObject {
            let drop_dist = speed_of(s.kind) * ((s.end_frame - s.start_frame) as f64 * 0.4)
                / cfg.frame_rate;
            let pos = bounce_position(s.origin, s.heading, drop_dist, cfg.room);
            let mut cluster = Vec::with_capacity(50);
            for _ in 0..50 {
                cluster.push([
                    pos[0] + rng.gen_range(-0.15..0.15),
                    pos[1] + rng.gen_range(-0.15..0.15),
                    rng.gen_range(0.02..0.3),
                ]);
            }
            let drop_frame = s.start_frame + ((s.end_frame - s.start_frame) as f64 * 0.4) as usize;
            objects.push((drop_frame, cluster));
        }
    }

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut labels = vec![0u8; cfg.frames];
    for t in 0..cfg.frames {
        let mut pts = background.clone();
        for s in scripts {
            if t < s.start_frame || t > s.end_frame {
                continue;
            }
            if s.kind.is_anomalous() {
                labels[t] = 1;
            }
            for (role, &slot) in s.actors().iter().enumerate() {
                place_actor(&actors[slot], s, t, cfg, role, &mut pts);
            }
        }
        for (drop_frame, cluster) in &objects {
            if t >= *drop_frame {
                pts.extend_from_slice(cluster);
            }
        }
        if cfg.noise_sigma > 0.0 {
            for p in pts.iter_mut() {
                for v in p.iter_mut() {
                    *v += cfg.noise_sigma * standard_normal(&mut rng);
                }
            }
        }
        frames.push(PointFrame::new(pts));
    }
    Ok((frames, labels))
}

/// Scenario templates used by the dataset generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Normal,
    Anomaly(BehaviorKind),
}

impl Scenario {
    pub fn category(self) -> &'static str {
        match self {
            Scenario::Normal => "normal",
            Scenario::Anomaly(kind) => kind.category(),
        }
    }
}

/// Build the scripts of one video deterministically from `video_seed`.
/// Normal videos are empty-room footage bracketing a walking actor; anomalous
/// videos splice one anomalous behavior into the middle.
pub fn scripted_video(
    cfg: &SceneConfig,
    scenario: Scenario,
    video_seed: u64,
) -> Result<(Vec<PointFrame>, Vec<u8>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(video_seed ^ 0x5eed_0bad_cafe);
    let cfg = SceneConfig { seed: video_seed, ..*cfg };
    let frames = cfg.frames;
    let enter = rng.gen_range(0..frames / 8 + 1);
    let leave = frames - 1 - rng.gen_range(0..frames / 8 + 1);
    let origin = [
        rng.gen_range(0.5..cfg.room[0] - 0.5),
        rng.gen_range(0.5..cfg.room[1] - 0.5),
    ];
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let heading = [angle.cos(), angle.sin()];

    let scripts = match scenario {
        Scenario::Normal => vec![BehaviorScript {
            kind: BehaviorKind::Walk,
            actor: 0,
            start_frame: enter,
            end_frame: leave,
            origin,
            heading,
        }],
        Scenario::Anomaly(kind) => match kind {
            BehaviorKind::Walk => {
                return Err(SynthError::Script("walk is not an anomalous scenario".into()))
            }
            BehaviorKind::Run | BehaviorKind::Crawl => vec![BehaviorScript {
                kind,
                actor: 0,
                start_frame: enter,
                end_frame: leave,
                origin,
                heading,
            }],
            BehaviorKind::Collapse => {
                let onset = enter + (leave - enter) / 3;
                vec![
                    BehaviorScript {
                        kind: BehaviorKind::Walk,
                        actor: 0,
                        start_frame: enter,
                        end_frame: onset.saturating_sub(1),
                        origin,
                        heading,
                    },
                    BehaviorScript {
                        kind: BehaviorKind::Collapse,
                        actor: 0,
                        start_frame: onset,
                        end_frame: frames - 1,
                        origin: bounce_position(
                            origin,
                            heading,
                            walk_speed() * (onset - enter) as f64 / cfg.frame_rate,
                            cfg.room,
                        ),
                        heading,
                    },
                ]
            }
            BehaviorKind::LeaveObject => vec![BehaviorScript {
                kind,
                actor: 0,
                start_frame: enter,
                end_frame: frames - 1,
                origin,
                heading,
            }],
            BehaviorKind::Argue => {
                let meet = [cfg.room[0] / 2.0, cfg.room[1] / 2.0];
                vec![BehaviorScript {
                    kind,
                    actor: 0,
                    start_frame: enter,
                    end_frame: leave,
                    origin: meet,
                    heading,
                }]
            }
        },
    };
    gen_video(&cfg, &scripts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionClass {
    Walk,
    Run,
    Crawl,
    Wave,
}

pub const ACTION_CLASSES: [ActionClass; 4] =
    [ActionClass::Walk, ActionClass::Run, ActionClass::Crawl, ActionClass::Wave];

/// Foreground-only labeled clips for extractor pretraining. Classes differ in
/// speed, height and limb oscillation, so they are separable by construction.
pub fn gen_action_dataset(
    cfg: &SceneConfig,
    clip_len: usize,
    per_class: usize,
) -> Result<Vec<(Vec<PointFrame>, usize)>> {
    cfg.validate()?;
    if per_class == 0 {
        return Err(SynthError::Config("per_class must be >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9));
    let mut clips = Vec::with_capacity(ACTION_CLASSES.len() * per_class);
    for (label, class) in ACTION_CLASSES.iter().enumerate() {
        for _ in 0..per_class {
            let template = actor_template(&mut rng, cfg.actor_points);
            let state = ActorState { template };
            let origin = [
                rng.gen_range(0.8..cfg.room[0] - 0.8),
                rng.gen_range(0.8..cfg.room[1] - 0.8),
            ];
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let kind = match class {
                ActionClass::Walk => BehaviorKind::Walk,
                ActionClass::Run => BehaviorKind::Run,
                ActionClass::Crawl => BehaviorKind::Crawl,
                ActionClass::Wave => BehaviorKind::Walk, // placed by the waving variant below
            };
            let script = BehaviorScript {
                kind,
                actor: 0,
                start_frame: 0,
                end_frame: clip_len - 1,
                origin,
                heading: [angle.cos(), angle.sin()],
            };
            let mut frames = Vec::with_capacity(clip_len);
            for t in 0..clip_len {
                let mut pts = Vec::new();
                if *class == ActionClass::Wave {
                    place_waving_actor(&state, origin, t, cfg, &mut pts);
                } else {
                    place_actor(&state, &script, t, cfg, 0, &mut pts);
                }
                if cfg.noise_sigma > 0.0 {
                    for p in pts.iter_mut() {
                        for v in p.iter_mut() {
                            *v += cfg.noise_sigma * standard_normal(&mut rng);
                        }
                    }
                }
                frames.push(PointFrame::new(pts));
            }
            clips.push((frames, label));
        }
    }
    Ok(clips)
}
