//! Synthetic scenes, gaze tracks, and approach-then-act trajectories.
//!
//! Every random draw comes from ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64` and split into independent streams with `set_stream`.
//! Scene `k` of a dataset uses stream `SCENE_STREAM + k`; episode seeds are
//! `splitmix64(dataset_seed ^ splitmix64(index))`, so episodes can be
//! generated in any order or in parallel with identical results.
//!
//! Rooms are 6×6 m with z up. Objects are boxes sampled on their top and
//! side faces; the rest of the points lie on the floor. A walker starts
//! near the room edge, takes five 0.5 m steps (1 m/s at 2 fps) toward an
//! aim point beside its goal, then finishes the approach and blends into
//! the goal object's terminal pose archetype.

use crate::bodymodel::{MotionSequence, PoseFrame, Vec3, HAND_DIM, POSE_DIM, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::fusion::{HORIZON, INPUT_FRAMES};
use crate::scenenet::{GazeTrack, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

pub const ROOM_HALF: f64 = 3.0;
pub const STEP_LENGTH: f64 = 0.5;
/// Largest translation gap between consecutive frames.
pub const MAX_FRAME_GAP: f64 = 0.6;
pub const WALK_HEIGHT: f64 = 0.9;

const SCENE_STREAM: u64 = 1 << 32;
const DATA_FORMAT: &str = "GIMO-DATA v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestKnown,
    TestNew,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::TestKnown, Split::TestNew];

    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestKnown => "test_known",
            Split::TestNew => "test_new",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::contract(format!("unknown split '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// 2–5 boxes scattered around the room center.
    Random,
    /// Two identical boxes mirrored across the x = 0 plane; walkers start on
    /// the mirror plane and walk along it, so past motion carries no
    /// information about which box is the goal.
    MirrorPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub layout: Layout,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Probability that a gaze point lands on a non-goal object.
    pub rho: f64,
    /// Isotropic gaze noise (meters).
    pub gaze_sigma: f64,
    /// Per-frame drift of the pose embedding.
    pub motion_sigma: f64,
    pub points: usize,
    /// Surface points sampled on each object.
    pub object_points: usize,
    pub known_scenes: usize,
    pub new_scenes: usize,
    pub train: usize,
    pub test_known: usize,
    pub test_new: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            layout: Layout::Random,
            objects_min: 2,
            objects_max: 5,
            rho: 0.1,
            gaze_sigma: 0.05,
            motion_sigma: 0.05,
            points: 2048,
            object_points: 160,
            known_scenes: 6,
            new_scenes: 2,
            train: 180,
            test_known: 27,
            test_new: 10,
        }
    }
}

impl GenConfig {
    /// Mirror-pair scenes, noiseless intent, 64 known-scene test episodes.
    pub fn ambiguity() -> Self {
        GenConfig {
            layout: Layout::MirrorPair,
            objects_min: 2,
            objects_max: 2,
            rho: 0.0,
            gaze_sigma: 0.05,
            known_scenes: 4,
            new_scenes: 0,
            train: 128,
            test_known: 64,
            test_new: 0,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::contract(format!("rho {} outside [0, 1]", self.rho)));
        }
        if !(self.gaze_sigma >= 0.0 && self.motion_sigma >= 0.0) {
            return Err(Error::contract("noise levels must be nonnegative"));
        }
        if self.objects_min < 2 || self.objects_max > 5 || self.objects_min > self.objects_max {
            return Err(Error::contract("object count range must lie within 2..=5"));
        }
        if self.layout == Layout::MirrorPair && (self.objects_min, self.objects_max) != (2, 2) {
            return Err(Error::contract("mirror-pair scenes hold exactly two objects"));
        }
        let floor_min = self.points.saturating_sub(self.objects_max * self.object_points);
        if self.object_points == 0 || floor_min < 16 {
            return Err(Error::contract(format!("{} points leave too few for the floor", self.points)));
        }
        if self.known_scenes == 0 && self.train + self.test_known > 0 {
            return Err(Error::contract("known-scene episodes need at least one known scene"));
        }
        if self.new_scenes == 0 && self.test_new > 0 {
            return Err(Error::contract("new-scene episodes need at least one new scene"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub scene_id: String,
    pub intent_id: u32,
    pub split: Split,
    pub past: MotionSequence,
    pub gaze: GazeTrack,
    pub future: MotionSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GenConfig,
    pub scenes: Vec<Scene>,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    pub fn scene(&self, id: &str) -> Result<&Scene> {
        self.scenes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::contract(format!("unknown scene '{id}'")))
    }

    pub fn split(&self, split: Split) -> Vec<&Episode> {
        self.episodes.iter().filter(|e| e.split == split).collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        Split::ALL.map(|s| self.episodes.iter().filter(|e| e.split == s).count())
    }

    /// SHA-256 over every scene file (in dataset order) and the episode
    /// lines, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.scenes {
            h.update(s.id.as_bytes());
            h.update(b"\n");
            h.update(s.to_file_string().as_bytes());
        }
        h.update(self.episodes_jsonl().as_bytes());
        hex::encode(h.finalize())
    }

    fn episodes_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.episodes {
            out.push_str(&serde_json::to_string(e).expect("episodes serialize"));
            out.push('\n');
        }
        out
    }

    /// Checks every episode and the split protocol.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for s in &self.scenes {
            s.validate()?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::contract(format!("duplicate scene id '{}'", s.id)));
            }
        }
        let scenes_of = |split: Split| -> BTreeSet<&str> {
            self.episodes.iter().filter(|e| e.split == split).map(|e| e.scene_id.as_str()).collect()
        };
        let train = scenes_of(Split::Train);
        if let Some(s) = scenes_of(Split::TestNew).intersection(&train).next() {
            return Err(Error::contract(format!("new-scene split reuses training scene '{s}'")));
        }
        for (i, e) in self.episodes.iter().enumerate() {
            validate_episode(e, self.scene(&e.scene_id)?).map_err(|err| Error::contract(format!("episode {i}: {err}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: GenConfig,
    pub scene_ids: Vec<String>,
    pub counts: [usize; 3],
    pub content_hash: String,
}

pub fn validate_episode(e: &Episode, scene: &Scene) -> Result<()> {
    if e.past.len() != INPUT_FRAMES || e.future.len() != HORIZON {
        return Err(Error::contract(format!(
            "expected {INPUT_FRAMES} past and {HORIZON} future frames, got {} and {}",
            e.past.len(),
            e.future.len()
        )));
    }
    if e.gaze.points.len() != INPUT_FRAMES || e.gaze.valid.len() != INPUT_FRAMES {
        return Err(Error::contract("gaze track must have one point and flag per past frame"));
    }
    if e.scene_id != scene.id || scene.object_points(e.intent_id).is_empty() {
        return Err(Error::contract(format!("intent {} is not an object of scene '{}'", e.intent_id, scene.id)));
    }
    let frames: Vec<&PoseFrame> = e.past.frames.iter().chain(&e.future.frames).collect();
    if !frames.iter().all(|f| f.is_finite()) || e.gaze.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::contract("non-finite values"));
    }
    for w in frames.windows(2) {
        let gap = crate::bodymodel::dist3(w[0].t, w[1].t);
        if gap >= MAX_FRAME_GAP {
            return Err(Error::contract(format!("translation gap {gap} between consecutive frames")));
        }
    }
    Ok(())
}

/// Stateless 64-bit mixer used to derive per-episode seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

// ── scenes ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
struct Box3 {
    center: [f64; 2],
    half: [f64; 2],
    height: f64,
}

fn sample_box_surface<R: Rng>(b: &Box3, n: usize, rng: &mut R) -> Vec<Vec3> {
    let (hx, hy, h) = (b.half[0], b.half[1], b.height);
    let top = 4.0 * hx * hy;
    let side_x = 2.0 * hy * h; // faces normal to x
    let side_y = 2.0 * hx * h;
    let total = top + 2.0 * side_x + 2.0 * side_y;
    (0..n)
        .map(|_| {
            let pick = rng.random_range(0.0..total);
            let u: f64 = rng.random_range(-1.0..1.0);
            let v: f64 = rng.random_range(0.0..1.0);
            let (x, y, z) = if pick < top {
                (u * hx, rng.random_range(-1.0..1.0) * hy, h)
            } else if pick < top + 2.0 * side_x {
                let sign = if pick < top + side_x { 1.0 } else { -1.0 };
                (sign * hx, u * hy, v * h)
            } else {
                let sign = if pick < top + 2.0 * side_x + side_y { 1.0 } else { -1.0 };
                (u * hx, sign * hy, v * h)
            };
            [b.center[0] + x, b.center[1] + y, z]
        })
        .collect()
}

fn random_box<R: Rng>(center: [f64; 2], rng: &mut R) -> Box3 {
    Box3 {
        center,
        half: [rng.random_range(0.2..0.45), rng.random_range(0.2..0.45)],
        height: rng.random_range(0.4..1.0),
    }
}

fn floor_points<R: Rng>(n: usize, x_range: (f64, f64), rng: &mut R) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(x_range.0..x_range.1),
                rng.random_range(-ROOM_HALF..ROOM_HALF),
                0.0,
            ]
        })
        .collect()
}

/// A labeled room of exactly `config.points` points; deterministic in
/// `(seed, config)`.
pub fn generate_scene(id: &str, seed: u64, config: &GenConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = stream(seed, 0);
    let mut points = Vec::with_capacity(config.points);
    let mut labels = Vec::with_capacity(config.points);
    match config.layout {
        Layout::Random => {
            let count = rng.random_range(config.objects_min..=config.objects_max);
            let mut centers: Vec<[f64; 2]> = Vec::new();
            for _ in 0..10_000 {
                if centers.len() == count {
                    break;
                }
                let (r, a) = (1.8 * rng.random_range(0.1f64..1.0).sqrt(), rng.random_range(-PI..PI));
                let c = [r * a.cos(), r * a.sin()];
                if centers.iter().all(|o| (o[0] - c[0]).hypot(o[1] - c[1]) > 1.2) {
                    centers.push(c);
                }
            }
            if centers.len() < count {
                return Err(Error::contract("could not place scene objects"));
            }
            for (label, c) in centers.into_iter().enumerate() {
                let b = random_box(c, &mut rng);
                points.extend(sample_box_surface(&b, config.object_points, &mut rng));
                labels.extend(std::iter::repeat_n(Some(label as u32), config.object_points));
            }
            let rest = config.points - points.len();
            points.extend(floor_points(rest, (-ROOM_HALF, ROOM_HALF), &mut rng));
            labels.extend(std::iter::repeat_n(None, rest));
        }
        Layout::MirrorPair => {
            let a = rng.random_range(1.0..1.5);
            let b = random_box([a, 1.5], &mut rng);
            let right = sample_box_surface(&b, config.object_points, &mut rng);
            let floor_half = (config.points - 2 * config.object_points) / 2;
            let mut floor = floor_points(floor_half, (0.0, ROOM_HALF), &mut rng);
            if (config.points - 2 * config.object_points) % 2 == 1 {
                floor.push([0.0, rng.random_range(-ROOM_HALF..ROOM_HALF), 0.0]);
            }
            let mirror = |p: &Vec3| [-p[0], p[1], p[2]];
            // label 0 on the left (x < 0), label 1 on the right
            points.extend(right.iter().map(mirror));
            labels.extend(std::iter::repeat_n(Some(0), config.object_points));
            points.extend(right.iter().copied());
            labels.extend(std::iter::repeat_n(Some(1), config.object_points));
            for p in &floor {
                points.push(*p);
                labels.push(None);
                if p[0] != 0.0 {
                    points.push(mirror(p));
                    labels.push(None);
                }
            }
            while points.len() < config.points {
                points.push([0.0, rng.random_range(-ROOM_HALF..ROOM_HALF), 0.0]);
                labels.push(None);
            }
        }
    }
    Scene::new(id, points, labels)
}

// ── episodes ─────────────────────────────────────────────────────────

/// Terminal archetypes: sit, reach, crouch. Object `k` uses archetype `k % 3`.
pub const ARCHETYPE_HEIGHTS: [f64; 3] = [0.5, 0.95, 0.6];

pub fn archetype_pose(kind: usize) -> [f64; POSE_DIM] {
    let mut h = [0.0; POSE_DIM];
    let base = 8 * (kind % 3);
    let pattern = [1.2, -0.8, 0.6, 0.9, -0.5, 0.7, -1.0, 0.4];
    h[base..base + 8].copy_from_slice(&pattern);
    h
}

fn walk_pose() -> [f64; POSE_DIM] {
    let mut h = [0.0; POSE_DIM];
    for (i, v) in h.iter_mut().enumerate().skip(24) {
        *v = if i % 2 == 0 { 0.5 } else { -0.3 };
    }
    h
}

fn centroid_xy(scene: &Scene, label: u32) -> [f64; 2] {
    let idx = scene.object_points(label);
    let n = idx.len() as f64;
    let (sx, sy) = idx.iter().fold((0.0, 0.0), |(x, y), &i| (x + scene.points[i][0], y + scene.points[i][1]));
    [sx / n, sy / n]
}

fn frame_at(xy: [f64; 2], z: f64, yaw: f64, h: [f64; POSE_DIM], beta: &[f64; SHAPE_DIM]) -> PoseFrame {
    PoseFrame {
        t: [xy[0], xy[1], z],
        r: [0.0, 0.0, crate::bodymodel::wrap_angle(yaw)],
        h,
        beta: *beta,
        p: [0.0; HAND_DIM],
    }
}

/// One episode walking toward object `intent_id`. The start position,
/// initial heading, and body shape depend on `seed` only, so two intents
/// with the same seed share their first frame.
pub fn generate_episode(scene: &Scene, intent_id: u32, seed: u64, config: &GenConfig, split: Split) -> Result<Episode> {
    let labels = scene.object_labels();
    if !labels.contains(&intent_id) {
        return Err(Error::contract(format!("intent {intent_id} is not an object of scene '{}'", scene.id)));
    }
    let mut shared = stream(seed, 0);
    let mut rng = stream(seed, 1 + intent_id as u64);
    let beta: [f64; SHAPE_DIM] = std::array::from_fn(|_| 0.5 * shared.sample::<f64, _>(StandardNormal));
    let goal = centroid_xy(scene, intent_id);

    let (start, aim) = match config.layout {
        Layout::MirrorPair => {
            let x0 = 0.05 * shared.sample::<f64, _>(StandardNormal);
            ([x0, -2.5], [x0, 10.0])
        }
        Layout::Random => {
            let a = shared.random_range(-PI..PI);
            let r = shared.random_range(2.6..2.8);
            let start = [r * a.cos(), r * a.sin()];
            let (dx, dy) = (goal[0] - start[0], goal[1] - start[1]);
            let d = dx.hypot(dy);
            let off = rng.random_range(-1.2..1.2);
            (start, [goal[0] - dy / d * off, goal[1] + dx / d * off])
        }
    };
    let heading0 = shared.random_range(-PI..PI);
    let dist_goal = (goal[0] - start[0]).hypot(goal[1] - start[1]);
    let step = STEP_LENGTH.min((dist_goal - 1.0) / (INPUT_FRAMES - 1) as f64).max(0.05);
    let aim_dir = {
        let (dx, dy) = (aim[0] - start[0], aim[1] - start[1]);
        let n = dx.hypot(dy);
        [dx / n, dy / n]
    };
    let walk_yaw = aim_dir[1].atan2(aim_dir[0]);

    let drift = Normal::new(0.0, config.motion_sigma).map_err(|e| Error::contract(e.to_string()))?;
    let mut h = walk_pose();
    let mut frames = Vec::with_capacity(INPUT_FRAMES + HORIZON);
    for k in 0..INPUT_FRAMES {
        let xy = [start[0] + aim_dir[0] * step * k as f64, start[1] + aim_dir[1] * step * k as f64];
        let yaw = if k == 0 { heading0 } else { walk_yaw };
        if k > 0 {
            for v in h.iter_mut() {
                *v += drift.sample(&mut rng);
            }
        }
        frames.push(frame_at(xy, WALK_HEIGHT, yaw, h, &beta));
    }

    let kind = intent_id as usize % 3;
    let target_h = archetype_pose(kind);
    let target_z = ARCHETYPE_HEIGHTS[kind];
    let jitter = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    let dest = [goal[0] + jitter[0], goal[1] + jitter[1]];
    let from = frames.last().expect("past frames").t;
    let (dx, dy) = (dest[0] - from[0], dest[1] - from[1]);
    let remaining = dx.hypot(dy);
    let speed = STEP_LENGTH.max(remaining / (HORIZON - 2) as f64);
    let arrive = (remaining / speed).ceil() as usize;
    let yaw = if remaining > 1e-9 { dy.atan2(dx) } else { walk_yaw };
    let walk_h = h;
    for j in 1..=HORIZON {
        let along = (speed * j as f64).min(remaining);
        let xy = if remaining > 1e-9 {
            [from[0] + dx / remaining * along, from[1] + dy / remaining * along]
        } else {
            dest
        };
        let blend = ((j as f64 - arrive as f64 + 1.0) / 2.0).clamp(0.0, 1.0);
        let pose: [f64; POSE_DIM] = std::array::from_fn(|i| walk_h[i] + blend * (target_h[i] - walk_h[i]));
        let z = WALK_HEIGHT + blend * (target_z - WALK_HEIGHT);
        frames.push(frame_at(xy, z, yaw, pose, &beta));
    }

    let objects = scene.object_points(intent_id);
    let others: Vec<u32> = labels.iter().copied().filter(|&l| l != intent_id).collect();
    let noise = Normal::new(0.0, config.gaze_sigma).map_err(|e| Error::contract(e.to_string()))?;
    let mut gaze_points = Vec::with_capacity(INPUT_FRAMES);
    for _ in 0..INPUT_FRAMES {
        let distracted = config.rho > 0.0 && rng.random_bool(config.rho);
        let pool = if distracted {
            scene.object_points(others[rng.random_range(0..others.len())])
        } else {
            objects.clone()
        };
        let p = scene.points[pool[rng.random_range(0..pool.len())]];
        let g = match config.gaze_sigma > 0.0 {
            true => [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng), p[2] + noise.sample(&mut rng)],
            false => p,
        };
        gaze_points.push(g);
    }

    let future = frames.split_off(INPUT_FRAMES);
    Ok(Episode {
        scene_id: scene.id.clone(),
        intent_id,
        split,
        past: MotionSequence::new(frames)?,
        gaze: GazeTrack {
            points: gaze_points,
            valid: vec![true; INPUT_FRAMES],
        },
        future: MotionSequence::new(future)?,
    })
}

fn scene_id(split_new: bool, k: usize) -> String {
    match split_new {
        false => format!("known_{k:02}"),
        true => format!("new_{k:02}"),
    }
}

/// Known scenes `known_00…`, held-out scenes `new_00…`; training and
/// known-scene test episodes cycle through the known scenes, new-scene
/// test episodes through the held-out ones.
pub fn build_dataset(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let total_scenes = config.known_scenes + config.new_scenes;
    let scenes = (0..total_scenes)
        .into_par_iter()
        .map(|k| {
            let new = k >= config.known_scenes;
            let local = if new { k - config.known_scenes } else { k };
            let seed = splitmix64(config.seed ^ (SCENE_STREAM + k as u64));
            generate_scene(&scene_id(new, local), seed, config)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut jobs = Vec::new();
    for (split, count) in [
        (Split::Train, config.train),
        (Split::TestKnown, config.test_known),
        (Split::TestNew, config.test_new),
    ] {
        for i in 0..count {
            let scene = match split {
                Split::TestNew => config.known_scenes + i % config.new_scenes,
                _ => i % config.known_scenes,
            };
            jobs.push((split, scene));
        }
    }
    let episodes = jobs
        .par_iter()
        .enumerate()
        .map(|(index, &(split, scene))| {
            let seed = splitmix64(config.seed ^ splitmix64(index as u64));
            let scene = &scenes[scene];
            let labels = scene.object_labels();
            let mut pick = stream(seed, u64::MAX);
            let intent = labels[pick.random_range(0..labels.len())];
            generate_episode(scene, intent, seed, config, split)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: config.clone(),
        scenes,
        episodes,
    })
}

// ── files ────────────────────────────────────────────────────────────

impl Dataset {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: DATA_FORMAT.to_string(),
            config: self.config.clone(),
            scene_ids: self.scenes.iter().map(|s| s.id.clone()).collect(),
            counts: self.counts(),
            content_hash: self.content_hash(),
        }
    }

    /// Writes `scenes/<id>.txt`, `episodes.jsonl`, and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let scenes_dir = dir.join("scenes");
        std::fs::create_dir_all(&scenes_dir)?;
        for s in &self.scenes {
            std::fs::write(scenes_dir.join(format!("{}.txt", s.id)), s.to_file_string())?;
        }
        std::fs::write(dir.join("episodes.jsonl"), self.episodes_jsonl())?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&manifest_path)?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(manifest_path.display().to_string(), e.line(), e.to_string()))?;
        if manifest.format != DATA_FORMAT {
            return Err(Error::parse(manifest_path.display().to_string(), 1, format!("unsupported format '{}'", manifest.format)));
        }
        let mut scenes = Vec::with_capacity(manifest.scene_ids.len());
        for id in &manifest.scene_ids {
            let path = dir.join("scenes").join(format!("{id}.txt"));
            let text = std::fs::read_to_string(&path)?;
            scenes.push(Scene::parse(&text, id, &path.display().to_string())?);
        }
        let path = dir.join("episodes.jsonl");
        let source = path.display().to_string();
        let text = std::fs::read_to_string(&path)?;
        let episodes = parse_episodes(&text, &source)?;
        let data = Dataset {
            config: manifest.config,
            scenes,
            episodes,
        };
        let hash = data.content_hash();
        if hash != manifest.content_hash {
            return Err(Error::contract(format!(
                "content hash {hash} does not match manifest {}",
                manifest.content_hash
            )));
        }
        Ok(data)
    }
}

pub fn parse_episodes(text: &str, source: &str) -> Result<Vec<Episode>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| Error::parse(source, i + 1, e.to_string())))
        .collect()
}
