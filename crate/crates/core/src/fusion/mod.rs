//! Bidirectional gaze/motion/scene fusion and the transformer prediction
//! head, plus the ablation variants and an RNN baseline.
//!
//! Data flow of the full model for one episode:
//!
//! ```text
//! past (6×38) ──embed──────────────▶ f_m ─┐
//! past meshes ──interp F_P, MLP, max──▶ f_mv ─┼─ f_ms = CT(f_mv ← f_m)
//! gaze ──interp F_P────────────────▶ f_g ─┘  f_mg = CT(f_g ← f_ms)
//!                                             f_gm = CT(f_m ← f_g)
//! cat(f_gm, f_mg, F_o) ──proj, +pos──▶ tokens
//! CT(h_position ← tokens) = z
//! x̂_k = G·out(z_k) + [t, r, (1 + G·gate(z_k)) ⊙ h]_last
//! ```

mod attention;
mod checkpoint;

pub use attention::{
    attention, attention_on_tape, cross_transformer, cross_transformer_on_tape, init_attention, init_cross_transformer,
    AttentionTrace,
};

use crate::bodymodel::{BodyTemplate, MotionSequence, PoseFrame, MOTION_DIM, POSE_DIM};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::scenenet::{
    ambient_context_on_tape, encode_scene_on_tape, gaze_features_from_weights, init_ambient_params, interpolation_weights, GazeTrack,
    Scene, SceneEncoderConfig, SceneFeatures, SceneGeometry, AMBIENT_PREFIX, MISSING_GAZE_PARAM,
};
use crate::synthgen::Episode;
use attention::{init_self_encoder, self_encoder_on_tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Past poses consumed per prediction.
pub const INPUT_FRAMES: usize = 6;
/// Future poses produced per prediction.
pub const HORIZON: usize = 10;

/// Prefix of the prediction transformer; its first layer's weights are
/// the exported attention map.
pub const PREDICTION_PREFIX: &str = "ct.pred";
/// Fixed multiplier on the zero-initialized output maps (`head.out`,
/// `head.gate`, `rnn.out`). Adam moves each weight by about `lr` per step,
/// so the gain sets how fast the outputs can reach pose-scale offsets.
pub const OUTPUT_GAIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoGaze,
    PointnetGlobal,
    Vanilla,
    RnnGaze,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoGaze,
        Variant::PointnetGlobal,
        Variant::Vanilla,
        Variant::RnnGaze,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGaze => "no_gaze",
            Variant::PointnetGlobal => "pointnet_global",
            Variant::Vanilla => "vanilla",
            Variant::RnnGaze => "rnn_gaze",
        }
    }

    fn uses_gaze(self) -> bool {
        self != Variant::NoGaze
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::contract(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub scene: SceneEncoderConfig,
    /// Latent width of every transformer; must equal the scene feature width.
    pub d_model: usize,
    pub heads: usize,
    /// Layers per cross-modal transformer.
    pub layers: usize,
    pub ffn_hidden: usize,
    /// Hidden widths of the per-vertex ambient MLP (`d_model → … → d_model`).
    pub ambient_hidden: Vec<usize>,
    /// Body vertices sampled for ambient context, evenly spaced over the template.
    pub ambient_vertices: usize,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
}

impl ModelConfig {
    /// Full-size widths: 256-D latent, 6 layers.
    pub fn large() -> Self {
        ModelConfig {
            scene: SceneEncoderConfig {
                sa1_centroids: 256,
                sa1_radius: 0.4,
                sa1_mlp: vec![64, 64, 128],
                sa2_centroids: 64,
                sa2_radius: 0.8,
                sa2_mlp: vec![128, 128, 256],
                fp2_mlp: vec![256, 256],
                fp1_mlp: vec![256, 256],
            },
            d_model: 256,
            heads: 4,
            layers: 6,
            ffn_hidden: 1024,
            ambient_hidden: vec![256],
            ambient_vertices: 64,
            rnn_hidden: 1024,
            rnn_layers: 3,
        }
    }

    /// Single-core training scale.
    pub fn desk() -> Self {
        ModelConfig {
            scene: SceneEncoderConfig {
                sa1_centroids: 256,
                sa1_radius: 0.4,
                sa1_mlp: vec![16, 32],
                sa2_centroids: 64,
                sa2_radius: 0.8,
                sa2_mlp: vec![32, 64],
                fp2_mlp: vec![64],
                fp1_mlp: vec![64],
            },
            d_model: 64,
            heads: 4,
            layers: 2,
            ffn_hidden: 128,
            ambient_hidden: vec![64],
            ambient_vertices: 16,
            rnn_hidden: 64,
            rnn_layers: 3,
        }
    }

    /// Width 16, two layers; sized for exhaustive gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            scene: SceneEncoderConfig {
                sa1_centroids: 16,
                sa1_radius: 0.8,
                sa1_mlp: vec![16],
                sa2_centroids: 4,
                sa2_radius: 2.0,
                sa2_mlp: vec![16],
                fp2_mlp: vec![16],
                fp1_mlp: vec![16],
            },
            d_model: 16,
            heads: 2,
            layers: 2,
            ffn_hidden: 32,
            ambient_hidden: vec![16],
            ambient_vertices: 8,
            rnn_hidden: 16,
            rnn_layers: 3,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "large" => Ok(Self::large()),
            "desk" => Ok(Self::desk()),
            "micro" => Ok(Self::micro()),
            other => Err(Error::contract(format!("unknown model preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.scene.feature_dim() != self.d_model {
            return Err(Error::contract(format!(
                "scene feature width {} must equal d_model {}",
                self.scene.feature_dim(),
                self.d_model
            )));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::contract(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads)));
        }
        if self.layers == 0 || self.ffn_hidden == 0 || self.rnn_hidden == 0 || self.rnn_layers == 0 {
            return Err(Error::contract("layer counts and widths must be positive"));
        }
        if self.ambient_hidden.contains(&0) || self.ambient_vertices == 0 {
            return Err(Error::contract("ambient widths and vertex count must be positive"));
        }
        Ok(())
    }

    fn ambient_layers(&self) -> usize {
        self.ambient_hidden.len() + 1
    }
}

/// All learned weights of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub config: ModelConfig,
    pub store: ParamStore,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        config.scene.init_params(&mut s, &mut rng)?;
        if variant != Variant::RnnGaze {
            s.add_linear("motion.embed", MOTION_DIM, d, &mut rng)?;
            let mut hidden = config.ambient_hidden.clone();
            hidden.push(d);
            init_ambient_params(&mut s, d, &hidden, &mut rng)?;
        }
        if variant.uses_gaze() {
            s.insert(MISSING_GAZE_PARAM, Tensor::zeros(&[d]))?;
        }
        if variant == Variant::PointnetGlobal {
            s.add_linear("gaze.linear", 3, d, &mut rng)?;
        }
        let ct = |s: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| init_cross_transformer(s, name, d, config.ffn_hidden, config.layers, rng);
        match variant {
            Variant::Full | Variant::PointnetGlobal | Variant::NoGaze => {
                ct(&mut s, "ct.scene", &mut rng)?;
                if variant != Variant::NoGaze {
                    ct(&mut s, "ct.gaze", &mut rng)?;
                    ct(&mut s, "ct.motion", &mut rng)?;
                }
                s.add_linear("fuse.proj", 3 * d, d, &mut rng)?;
                s.insert("fuse.pos", Tensor::normal(&[INPUT_FRAMES, d], 1.0, &mut rng))?;
            }
            Variant::Vanilla => {
                s.insert("vanilla.pos", Tensor::normal(&[3 * INPUT_FRAMES + 1, d], 1.0, &mut rng))?;
                init_self_encoder(&mut s, "vanilla.enc", d, config.ffn_hidden, config.layers, &mut rng)?;
            }
            Variant::RnnGaze => {
                let h = config.rnn_hidden;
                for l in 0..config.rnn_layers {
                    let input = if l == 0 { MOTION_DIM + d } else { h };
                    s.add_weight(&format!("rnn.{l}.wx"), input, h, &mut rng)?;
                    s.add_weight(&format!("rnn.{l}.wh"), h, h, &mut rng)?;
                    s.insert(format!("rnn.{l}.b"), Tensor::zeros(&[h]))?;
                }
                s.insert("rnn.out.w", Tensor::zeros(&[h, HORIZON * MOTION_DIM]))?;
                s.insert("rnn.out.b", Tensor::zeros(&[HORIZON * MOTION_DIM]))?;
            }
        }
        if variant != Variant::RnnGaze {
            s.insert("head.position", Tensor::normal(&[HORIZON, d], 1.0, &mut rng))?;
            ct(&mut s, PREDICTION_PREFIX, &mut rng)?;
            for (name, width) in [("head.out", MOTION_DIM), ("head.gate", POSE_DIM)] {
                s.insert(format!("{name}.w"), Tensor::zeros(&[d, width]))?;
                s.insert(format!("{name}.b"), Tensor::zeros(&[width]))?;
            }
        }
        Ok(ModelParams {
            variant,
            config: config.clone(),
            store: s,
        })
    }

    /// Scene encoding with parameters held constant.
    pub fn encode_scene(&self, scene: &Scene) -> Result<SceneFeatures> {
        crate::scenenet::encode_scene(scene, &self.store, &self.config.scene)
    }

    /// Full forward pass on `tape`; returns the `HORIZON × 38` predicted
    /// motion parameters.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        p: &Bound,
        per_point: Var,
        global: Var,
        ep: &PreparedEpisode,
        trace: &mut AttentionTrace,
    ) -> Result<Var> {
        let cfg = &self.config;
        let (h, l) = (cfg.heads, cfg.layers);
        let motion = tape.constant(ep.motion.clone());
        let last = tape.constant(Tensor::new(vec![1, MOTION_DIM], ep.last.motion_params().to_vec())?);
        let global_rows = tape.gather_rows(global, &[0; INPUT_FRAMES])?;

        let (delta, gate) = match self.variant {
            Variant::RnnGaze => {
                let f_g = gaze_features_from_weights(tape, p, per_point, &ep.gaze_weights)?;
                (self.rnn_on_tape(tape, p, motion, f_g)?, None)
            }
            variant => {
                let f_m = p.linear(tape, "motion.embed", motion)?;
                let (f_mv, f_g) = if variant == Variant::PointnetGlobal {
                    let pooled = p.mlp(tape, AMBIENT_PREFIX, cfg.ambient_layers(), global, true)?;
                    let f_mv = tape.gather_rows(pooled, &[0; INPUT_FRAMES])?;
                    (f_mv, Some(self.linear_gaze(tape, p, ep)?))
                } else {
                    let f_mv = ambient_context_on_tape(tape, p, cfg.ambient_layers(), per_point, &ep.vertex_weights, &ep.vertex_offsets)?;
                    let f_g = match variant.uses_gaze() {
                        true => Some(gaze_features_from_weights(tape, p, per_point, &ep.gaze_weights)?),
                        false => None,
                    };
                    (f_mv, f_g)
                };
                let latent = if variant == Variant::Vanilla {
                    let f_g = f_g.expect("vanilla uses gaze");
                    let seq = tape.concat_rows(&[f_m, f_g, f_mv, global])?;
                    let pos = p.get("vanilla.pos")?;
                    let seq = tape.add(seq, pos)?;
                    self_encoder_on_tape(tape, p, "vanilla.enc", h, l, seq, trace)?
                } else {
                    let (f_mg, f_gm) = fuse_on_tape(tape, p, h, l, f_m, f_g, f_mv, trace)?;
                    let tokens = tape.concat_cols(&[f_gm, f_mg, global_rows])?;
                    let tokens = p.linear(tape, "fuse.proj", tokens)?;
                    let pos = p.get("fuse.pos")?;
                    tape.add(tokens, pos)?
                };
                let queries = p.get("head.position")?;
                let out = cross_transformer_on_tape(tape, p, PREDICTION_PREFIX, h, l, queries, latent, trace)?;
                let delta = p.linear(tape, "head.out", out)?;
                let gate = p.linear(tape, "head.gate", out)?;
                (delta, Some(gate))
            }
        };
        let delta = tape.scale(delta, OUTPUT_GAIN)?;
        let carried = match gate {
            Some(g) => {
                let g = tape.scale(g, OUTPUT_GAIN)?;
                let one = tape.constant(Tensor::filled(&[1, POSE_DIM], 1.0));
                let g = tape.add(g, one)?;
                let root = tape.slice_cols(last, 0, MOTION_DIM - POSE_DIM)?;
                let root = tape.gather_rows(root, &[0; HORIZON])?;
                let pose = tape.slice_cols(last, MOTION_DIM - POSE_DIM, POSE_DIM)?;
                let pose = tape.mul(g, pose)?;
                tape.concat_cols(&[root, pose])?
            }
            None => last,
        };
        tape.add(delta, carried)
    }

    fn linear_gaze(&self, tape: &mut Tape, p: &Bound, ep: &PreparedEpisode) -> Result<Var> {
        let xyz = tape.constant(ep.gaze_xyz.clone());
        let projected = p.linear(tape, "gaze.linear", xyz)?;
        if ep.gaze_valid.iter().all(|&v| v) {
            return Ok(projected);
        }
        let missing = p.get(MISSING_GAZE_PARAM)?;
        let missing = tape.reshape(missing, vec![1, self.config.d_model])?;
        let rows = (0..INPUT_FRAMES)
            .map(|i| match ep.gaze_valid[i] {
                true => tape.gather_rows(projected, &[i]),
                false => Ok(missing),
            })
            .collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&rows)
    }

    fn rnn_on_tape(&self, tape: &mut Tape, p: &Bound, motion: Var, f_g: Var) -> Result<Var> {
        let cfg = &self.config;
        let inputs = tape.concat_cols(&[motion, f_g])?;
        let mut hidden: Vec<Var> = (0..cfg.rnn_layers).map(|_| tape.constant(Tensor::zeros(&[1, cfg.rnn_hidden]))).collect();
        for k in 0..INPUT_FRAMES {
            let mut x = tape.gather_rows(inputs, &[k])?;
            for (l, h) in hidden.iter_mut().enumerate() {
                let wx = p.get(&format!("rnn.{l}.wx"))?;
                let wh = p.get(&format!("rnn.{l}.wh"))?;
                let b = p.get(&format!("rnn.{l}.b"))?;
                let a = tape.matmul(x, wx)?;
                let r = tape.matmul(*h, wh)?;
                let s = tape.add(a, r)?;
                let s = tape.add(s, b)?;
                *h = tape.tanh(s)?;
                x = *h;
            }
        }
        let top = *hidden.last().expect("rnn_layers > 0");
        let out = p.linear(tape, "rnn.out", top)?;
        tape.reshape(out, vec![HORIZON, MOTION_DIM])
    }

    /// Prediction from precomputed scene features. Returns the future motion
    /// and every attention block's head-averaged weights.
    pub fn predict_prepared(&self, feats: &SceneFeatures, ep: &PreparedEpisode) -> Result<(MotionSequence, AttentionTrace)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let per_point = tape.constant(feats.per_point.clone());
        let global = tape.constant(Tensor::new(vec![1, feats.global.len()], feats.global.clone())?);
        let mut trace = AttentionTrace::default();
        let out = self.forward_on_tape(&mut tape, &bound, per_point, global, ep, &mut trace)?;
        Ok((ep.to_motion(tape.value(out))?, trace))
    }

    /// Predicts the `HORIZON` future poses of `episode`.
    pub fn predict(&self, episode: &Episode, template: &BodyTemplate, scene: &Scene) -> Result<MotionSequence> {
        let ep = PreparedEpisode::new(&self.config, template, scene, &episode.past, &episode.gaze)?;
        let feats = self.encode_scene(scene)?;
        Ok(self.predict_prepared(&feats, &ep)?.0)
    }

    /// [`ModelParams::predict`] after checking the parameters were built
    /// for `variant`.
    pub fn predict_variant(&self, episode: &Episode, variant: Variant, template: &BodyTemplate, scene: &Scene) -> Result<MotionSequence> {
        if variant != self.variant {
            return Err(Error::contract(format!("parameters are for variant {}, not {variant}", self.variant)));
        }
        self.predict(episode, template, scene)
    }

    /// First-layer cross-attention of the prediction transformer
    /// (`HORIZON × INPUT_FRAMES`, averaged over heads).
    pub fn attention_map(&self, episode: &Episode, template: &BodyTemplate, scene: &Scene) -> Result<Tensor> {
        if self.variant != Variant::Full {
            return Err(Error::contract("attention maps are exported for the full variant only"));
        }
        let ep = PreparedEpisode::new(&self.config, template, scene, &episode.past, &episode.gaze)?;
        let feats = self.encode_scene(scene)?;
        let (_, trace) = self.predict_prepared(&feats, &ep)?;
        trace
            .get(&format!("{PREDICTION_PREFIX}.0.attn"))
            .cloned()
            .ok_or_else(|| Error::contract("prediction transformer recorded no attention"))
    }
}

/// Bidirectional wiring: `f_ms = CT(f_mv ← f_m)`, `f_mg = CT(f_g ← f_ms)`,
/// `f_gm = CT(f_m ← f_g)`. Without gaze, `f_mg = f_ms` and `f_gm = 0`.
#[allow(clippy::too_many_arguments)]
pub fn fuse_on_tape(
    tape: &mut Tape,
    p: &Bound,
    heads: usize,
    layers: usize,
    f_m: Var,
    f_g: Option<Var>,
    f_mv: Var,
    trace: &mut AttentionTrace,
) -> Result<(Var, Var)> {
    let t = tape.value(f_m).rows();
    let lens = [Some(f_mv), f_g].into_iter().flatten().map(|v| tape.value(v).rows());
    if lens.into_iter().any(|n| n != t) {
        return Err(Error::contract("fusion inputs must share one sequence length"));
    }
    let f_ms = cross_transformer_on_tape(tape, p, "ct.scene", heads, layers, f_mv, f_m, trace)?;
    match f_g {
        Some(f_g) => {
            let f_mg = cross_transformer_on_tape(tape, p, "ct.gaze", heads, layers, f_g, f_ms, trace)?;
            let f_gm = cross_transformer_on_tape(tape, p, "ct.motion", heads, layers, f_m, f_g, trace)?;
            Ok((f_mg, f_gm))
        }
        None => {
            let d = tape.value(f_m).cols();
            let zeros = tape.constant(Tensor::zeros(&[t, d]));
            Ok((f_ms, zeros))
        }
    }
}

/// Standalone fusion on explicit `t × d` rows using the `ct.*` blocks of
/// `store`. Returns `(f_mg, f_gm)`.
pub fn fuse_bidirectional(f_m: &Tensor, f_g: &Tensor, f_mv: &Tensor, store: &ParamStore, heads: usize, layers: usize) -> Result<(Tensor, Tensor)> {
    if f_m.shape() != f_g.shape() || f_m.shape() != f_mv.shape() {
        return Err(Error::contract("fusion inputs must share one shape"));
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let (m, g, mv) = (tape.constant(f_m.clone()), tape.constant(f_g.clone()), tape.constant(f_mv.clone()));
    let (mg, gm) = fuse_on_tape(&mut tape, &bound, heads, layers, m, Some(g), mv, &mut AttentionTrace::default())?;
    Ok((tape.value(mg).clone(), tape.value(gm).clone()))
}

/// Parameter-free per-episode inputs: stacked motion parameters, vertex
/// and gaze interpolation weights.
#[derive(Debug, Clone)]
pub struct PreparedEpisode {
    pub motion: Tensor,
    pub last: PoseFrame,
    pub vertex_weights: Vec<Vec<(usize, f64)>>,
    pub vertex_offsets: Vec<usize>,
    pub gaze_weights: Vec<Option<Vec<(usize, f64)>>>,
    pub gaze_xyz: Tensor,
    pub gaze_valid: Vec<bool>,
}

impl PreparedEpisode {
    pub fn new(cfg: &ModelConfig, template: &BodyTemplate, scene: &Scene, past: &MotionSequence, gaze: &GazeTrack) -> Result<Self> {
        if past.len() != INPUT_FRAMES {
            return Err(Error::contract(format!("expected {INPUT_FRAMES} past frames, got {}", past.len())));
        }
        if gaze.points.len() != INPUT_FRAMES || gaze.valid.len() != INPUT_FRAMES {
            return Err(Error::contract(format!("expected {INPUT_FRAMES} gaze points with validity flags")));
        }
        let motion: Vec<f64> = past.frames.iter().flat_map(|f| f.motion_params()).collect();
        let nv = template.num_vertices();
        let k = cfg.ambient_vertices.min(nv);
        let picks: Vec<usize> = (0..k).map(|i| i * nv / k).collect();
        let mut vertex_weights = Vec::with_capacity(INPUT_FRAMES * k);
        let mut vertex_offsets = vec![0];
        for frame in &past.frames {
            let mesh = template.decode_pose(frame);
            vertex_weights.extend(picks.iter().map(|&v| interpolation_weights(&scene.points, mesh.vertices[v])));
            vertex_offsets.push(vertex_weights.len());
        }
        let gaze_weights = gaze
            .points
            .iter()
            .zip(&gaze.valid)
            .map(|(&g, &ok)| ok.then(|| interpolation_weights(&scene.points, g)))
            .collect();
        Ok(PreparedEpisode {
            motion: Tensor::new(vec![INPUT_FRAMES, MOTION_DIM], motion)?,
            last: past.last().clone(),
            vertex_weights,
            vertex_offsets,
            gaze_weights,
            gaze_xyz: Tensor::new(vec![INPUT_FRAMES, 3], gaze.points.iter().flatten().copied().collect())?,
            gaze_valid: gaze.valid.clone(),
        })
    }

    /// Rows of predicted `(t, r, h)` to frames carrying `β, p` forward.
    pub fn to_motion(&self, rows: &Tensor) -> Result<MotionSequence> {
        if rows.rows() != HORIZON || rows.cols() != MOTION_DIM {
            return Err(Error::contract(format!("prediction must be {HORIZON}×{MOTION_DIM}, got {:?}", rows.shape())));
        }
        let frames = (0..HORIZON)
            .map(|k| PoseFrame::from_motion_params(rows.row(k), &self.last))
            .collect::<Result<Vec<_>>>()?;
        MotionSequence::new(frames)
    }
}

/// Parameter-free geometry of a scene under `params`' encoder config.
pub fn scene_geometry(params: &ModelParams, scene: &Scene) -> Result<SceneGeometry> {
    SceneGeometry::build(scene, &params.config.scene)
}

/// Scene encoding on `tape` with `p` (used by training).
pub fn encode_on_tape(tape: &mut Tape, p: &Bound, params: &ModelParams, geom: &SceneGeometry) -> Result<(Var, Var)> {
    encode_scene_on_tape(tape, p, &params.config.scene, geom)
}
