//! L1 motion losses and the Adam training loop.

use crate::bodymodel::{canonicalize_axis_angle, BodyTemplate, MotionSequence, MOTION_DIM};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fusion::{AttentionTrace, ModelConfig, ModelParams, PreparedEpisode, Variant};
use crate::params::ParamStore;
use crate::scenenet::SceneGeometry;
use crate::synthgen::{Dataset, Split};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub trans: f64,
    pub ori: f64,
    pub pose: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            trans: 1.0,
            ori: 1.0,
            pose: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub trans: f64,
    pub ori: f64,
    pub pose: f64,
    pub total: f64,
}

fn check_lengths(pred: &MotionSequence, gt: &MotionSequence) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::contract(format!("prediction has {} frames, ground truth {}", pred.len(), gt.len())));
    }
    Ok(())
}

fn mean_l1<F: Fn(&crate::bodymodel::PoseFrame) -> Vec<f64>>(pred: &MotionSequence, gt: &MotionSequence, part: F) -> Result<f64> {
    check_lengths(pred, gt)?;
    let sum: f64 = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(a, b)| part(a).iter().zip(part(b)).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `(1/T) Σ_k ‖t̂_k − t_k‖₁`
pub fn loss_translation(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    mean_l1(pred, gt, |f| f.t.to_vec())
}

/// `(1/T) Σ_k ‖canon(r̂_k) − canon(r_k)‖₁`
pub fn loss_orientation(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    mean_l1(pred, gt, |f| canonicalize_axis_angle(f.r).to_vec())
}

/// `(1/T) Σ_k ‖ĥ_k − h_k‖₁`
pub fn loss_pose(pred: &MotionSequence, gt: &MotionSequence) -> Result<f64> {
    mean_l1(pred, gt, |f| f.h.to_vec())
}

pub fn loss_total(pred: &MotionSequence, gt: &MotionSequence, w: &LossWeights) -> Result<LossTerms> {
    let (trans, ori, pose) = (loss_translation(pred, gt)?, loss_orientation(pred, gt)?, loss_pose(pred, gt)?);
    Ok(LossTerms {
        trans,
        ori,
        pose,
        total: w.trans * trans + w.ori * ori + w.pose * pose,
    })
}

/// The three losses of a `T × 38` prediction on `tape`; returns
/// `(total, [trans, ori, pose])`.
pub fn losses_on_tape(tape: &mut Tape, pred: Var, gt: &MotionSequence, w: &LossWeights) -> Result<(Var, [Var; 3])> {
    let t = gt.len();
    if tape.value(pred).rows() != t || tape.value(pred).cols() != MOTION_DIM {
        return Err(Error::contract(format!("prediction shape {:?} does not match {t} frames", tape.shape(pred))));
    }
    let mut gt_rows = Vec::with_capacity(t * MOTION_DIM);
    for f in &gt.frames {
        gt_rows.extend_from_slice(&f.t);
        gt_rows.extend_from_slice(&canonicalize_axis_angle(f.r));
        gt_rows.extend_from_slice(&f.h);
    }
    let gt = Tensor::new(vec![t, MOTION_DIM], gt_rows)?;
    let term = |tape: &mut Tape, start: usize, len: usize, canon: bool| -> Result<Var> {
        let p = tape.slice_cols(pred, start, len)?;
        let p = if canon { tape.canon_axis_angle(p)? } else { p };
        let g = Tensor::new(vec![t, len], (0..t).flat_map(|k| gt.row(k)[start..start + len].to_vec()).collect())?;
        let g = tape.constant(g);
        let d = tape.sub(p, g)?;
        let a = tape.abs(d)?;
        let s = tape.sum(a)?;
        tape.scale(s, 1.0 / t as f64)
    };
    let lt = term(tape, 0, 3, false)?;
    let lo = term(tape, 3, 3, true)?;
    let lp = term(tape, 6, MOTION_DIM - 6, false)?;
    let a = tape.scale(lt, w.trans)?;
    let b = tape.scale(lo, w.ori)?;
    let c = tape.scale(lp, w.pose)?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok((total, [lt, lo, lp]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub model: ModelConfig,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Fraction of the run, at the end, over which the learning rate
    /// decays linearly to 1% of `lr`.
    pub decay_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            lr: 1e-4,
            steps: 2000,
            batch_size: 8,
            seed: 0,
            variant: Variant::Full,
            model: ModelConfig::desk(),
            checkpoint_every: 0,
            clip_norm: None,
            decay_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if !(w.trans >= 0.0 && w.ori >= 0.0 && w.pose >= 0.0) {
            return Err(Error::contract("loss weights must be nonnegative"));
        }
        if !(self.lr > 0.0) || self.steps == 0 || self.batch_size == 0 {
            return Err(Error::contract("learning rate, step count, and batch size must be positive"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::contract("clip norm must be positive"));
        }
        if !(0.0..=1.0).contains(&self.decay_fraction) {
            return Err(Error::contract("decay fraction must lie in [0, 1]"));
        }
        self.model.validate()
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let start = (1.0 - self.decay_fraction) * self.steps as f64;
        let x = step as f64;
        if x < start {
            return self.lr;
        }
        let left = 1.0 - (x - start) / (self.steps as f64 - start);
        self.lr * left.max(0.01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossTerms,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// Mean losses over the whole training split with the final parameters.
    pub final_train: LossTerms,
    /// Excluded from equality and from serialized logs.
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl PartialEq for TrainLog {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps && self.final_train == other.final_train
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (_, t)) in store.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for (j, x) in t.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                *x -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Training episodes with their parameter-free geometry.
pub struct PreparedSplit<'a> {
    pub data: &'a Dataset,
    pub indices: Vec<usize>,
    pub episodes: Vec<PreparedEpisode>,
    pub scene_of: Vec<usize>,
    pub geometry: Vec<SceneGeometry>,
}

impl<'a> PreparedSplit<'a> {
    pub fn new(data: &'a Dataset, split: Split, model: &ModelConfig, template: &BodyTemplate) -> Result<Self> {
        let indices: Vec<usize> = (0..data.episodes.len()).filter(|&i| data.episodes[i].split == split).collect();
        let mut scene_index = BTreeMap::new();
        let mut geometry = Vec::new();
        let mut scene_of = Vec::with_capacity(indices.len());
        let mut episodes = Vec::with_capacity(indices.len());
        for &i in &indices {
            let e = &data.episodes[i];
            let scene = data.scene(&e.scene_id)?;
            let k = match scene_index.get(&e.scene_id) {
                Some(&k) => k,
                None => {
                    geometry.push(SceneGeometry::build(scene, &model.scene)?);
                    scene_index.insert(e.scene_id.clone(), geometry.len() - 1);
                    geometry.len() - 1
                }
            };
            scene_of.push(k);
            episodes.push(PreparedEpisode::new(model, template, scene, &e.past, &e.gaze)?);
        }
        Ok(PreparedSplit {
            data,
            indices,
            episodes,
            scene_of,
            geometry,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Mean loss over `batch` (positions into `split`) recorded on `tape` with
/// `params` bound as trainable leaves when `trainable`.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    trainable: bool,
    split: &PreparedSplit,
    batch: &[usize],
    w: &LossWeights,
) -> Result<(Var, [Var; 3], crate::params::Bound)> {
    let bound = params.store.bind(tape, trainable);
    let mut encoded: BTreeMap<usize, (Var, Var)> = BTreeMap::new();
    let mut totals = Vec::with_capacity(batch.len());
    let mut terms: [Vec<Var>; 3] = Default::default();
    for &b in batch {
        let k = split.scene_of[b];
        let (fp, fo) = match encoded.get(&k) {
            Some(&v) => v,
            None => {
                let v = crate::fusion::encode_on_tape(tape, &bound, params, &split.geometry[k])?;
                encoded.insert(k, v);
                v
            }
        };
        let pred = params.forward_on_tape(tape, &bound, fp, fo, &split.episodes[b], &mut AttentionTrace::default())?;
        let gt = &split.data.episodes[split.indices[b]].future;
        let (total, parts) = losses_on_tape(tape, pred, gt, w)?;
        totals.push(total);
        for (acc, p) in terms.iter_mut().zip(parts) {
            acc.push(p);
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let mean = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let cat = tape.concat_rows(vars)?;
        let s = tape.sum(cat)?;
        tape.scale(s, scale)
    };
    let total = mean(tape, &totals)?;
    let parts = [mean(tape, &terms[0])?, mean(tape, &terms[1])?, mean(tape, &terms[2])?];
    Ok((total, parts, bound))
}

fn terms_of(tape: &Tape, total: Var, parts: [Var; 3]) -> LossTerms {
    LossTerms {
        trans: tape.value(parts[0]).item(),
        ori: tape.value(parts[1]).item(),
        pose: tape.value(parts[2]).item(),
        total: tape.value(total).item(),
    }
}

/// Mean losses of `params` over a prepared split, in chunks of `chunk`.
pub fn evaluate_loss(params: &ModelParams, split: &PreparedSplit, w: &LossWeights, chunk: usize) -> Result<LossTerms> {
    let mut acc = LossTerms::default();
    let positions: Vec<usize> = (0..split.len()).collect();
    for batch in positions.chunks(chunk.max(1)) {
        let mut tape = Tape::new();
        let (total, parts, _) = batch_loss_on_tape(&mut tape, params, false, split, batch, w)?;
        let t = terms_of(&tape, total, parts);
        let f = batch.len() as f64;
        acc.trans += t.trans * f;
        acc.ori += t.ori * f;
        acc.pose += t.pose * f;
        acc.total += t.total * f;
    }
    let n = split.len() as f64;
    Ok(LossTerms {
        trans: acc.trans / n,
        ori: acc.ori / n,
        pose: acc.pose / n,
        total: acc.total / n,
    })
}

fn batch_error(step: usize, split: &PreparedSplit, batch: &[usize]) -> Error {
    Error::NonFiniteLoss {
        step,
        batch: batch.iter().map(|&b| split.indices[b]).collect(),
    }
}

/// Fits a fresh `config.variant` model to the training split.
/// Checkpoints `ckpt_step<N>.gimo` go to `checkpoint_dir` when given.
pub fn train(data: &Dataset, config: &TrainConfig, template: &BodyTemplate, checkpoint_dir: Option<&Path>) -> Result<(ModelParams, TrainLog)> {
    let params = ModelParams::init(&config.model, config.variant, config.seed)?;
    train_from(params, data, config, template, checkpoint_dir)
}

/// [`train`] starting from existing parameters.
pub fn train_from(
    mut params: ModelParams,
    data: &Dataset,
    config: &TrainConfig,
    template: &BodyTemplate,
    checkpoint_dir: Option<&Path>,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    let started = Instant::now();
    let split = PreparedSplit::new(data, Split::Train, &params.config, template)?;
    if split.is_empty() {
        return Err(Error::contract("dataset has no training episodes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..split.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(&params.store, config.lr);
    let mut steps = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(split.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut tape = Tape::new();
        let (total, parts, bound) = match batch_loss_on_tape(&mut tape, &params, true, &split, &batch, &config.weights) {
            Ok(v) => v,
            Err(Error::Evaluation(_)) => return Err(batch_error(step, &split, &batch)),
            Err(e) => return Err(e),
        };
        let loss = terms_of(&tape, total, parts);
        if !loss.total.is_finite() {
            return Err(batch_error(step, &split, &batch));
        }
        tape.backward(total)?;
        let mut grads = bound.grads(&tape, &params.store);
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(batch_error(step, &split, &batch));
        }
        if let Some(c) = config.clip_norm {
            let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                let s = c / norm;
                grads.iter_mut().flatten().for_each(|g| *g *= s);
            }
        }
        adam.lr = config.lr_at(step);
        adam.step(&mut params.store, &grads);
        steps.push(StepRecord { step, loss });
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
                params.save(&dir.join(format!("ckpt_step{}.gimo", step + 1)))?;
            }
        }
    }
    let final_train = evaluate_loss(&params, &split, &config.weights, config.batch_size)?;
    Ok((
        params,
        TrainLog {
            steps,
            final_train,
            wall_clock: started.elapsed(),
        },
    ))
}

/// Record written next to a trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub config: TrainConfig,
    pub dataset_hash: String,
    pub checkpoint_hash: String,
    pub final_train: LossTerms,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bodymodel::PoseFrame;

    fn seq(n: usize) -> MotionSequence {
        MotionSequence::new(vec![PoseFrame::default(); n]).unwrap()
    }

    #[test]
    fn loss_examples() {
        let gt = seq(10);
        assert_eq!(loss_total(&gt, &gt, &LossWeights::default()).unwrap(), LossTerms::default());
        let mut pred = gt.clone();
        pred.frames[3].t[0] = 0.5;
        assert!((loss_translation(&pred, &gt).unwrap() - 0.05).abs() < 1e-15);
        pred.frames[7].h[4] = 0.3;
        assert!((loss_pose(&pred, &gt).unwrap() - 0.03).abs() < 1e-15);
        pred.frames[2].r[1] = 0.2;
        assert!((loss_orientation(&pred, &gt).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(loss_orientation(&pred, &gt).unwrap(), loss_orientation(&gt, &pred).unwrap());
        assert!(loss_translation(&seq(3), &gt).is_err());
    }

    #[test]
    fn loss_weights_isolate_terms() {
        let gt = seq(10);
        let mut pred = gt.clone();
        pred.frames[0].t = [0.1, -0.2, 0.3];
        pred.frames[1].r = [0.0, 0.4, 0.0];
        pred.frames[2].h[0] = 0.7;
        let base = loss_total(&pred, &gt, &LossWeights::default()).unwrap();
        assert_eq!(base.total, base.trans + base.ori + base.pose);
        let zero = LossWeights {
            trans: 0.0,
            ori: 0.0,
            pose: 0.0,
        };
        assert_eq!(loss_total(&pred, &gt, &zero).unwrap().total, 0.0);
        let doubled = loss_total(&pred, &gt, &LossWeights { trans: 2.0, ..LossWeights::default() }).unwrap();
        assert!((doubled.total - base.total - base.trans).abs() < 1e-15);
    }

    #[test]
    fn orientation_loss_ignores_full_turns() {
        let gt = seq(2);
        let mut pred = gt.clone();
        pred.frames[0].r = [0.0, 0.0, 2.0 * std::f64::consts::PI];
        assert!(loss_orientation(&pred, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn tape_losses_match_direct_evaluation() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let frames = |rng: &mut ChaCha8Rng| {
                let f = (0..10)
                    .map(|_| {
                        let p: Vec<f64> = (0..MOTION_DIM).map(|_| rng.random_range(-4.0..4.0)).collect();
                        PoseFrame::from_motion_params(&p, &PoseFrame::default()).unwrap()
                    })
                    .collect();
                MotionSequence::new(f).unwrap()
            };
            let (pred, gt) = (frames(&mut rng), frames(&mut rng));
            let w = LossWeights {
                trans: 0.5,
                ori: 1.5,
                pose: 2.0,
            };
            let mut tape = Tape::new();
            let rows: Vec<f64> = pred.frames.iter().flat_map(|f| f.motion_params()).collect();
            let p = tape.param(Tensor::new(vec![10, MOTION_DIM], rows).unwrap());
            let (total, parts) = losses_on_tape(&mut tape, p, &gt, &w).unwrap();
            let direct = loss_total(&pred, &gt, &w).unwrap();
            assert!((tape.value(total).item() - direct.total).abs() < 1e-12);
            assert!((tape.value(parts[0]).item() - direct.trans).abs() < 1e-12);
            assert!((tape.value(parts[1]).item() - direct.ori).abs() < 1e-12);
            assert!((tape.value(parts[2]).item() - direct.pose).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()).unwrap();
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &[vec![3.0, -0.5]]);
        let x = store.get("x").unwrap().data();
        assert!((x[0] - 0.9).abs() < 1e-8 && (x[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.lr = 0.0;
        assert!(c.validate().is_err());
        c.lr = 1e-3;
        c.weights.ori = -1.0;
        assert!(c.validate().is_err());
    }
}
