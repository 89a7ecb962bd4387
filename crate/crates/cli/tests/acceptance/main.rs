//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion; exits nonzero when any fails.
//!
//! `cargo test --test acceptance -- 2 3` runs only the listed criteria.

mod oracles;

use clap::Parser;
use gimo_core::bodymodel::{BodyTemplate, MotionSequence, PoseFrame, Vec3, HAND_DIM, SHAPE_DIM};
use gimo_core::diffcore::{analytic_gradients, grad_check_many, relative_error, GradCheckReport, Tape, Tensor, Var};
use gimo_core::evalkit::{evaluate, MetricRow};
use gimo_core::fusion::{
    attention, cross_transformer, encode_on_tape, init_attention, init_cross_transformer, scene_geometry, AttentionTrace,
    ModelConfig, ModelParams, PreparedEpisode, Variant, HORIZON,
};
use gimo_core::params::{Bound, ParamStore};
use gimo_core::scenenet::{ambient_context, init_ambient_params, interpolate_features, SceneFeatures};
use gimo_core::synthgen::{build_dataset, generate_scene, Dataset, GenConfig, Layout, Split};
use gimo_core::trainer::{loss_orientation, loss_pose, loss_total, loss_translation, losses_on_tape, train, LossWeights, TrainConfig};
use gimo_core::{Result, Scene};
use oracles::Mat;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::{Duration, Instant};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Criterion = (usize, &'static str, u64, fn() -> Verdict);

const CRITERIA: [Criterion; 8] = [
    (1, "gradient fidelity", 60, gradient_fidelity),
    (2, "oracles", 30, oracle_agreement),
    (3, "structural invariants", 60, structural_invariants),
    (4, "overfit", 300, overfit),
    (5, "gaze disambiguation", 1800, gaze_disambiguation),
    (6, "ablation ordering", 7200, ablation_ordering),
    (7, "noise ceiling", 7200, noise_ceiling),
    (8, "determinism", 600, determinism),
];

fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, budget, run) in CRITERIA {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let v = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = v.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {n} {name}: {} | {} | {:.1}s of {budget}s",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, r)
}

/// Entries at least 0.1 away from zero.
fn off_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| r.random_range(0.1..1.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced at least 0.05 apart, shuffled.
fn separated(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 + r.random_range(0.0..0.05)).collect();
    data.shuffle(r);
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Axis-angle rows whose norms stay 0.1 away from multiples of π.
fn axis_angles(rows: usize, r: &mut ChaCha8Rng) -> Tensor {
    let pi = std::f64::consts::PI;
    let mut data = Vec::with_capacity(rows * 3);
    for _ in 0..rows {
        let axis: Vec3 = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt().max(1e-3);
        let theta = r.random_range(0..3) as f64 * pi + r.random_range(0.1..pi - 0.1);
        data.extend(axis.map(|a| a / n * theta));
    }
    Tensor::new(vec![rows, 3], data).unwrap()
}

// ── 1 ───────────────────────────────────────────────────────────────

type Primitive = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One case per primitive: its inputs and a scalar objective that
/// contracts the primitive's output with a fixed random tensor.
fn primitive_cases(r: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor>, Primitive)> {
    let (a, b, c) = (r.random_range(2..5), r.random_range(2..5), r.random_range(2..5));
    let mut cases: Vec<(&'static str, Vec<Tensor>, Primitive)> = Vec::new();
    let mut push = |name: &'static str, inputs: Vec<Tensor>, f: Primitive| cases.push((name, inputs, f));
    push("matmul", vec![random_tensor(&[a, b], r), random_tensor(&[b, c], r)], Box::new(|t, v| t.matmul(v[0], v[1])));
    push("transpose", vec![random_tensor(&[a, b], r)], Box::new(|t, v| t.transpose(v[0])));
    push(
        "linear",
        vec![random_tensor(&[a, b], r), random_tensor(&[b, c], r), random_tensor(&[c], r)],
        Box::new(|t, v| t.linear(v[0], v[1], v[2])),
    );
    push("add", vec![random_tensor(&[a, b], r), random_tensor(&[a, b], r)], Box::new(|t, v| t.add(v[0], v[1])));
    push("add_row_broadcast", vec![random_tensor(&[a, b], r), random_tensor(&[1, b], r)], Box::new(|t, v| t.add(v[0], v[1])));
    push("sub", vec![random_tensor(&[a, b], r), random_tensor(&[a, b], r)], Box::new(|t, v| t.sub(v[0], v[1])));
    push("mul", vec![random_tensor(&[a, b], r), random_tensor(&[a, b], r)], Box::new(|t, v| t.mul(v[0], v[1])));
    let k = r.random_range(-2.0..2.0);
    push("scale", vec![random_tensor(&[a, b], r)], Box::new(move |t, v| t.scale(v[0], k)));
    push("relu", vec![off_zero(&[a, b], r)], Box::new(|t, v| t.relu(v[0])));
    push("tanh", vec![random_tensor(&[a, b], r)], Box::new(|t, v| t.tanh(v[0])));
    push("abs", vec![off_zero(&[a, b], r)], Box::new(|t, v| t.abs(v[0])));
    push("softmax_rows", vec![random_tensor(&[a, b], r)], Box::new(|t, v| t.softmax(v[0], 1)));
    push("softmax_cols", vec![random_tensor(&[a, b], r)], Box::new(|t, v| t.softmax(v[0], 0)));
    push(
        "layer_norm",
        vec![random_tensor(&[a, b + 1], r), random_tensor(&[b + 1], r), random_tensor(&[b + 1], r)],
        Box::new(|t, v| t.layer_norm(v[0], v[1], v[2])),
    );
    push("sum", vec![random_tensor(&[a, b], r)], Box::new(|t, v| t.sum(v[0])));
    push("mean", vec![random_tensor(&[a, b], r)], Box::new(|t, v| t.mean(v[0])));
    push("reshape", vec![random_tensor(&[a, b], r)], Box::new(move |t, v| t.reshape(v[0], vec![b, a])));
    let start = r.random_range(0..b);
    push("slice_cols", vec![random_tensor(&[a, b], r)], Box::new(move |t, v| t.slice_cols(v[0], start, b - start)));
    push(
        "concat_cols",
        vec![random_tensor(&[a, b], r), random_tensor(&[a, c], r)],
        Box::new(|t, v| t.concat_cols(&[v[0], v[1]])),
    );
    push(
        "concat_rows",
        vec![random_tensor(&[a, b], r), random_tensor(&[c, b], r)],
        Box::new(|t, v| t.concat_rows(&[v[0], v[1]])),
    );
    let index: Vec<usize> = (0..a + 2).map(|_| r.random_range(0..a)).collect();
    push("gather_rows", vec![random_tensor(&[a, b], r)], Box::new(move |t, v| t.gather_rows(v[0], &index)));
    let n = a + c;
    let cut = r.random_range(1..n);
    push("segment_max", vec![separated(&[n, b], r)], Box::new(move |t, v| t.segment_max(v[0], &[0, cut, n])));
    let blend: Vec<Vec<(usize, f64)>> = (0..c)
        .map(|_| {
            let raw: Vec<f64> = (0..3).map(|_| r.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|w| (r.random_range(0..a), w / s)).collect()
        })
        .collect();
    push("blend_rows", vec![random_tensor(&[a, b], r)], Box::new(move |t, v| t.blend_rows(v[0], &blend)));
    push("canon_axis_angle", vec![axis_angles(a, r)], Box::new(|t, v| t.canon_axis_angle(v[0])));

    let contract = |seed: u64, f: Primitive| -> Primitive {
        Box::new(move |t: &mut Tape, v: &[Var]| {
            let out = f(t, v)?;
            let shape = t.shape(out).to_vec();
            let w = t.constant(random_tensor(&shape, &mut rng(seed)));
            let m = t.mul(out, w)?;
            t.sum(m)
        })
    };
    let salt = r.random::<u64>();
    cases.into_iter().enumerate().map(|(i, (n, x, f))| (n, x, contract(salt ^ i as u64, f))).collect()
}

fn small_config() -> GenConfig {
    GenConfig {
        points: 64,
        object_points: 16,
        objects_min: 2,
        objects_max: 2,
        known_scenes: 2,
        new_scenes: 0,
        train: 8,
        test_known: 0,
        test_new: 0,
        ..GenConfig::default()
    }
}

/// Micro model with every parameter moved off its initial value so that
/// zero-initialized output maps pass gradient to the whole network.
fn perturbed(v: Variant, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(&ModelConfig::micro(), v, seed).unwrap();
    let mut r = rng(!seed);
    for (_, t) in p.store.iter_mut() {
        t.data_mut().iter_mut().for_each(|x| *x += r.random_range(-0.05..0.05));
    }
    p
}

/// Target a fixed offset away from the model's own prediction, one sign per
/// channel for every frame: the loss stays small and far from its kinks,
/// and no channel's sign terms cancel to an exact zero.
fn nearby_target(pred: &MotionSequence, r: &mut ChaCha8Rng) -> MotionSequence {
    let mut gt = pred.clone();
    let signs: Vec<f64> = (0..38).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    for f in gt.frames.iter_mut() {
        for (x, s) in f.t.iter_mut().chain(f.r.iter_mut()).chain(f.h.iter_mut()).zip(&signs) {
            *x += s * r.random_range(0.005..0.01);
        }
    }
    gt
}

/// Central difference along one random unit direction per parameter tensor,
/// against the analytic directional derivative. Single coordinates of the
/// full pass can have derivatives below the forward roundoff, so the step
/// grows from `step` (up to 1e-3) when the derivative along `u` is tiny.
fn model_check(data: &Dataset, seed: u64, step: f64) -> Result<GradCheckReport> {
    let template = BodyTemplate::standard();
    let v = Variant::ALL[seed as usize % Variant::ALL.len()];
    let params = perturbed(v, seed);
    let e = &data.episodes[seed as usize % data.episodes.len()];
    let scene = data.scene(&e.scene_id)?;
    let geom = scene_geometry(&params, scene)?;
    let ep = PreparedEpisode::new(&params.config, &template, scene, &e.past, &e.gaze)?;
    let mut r = rng(seed ^ 0x5eed);
    let (pred, _) = params.predict_prepared(&params.encode_scene(scene)?, &ep)?;
    let gt = nearby_target(&pred, &mut r);
    let inputs: Vec<Tensor> = params.store.iter().map(|(_, t)| t.clone()).collect();
    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let bound = Bound::from_vars(&params.store, vars)?;
        let (fp, fo) = encode_on_tape(tape, &bound, &params, &geom)?;
        let pred = params.forward_on_tape(tape, &bound, fp, fo, &ep, &mut AttentionTrace::default())?;
        Ok(losses_on_tape(tape, pred, &gt, &LossWeights::default())?.0)
    };
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let (_, grads) = analytic_gradients(&f, &inputs)?;
    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, worst: (0, 0), checked: 0, pass: true };
    let mut work = inputs.clone();
    for (i, t) in inputs.iter().enumerate() {
        let u: Vec<f64> = (0..t.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u: Vec<f64> = u.iter().map(|x| x / norm).collect();
        let analytic: f64 = grads[i].iter().zip(&u).map(|(g, d)| g * d).sum();
        let h = (1e-10 / analytic.abs()).clamp(step, 1e-3);
        let mut shifted = |sign: f64| -> Result<f64> {
            work[i].data_mut().iter_mut().zip(t.data().iter().zip(&u)).for_each(|(w, (x, d))| *w = x + sign * h * d);
            let v = eval(&work);
            work[i] = t.clone();
            v
        };
        let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
        let rel = relative_error(analytic, numeric);
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = (i, 0);
        }
    }
    report.pass = report.max_rel_err < 1e-4;
    Ok(report)
}

fn gradient_fidelity() -> Verdict {
    const SEEDS: u64 = 100;
    const STEP: f64 = 1e-5;
    const MODEL_STEP: f64 = 1e-5;
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut note = |name: String, rep: Result<GradCheckReport>| {
        let rep = match rep {
            Ok(rep) => rep,
            Err(e) => return failures.push(format!("{name}: {e}")),
        };
        checked += rep.checked;
        if rep.max_rel_err > worst.0 {
            worst = (rep.max_rel_err, name.clone());
        }
        if !rep.pass {
            failures.push(format!("{name} ({:.2e})", rep.max_rel_err));
        }
    };
    for seed in 0..SEEDS {
        for (name, inputs, f) in primitive_cases(&mut rng(seed)) {
            note(format!("{name}#{seed}"), grad_check_many(f, &inputs, STEP, 1e-4, None));
        }
    }
    let data = build_dataset(&small_config()).unwrap();
    for seed in 0..SEEDS {
        let v = Variant::ALL[seed as usize % Variant::ALL.len()];
        note(format!("model[{v}]#{seed}"), model_check(&data, seed, MODEL_STEP));
    }
    let detail = format!("{checked} checks, worst rel err {:.2e} at {}", worst.0, worst.1);
    match failures.is_empty() {
        true => verdict(true, detail),
        false => verdict(false, format!("{detail}; {} failing: {}", failures.len(), failures.join(", "))),
    }
}

// ── 2 ───────────────────────────────────────────────────────────────

fn rows(n: usize, d: usize, r: &mut ChaCha8Rng) -> Mat {
    (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

fn max_diff(t: &Tensor, m: &Mat) -> f64 {
    assert_eq!((t.rows(), t.cols()), (m.len(), m[0].len()), "shape");
    oracles::mat(t).iter().flatten().zip(m.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn vec_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Layer-norm gains and biases moved off 1 and 0.
fn jitter_norms(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    for (name, t) in store.iter_mut() {
        if name.ends_with(".gain") || name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|x| *x += r.random_range(-0.3..0.3));
        }
    }
}

fn random_scene(n: usize, r: &mut ChaCha8Rng) -> Scene {
    let pts: Vec<Vec3> = (0..n).map(|_| std::array::from_fn(|_| r.random_range(-2.0..2.0))).collect();
    Scene::unlabeled("s", pts).unwrap()
}

fn random_sequence(r: &mut ChaCha8Rng) -> MotionSequence {
    let frames = (0..HORIZON)
        .map(|_| PoseFrame {
            t: std::array::from_fn(|_| r.random_range(-3.0..3.0)),
            r: std::array::from_fn(|_| r.random_range(-6.0..6.0)),
            h: std::array::from_fn(|_| r.random_range(-2.0..2.0)),
            beta: [0.0; SHAPE_DIM],
            p: [0.0; HAND_DIM],
        })
        .collect();
    MotionSequence::new(frames).unwrap()
}

fn oracle_agreement() -> Verdict {
    const INSTANCES: u64 = 25;
    let mut worst = [0.0f64; 5];
    for seed in 0..INSTANCES {
        let mut r = rng(1000 + seed);
        let heads = [1, 2, 4][seed as usize % 3];
        let d = heads * r.random_range(1..4);
        let (lq, lk) = (r.random_range(1..7), r.random_range(1..9));

        let mut s = ParamStore::new();
        init_attention(&mut s, "a", d, d, d, &mut r).unwrap();
        let (q, k, v) = (rows(lq, d, &mut r), rows(lk, d, &mut r), rows(lk, d, &mut r));
        let (out, w) = attention(&q, &k, &v, &s, "a", heads).unwrap();
        let (o_out, o_w) = oracles::attention(&q, &k, &v, &s, "a", heads);
        worst[0] = worst[0].max(max_diff(&out, &o_out)).max(max_diff(&w, &o_w));

        let d = d.max(2);
        let layers = 1 + seed as usize % 3;
        let mut s = ParamStore::new();
        init_cross_transformer(&mut s, "ct", d, 2 * d, layers, &mut r).unwrap();
        jitter_norms(&mut s, &mut r);
        let (q, x) = (rows(lq, d, &mut r), rows(lk, d, &mut r));
        let heads = if d % heads == 0 { heads } else { 1 };
        let out = cross_transformer(&q, &x, &s, "ct", heads, layers).unwrap();
        worst[1] = worst[1].max(max_diff(&out, &oracles::cross_transformer(&q, &x, &s, "ct", heads, layers)));

        let n = r.random_range(16..60);
        let scene = random_scene(n, &mut r);
        let dp = r.random_range(1..6);
        let fm = rows(n, dp, &mut r);
        let feats = SceneFeatures {
            per_point: Tensor::from_rows(&fm).unwrap(),
            global: vec![],
        };
        let mut queries: Vec<Vec3> = (0..6).map(|_| std::array::from_fn(|_| r.random_range(-2.5..2.5))).collect();
        queries.push(scene.points[r.random_range(0..n)]);
        for q in &queries {
            let got = interpolate_features(&feats, &scene, *q);
            worst[2] = worst[2].max(vec_diff(&got, &oracles::interpolate(&scene.points, &fm, *q)));
        }

        let widths: Vec<usize> = (0..r.random_range(1..4)).map(|_| r.random_range(2..7)).collect();
        let mut s = ParamStore::new();
        init_ambient_params(&mut s, dp, &widths, &mut r).unwrap();
        let verts: Vec<Vec3> = (0..r.random_range(1..10)).map(|_| std::array::from_fn(|_| r.random_range(-2.0..2.0))).collect();
        let got = ambient_context(&verts, &feats, &scene, &s, widths.len()).unwrap();
        worst[3] = worst[3].max(vec_diff(&got, &oracles::ambient_context(&verts, &scene, &fm, &s, widths.len())));

        let (pred, gt) = (random_sequence(&mut r), random_sequence(&mut r));
        let w = LossWeights {
            trans: r.random_range(0.0..2.0),
            ori: r.random_range(0.0..2.0),
            pose: r.random_range(0.0..2.0),
        };
        let (lt, lo, lp) = (oracles::loss_translation(&pred, &gt), oracles::loss_orientation(&pred, &gt), oracles::loss_pose(&pred, &gt));
        let total = w.trans * lt + w.ori * lo + w.pose * lp;
        let terms = loss_total(&pred, &gt, &w).unwrap();
        let mut tape = Tape::new();
        let rows: Vec<f64> = pred.frames.iter().flat_map(|f| f.motion_params()).collect();
        let pv = tape.constant(Tensor::new(vec![HORIZON, rows.len() / HORIZON], rows).unwrap());
        let (on_tape, _) = losses_on_tape(&mut tape, pv, &gt, &w).unwrap();
        for (a, b) in [
            (loss_translation(&pred, &gt).unwrap(), lt),
            (loss_orientation(&pred, &gt).unwrap(), lo),
            (loss_pose(&pred, &gt).unwrap(), lp),
            (terms.total, total),
            (tape.value(on_tape).item(), total),
        ] {
            worst[4] = worst[4].max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let tol = [1e-10, 1e-10, 1e-10, 1e-10, 1e-12];
    let names = ["attention", "cross_transformer", "interpolation", "ambient_context", "losses"];
    let pass = worst.iter().zip(tol).all(|(w, t)| *w <= t);
    let detail = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(pass, format!("{INSTANCES} instances each; max deviation {detail}"))
}

// ── 3 ───────────────────────────────────────────────────────────────

fn bits(m: &MotionSequence) -> Vec<u64> {
    m.frames.iter().flat_map(|f| f.motion_params()).map(f64::to_bits).collect()
}

fn structural_invariants() -> Verdict {
    let mut problems: Vec<String> = Vec::new();
    let mut fail = |ok: bool, what: String| {
        if !ok {
            problems.push(what);
        }
    };
    let template = BodyTemplate::standard();

    let mut row_err = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(2000 + seed);
        let d = 4;
        let mut s = ParamStore::new();
        init_attention(&mut s, "a", d, d, d, &mut r).unwrap();
        let (q, k) = (rows(r.random_range(1..6), d, &mut r), rows(r.random_range(1..9), d, &mut r));
        let (_, w) = attention(&q, &k, &k, &s, "a", 2).unwrap();
        for i in 0..w.rows() {
            row_err = row_err.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    let data = build_dataset(&GenConfig {
        known_scenes: 1,
        new_scenes: 1,
        train: 4,
        test_known: 2,
        test_new: 2,
        points: 256,
        object_points: 32,
        ..GenConfig::default()
    })
    .unwrap();
    let full = perturbed(Variant::Full, 3);
    for e in &data.episodes {
        let map = full.attention_map(e, &template, data.scene(&e.scene_id).unwrap()).unwrap();
        for i in 0..map.rows() {
            row_err = row_err.max((map.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    fail(row_err <= 1e-9, format!("attention row sums off by {row_err:.1e}"));

    for seed in 0..10 {
        let mut r = rng(3000 + seed);
        let scene = generate_scene("p", seed, &GenConfig { points: 256, object_points: 32, ..GenConfig::default() }).unwrap();
        let mut perm: Vec<usize> = (0..scene.len()).collect();
        perm.shuffle(&mut r);
        let shuffled = Scene::new("p", perm.iter().map(|&i| scene.points[i]).collect(), perm.iter().map(|&i| scene.labels[i]).collect()).unwrap();
        let m = perturbed(Variant::Full, seed);
        let (a, b) = (m.encode_scene(&scene).unwrap(), m.encode_scene(&shuffled).unwrap());
        let same_rows = perm.iter().enumerate().all(|(new, &old)| b.per_point.row(new) == a.per_point.row(old));
        fail(a.global == b.global && same_rows, format!("scene encoding changed under permutation (seed {seed})"));
    }

    for seed in 0..20 {
        let mut r = rng(4000 + seed);
        let n = r.random_range(16..40);
        let scene = random_scene(n, &mut r);
        let c: Vec<f64> = (0..5).map(|_| r.random_range(-10.0..10.0)).collect();
        let feats = SceneFeatures {
            per_point: Tensor::from_rows(&vec![c.clone(); n]).unwrap(),
            global: vec![],
        };
        for _ in 0..10 {
            let q: Vec3 = std::array::from_fn(|_| r.random_range(-3.0..3.0));
            fail(interpolate_features(&feats, &scene, q) == c, format!("constant field not reproduced (seed {seed})"));
        }
    }

    let no_gaze = perturbed(Variant::NoGaze, 5);
    for (i, e) in data.episodes.iter().enumerate() {
        let scene = data.scene(&e.scene_id).unwrap();
        let mut r = rng(5000 + i as u64);
        let mut other = e.clone();
        other.gaze.points.iter_mut().for_each(|g| *g = std::array::from_fn(|_| r.random_range(-3.0..3.0)));
        other.gaze.valid.iter_mut().for_each(|v| *v = r.random_bool(0.5));
        let (a, b) = (no_gaze.predict(e, &template, scene).unwrap(), no_gaze.predict(&other, &template, scene).unwrap());
        fail(bits(&a) == bits(&b), format!("no_gaze prediction depends on gaze (episode {i})"));
    }

    let dir = tempfile::tempdir().unwrap();
    let e = &data.episodes[0];
    let scene = data.scene(&e.scene_id).unwrap();
    for v in Variant::ALL {
        let p = perturbed(v, 7);
        let path = dir.path().join(format!("{v}.gimo"));
        p.save(&path).unwrap();
        let back = ModelParams::load(&path).unwrap();
        let same_bytes = back.to_bytes() == p.to_bytes() && std::fs::read(&path).unwrap() == p.to_bytes();
        let same_pred = bits(&p.predict(e, &template, scene).unwrap()) == bits(&back.predict(e, &template, scene).unwrap());
        fail(back == p && same_bytes && same_pred, format!("checkpoint round trip differs for {v}"));
    }

    let detail = format!("attention row-sum error {row_err:.1e}; permutation, constant field, gaze independence, checkpoints checked");
    match problems.is_empty() {
        true => verdict(true, detail),
        false => verdict(false, problems.join("; ")),
    }
}

// ── 4 ───────────────────────────────────────────────────────────────

fn overfit() -> Verdict {
    let data = build_dataset(&small_config()).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        steps: 2000,
        batch_size: 8,
        model: ModelConfig::micro(),
        ..TrainConfig::default()
    };
    let (_, log) = train(&data, &cfg, &BodyTemplate::standard(), None).unwrap();
    let total = log.final_train.total;
    verdict(total < 0.05, format!("{} episodes, final train loss {total:.4} (bound 0.05)", data.episodes.len()))
}

// ── 5–7 ─────────────────────────────────────────────────────────────

fn train_and_evaluate(data: &Dataset, variants: &[Variant], cfg: &TrainConfig, splits: &[Split]) -> Vec<MetricRow> {
    let template = BodyTemplate::standard();
    let models: Vec<ModelParams> = variants
        .iter()
        .map(|&variant| train(data, &TrainConfig { variant, ..cfg.clone() }, &template, None).unwrap().0)
        .collect();
    let refs: Vec<&dyn gimo_core::Predictor> = models.iter().map(|m| m as &dyn gimo_core::Predictor).collect();
    evaluate(data, &refs, splits, &template).unwrap().destination
}

fn trans(rows: &[MetricRow], v: Variant, split: Split) -> f64 {
    rows.iter().find(|r| r.variant == v.tag() && r.split == split).expect("row").trans
}

fn goal_centroid(scene: &Scene, label: u32) -> [f64; 2] {
    let idx = scene.object_points(label);
    let n = idx.len() as f64;
    let s = idx.iter().fold([0.0, 0.0], |acc, &i| [acc[0] + scene.points[i][0], acc[1] + scene.points[i][1]]);
    [s[0] / n, s[1] / n]
}

fn gaze_disambiguation() -> Verdict {
    let data = build_dataset(&GenConfig::ambiguity()).unwrap();
    let test = data.split(Split::TestKnown);
    let inter_goal = test
        .iter()
        .map(|e| {
            let scene = data.scene(&e.scene_id).unwrap();
            let (a, b) = (goal_centroid(scene, 0), goal_centroid(scene, 1));
            (a[0] - b[0]).hypot(a[1] - b[1])
        })
        .sum::<f64>()
        / test.len() as f64;
    let cfg = TrainConfig {
        lr: 1e-3,
        steps: 600,
        model: ModelConfig::desk(),
        ..TrainConfig::default()
    };
    let rows = train_and_evaluate(&data, &[Variant::Full, Variant::NoGaze], &cfg, &[Split::TestKnown]);
    let (full, blind) = (trans(&rows, Variant::Full, Split::TestKnown), trans(&rows, Variant::NoGaze, Split::TestKnown));
    let pass = full <= 0.6 * blind && blind >= 0.4 * inter_goal;
    verdict(
        pass,
        format!(
            "{} test episodes; full {full:.3}, no_gaze {blind:.3} (reduction {:.0}%, need 40%); no_gaze / inter-goal {inter_goal:.2} m = {:.2} (need 0.4)",
            test.len(),
            100.0 * (1.0 - full / blind),
            blind / inter_goal
        ),
    )
}

fn benchmark_training() -> TrainConfig {
    TrainConfig {
        lr: 1e-4,
        steps: 500,
        model: ModelConfig::desk(),
        ..TrainConfig::default()
    }
}

fn ablation_ordering() -> Verdict {
    let data = build_dataset(&GenConfig::default()).unwrap();
    let splits = [Split::TestKnown, Split::TestNew];
    let rows = train_and_evaluate(&data, &[Variant::Full, Variant::Vanilla, Variant::NoGaze], &benchmark_training(), &splits);
    let mut pass = true;
    let mut parts = vec![format!("counts {:?}", data.counts())];
    for s in splits {
        let (f, v, n) = (trans(&rows, Variant::Full, s), trans(&rows, Variant::Vanilla, s), trans(&rows, Variant::NoGaze, s));
        pass &= f < v && f < n;
        parts.push(format!("{s}: full {f:.3}, vanilla {v:.3}, no_gaze {n:.3}"));
    }
    verdict(pass, parts.join("; "))
}

fn noise_ceiling() -> Verdict {
    let data = build_dataset(&GenConfig {
        rho: 1.0,
        layout: Layout::Random,
        ..GenConfig::default()
    })
    .unwrap();
    let splits = [Split::TestKnown, Split::TestNew];
    let rows = train_and_evaluate(&data, &[Variant::Full, Variant::NoGaze], &benchmark_training(), &splits);
    let mut pass = true;
    let mut parts = Vec::new();
    for s in splits {
        let (f, n) = (trans(&rows, Variant::Full, s), trans(&rows, Variant::NoGaze, s));
        let gap = (f - n).abs() / f.max(n);
        pass &= gap < 0.2;
        parts.push(format!("{s}: full {f:.3}, no_gaze {n:.3}, gap {:.0}%", 100.0 * gap));
    }
    verdict(pass, format!("rho 1; {} (bound 20%)", parts.join("; ")))
}

// ── 8 ───────────────────────────────────────────────────────────────

fn gimo(args: &[&str]) -> Result<()> {
    let mut argv = vec!["gimo"];
    argv.extend_from_slice(args);
    gimo_cli::run(gimo_cli::Cli::parse_from(argv))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{ "gen.points": 256, "gen.object_points": 32, "gen.known_scenes": 2, "gen.new_scenes": 1,
  "gen.train": 8, "gen.test_known": 4, "gen.test_new": 3,
  "train.model.preset": "micro", "train.steps": 30, "train.checkpoint_every": 10 }"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let mut compared = 0;
    let mut diffs = Vec::new();
    for (threads, run) in [("1", "a"), ("3", "b")] {
        let base = root.path().join(run);
        let (data, model, eval) = (base.join("data"), base.join("train"), base.join("eval"));
        let (d, m, ev) = (data.to_str().unwrap(), model.to_str().unwrap(), eval.to_str().unwrap());
        let ckpt = model.join("model.gimo");
        let steps: [Vec<&str>; 3] = [
            vec!["--threads", threads, "generate", "--config", c, "--out", d],
            vec!["--threads", threads, "train", "--data", d, "--config", c, "--out", m],
            vec!["--threads", threads, "eval", "--data", d, "--config", c, "--ckpt", ckpt.to_str().unwrap(), "last_pose", "--out", ev],
        ];
        for s in &steps {
            if let Err(e) = gimo(s) {
                return verdict(false, format!("gimo {}: {e}", s.join(" ")));
            }
        }
    }
    let (a, b) = (files(&root.path().join("a")), files(&root.path().join("b")));
    if a.iter().map(|f| &f.0).ne(b.iter().map(|f| &f.0)) {
        return verdict(false, "runs wrote different file sets");
    }
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        compared += 1;
        if x != y {
            diffs.push(name.clone());
        }
    }
    match diffs.is_empty() {
        true => verdict(true, format!("generate, train, eval rerun with 1 and 3 threads: {compared} files byte-identical")),
        false => verdict(false, format!("differing files: {}", diffs.join(", "))),
    }
}
