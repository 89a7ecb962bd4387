//! Brute-force reference implementations written from the definitions,
//! sharing no code with the library beyond parameter lookup.

use gimo_core::bodymodel::{MotionSequence, Vec3};
use gimo_core::params::ParamStore;
use gimo_core::{Scene, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn vector(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(name).unwrap().data().to_vec()
}

fn weight(store: &ParamStore, name: &str) -> Mat {
    mat(store.get(name).unwrap())
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for c in 0..k {
                s += a[i][c] * b[c][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

pub fn linear(x: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let b = vector(store, &format!("{prefix}.b"));
    matmul(x, &weight(store, &format!("{prefix}.w")))
        .into_iter()
        .map(|r| r.iter().zip(&b).map(|(v, c)| v + c).collect())
        .collect()
}

fn relu(x: Mat) -> Mat {
    x.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
}

/// Per-row normalization; the variance is floored at `1e-5`.
pub fn layer_norm(x: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let g = vector(store, &format!("{prefix}.gain"));
    let b = vector(store, &format!("{prefix}.bias"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let s = var.max(1e-5).sqrt();
            row.iter().enumerate().map(|(j, v)| g[j] * (v - mean) / s + b[j]).collect()
        })
        .collect()
}

/// Multi-head attention; returns the output and the head-averaged weights.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, store: &ParamStore, prefix: &str, heads: usize) -> (Mat, Mat) {
    let qp = matmul(q, &weight(store, &format!("{prefix}.wq")));
    let kp = matmul(k, &weight(store, &format!("{prefix}.wk")));
    let vp = matmul(v, &weight(store, &format!("{prefix}.wv")));
    let d = qp[0].len();
    let dh = d / heads;
    let mut cat = vec![vec![0.0; d]; q.len()];
    let mut avg = vec![vec![0.0; k.len()]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..q.len() {
            let logits: Vec<f64> = kp
                .iter()
                .map(|kr| cols.clone().map(|c| qp[i][c] * kr[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for (j, ej) in e.iter().enumerate() {
                let a = ej / z;
                avg[i][j] += a / heads as f64;
                for c in cols.clone() {
                    cat[i][c] += a * vp[j][c];
                }
            }
        }
    }
    (matmul(&cat, &weight(store, &format!("{prefix}.wo"))), avg)
}

fn feed_forward(z: &Mat, store: &ParamStore, prefix: &str) -> Mat {
    let n = layer_norm(z, store, &format!("{prefix}.ln_ff"));
    let h = relu(linear(&n, store, &format!("{prefix}.ff.0")));
    add(z, &linear(&h, store, &format!("{prefix}.ff.1")))
}

/// Pre-norm stack: cross-attention from `query` into `input` at layer 0,
/// self-attention after that, final layer norm.
pub fn cross_transformer(query: &Mat, input: &Mat, store: &ParamStore, prefix: &str, heads: usize, layers: usize) -> Mat {
    let nq = layer_norm(query, store, &format!("{prefix}.0.ln_q"));
    let nkv = layer_norm(input, store, &format!("{prefix}.0.ln_kv"));
    let (a, _) = attention(&nq, &nkv, &nkv, store, &format!("{prefix}.0.attn"), heads);
    let mut z = feed_forward(&add(query, &a), store, &format!("{prefix}.0"));
    for l in 1..layers {
        let n = layer_norm(&z, store, &format!("{prefix}.{l}.ln_q"));
        let (a, _) = attention(&n, &n, &n, store, &format!("{prefix}.{l}.attn"), heads);
        z = feed_forward(&add(&z, &a), store, &format!("{prefix}.{l}"));
    }
    layer_norm(&z, store, &format!("{prefix}.out"))
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Three nearest points by full sort (distance, coordinates, index);
/// inverse-distance weights, or the coincident point alone.
pub fn interpolate(points: &[Vec3], features: &Mat, q: Vec3) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        dist(points[a], q)
            .total_cmp(&dist(points[b], q))
            .then(points[a].partial_cmp(&points[b]).unwrap())
            .then(a.cmp(&b))
    });
    let nearest = &order[..3.min(order.len())];
    if let Some(&i) = nearest.iter().find(|&&i| dist(points[i], q) < 1e-9) {
        return features[i].clone();
    }
    let inv: Vec<f64> = nearest.iter().map(|&i| 1.0 / dist(points[i], q)).collect();
    let total: f64 = inv.iter().sum();
    let mut out = vec![0.0; features[0].len()];
    for (&i, w) in nearest.iter().zip(&inv) {
        for (o, f) in out.iter_mut().zip(&features[i]) {
            *o += w / total * f;
        }
    }
    out
}

/// Interpolate at every vertex, shared MLP (ReLU between layers), max-pool.
pub fn ambient_context(vertices: &[Vec3], scene: &Scene, features: &Mat, store: &ParamStore, layers: usize) -> Vec<f64> {
    let mut h: Mat = vertices.iter().map(|&v| interpolate(&scene.points, features, v)).collect();
    for l in 0..layers {
        h = linear(&h, store, &format!("ambient.{l}"));
        if l + 1 < layers {
            h = relu(h);
        }
    }
    (0..h[0].len()).map(|c| h.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Rotation angle folded into `[0, π]` with the axis flipped as needed.
pub fn canonical(r: Vec3) -> Vec3 {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if theta <= std::f64::consts::PI {
        return r;
    }
    let tau = 2.0 * std::f64::consts::PI;
    let mut folded = theta % tau;
    if folded > std::f64::consts::PI {
        folded -= tau;
    }
    r.map(|c| c / theta * folded)
}

fn mean_l1(pred: &MotionSequence, gt: &MotionSequence, part: impl Fn(&gimo_core::PoseFrame) -> Vec<f64>) -> f64 {
    let total: f64 = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .map(|(a, b)| part(a).iter().zip(part(b)).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .sum();
    total / pred.frames.len() as f64
}

pub fn loss_translation(pred: &MotionSequence, gt: &MotionSequence) -> f64 {
    mean_l1(pred, gt, |f| f.t.to_vec())
}

pub fn loss_orientation(pred: &MotionSequence, gt: &MotionSequence) -> f64 {
    mean_l1(pred, gt, |f| canonical(f.r).to_vec())
}

pub fn loss_pose(pred: &MotionSequence, gt: &MotionSequence) -> f64 {
    mean_l1(pred, gt, |f| f.h.to_vec())
}
