//! Multi-head scaled dot-product attention and the cross-modal transformer
//! stack built from it.

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use rand::Rng;

/// Head-averaged attention weights recorded during a forward pass,
/// keyed by the attention block's parameter prefix.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub entries: Vec<(String, Tensor)>,
}

impl AttentionTrace {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn init_attention<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d_q: usize, d_kv: usize, d_model: usize, rng: &mut R) -> Result<()> {
    store.add_weight(&format!("{prefix}.wq"), d_q, d_model, rng)?;
    store.add_weight(&format!("{prefix}.wk"), d_kv, d_model, rng)?;
    store.add_weight(&format!("{prefix}.wv"), d_kv, d_model, rng)?;
    store.add_weight(&format!("{prefix}.wo"), d_model, d_model, rng)
}

/// `softmax(Q·Kᵀ/√d_h)·V` per head with `Q = q·W_q`, `K = k·W_k`,
/// `V = v·W_v`; heads are concatenated and mapped through `W_o`.
pub fn attention_on_tape(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    heads: usize,
    q: Var,
    k: Var,
    v: Var,
    trace: &mut AttentionTrace,
) -> Result<Var> {
    if tape.value(k).rows() == 0 {
        return Err(Error::EmptyContext);
    }
    let wq = p.get(&format!("{prefix}.wq"))?;
    let wk = p.get(&format!("{prefix}.wk"))?;
    let wv = p.get(&format!("{prefix}.wv"))?;
    let wo = p.get(&format!("{prefix}.wo"))?;
    let qp = tape.matmul(q, wq)?;
    let kp = tape.matmul(k, wk)?;
    let vp = tape.matmul(v, wv)?;
    let width = tape.value(qp).cols();
    if heads == 0 || width % heads != 0 {
        return Err(Error::contract(format!("{width} is not divisible into {heads} heads")));
    }
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (lq, lkv) = (tape.value(q).rows(), tape.value(k).rows());
    let mut averaged = vec![0.0; lq * lkv];
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(qp, h * dh, dh)?;
        let kh = tape.slice_cols(kp, h * dh, dh)?;
        let vh = tape.slice_cols(vp, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let weights = tape.softmax(scores, 1)?;
        for (a, w) in averaged.iter_mut().zip(tape.value(weights).data()) {
            *a += w / heads as f64;
        }
        outs.push(tape.matmul(weights, vh)?);
    }
    trace.entries.push((prefix.to_string(), Tensor::new(vec![lq, lkv], averaged)?));
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    tape.matmul(cat, wo)
}

/// Layer `l` of a cross-modal transformer: layer 0 attends from the latent
/// to the input sequence, later layers self-attend the latent.
fn init_layer<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, ffn: usize, cross: bool, rng: &mut R) -> Result<()> {
    init_attention(store, &format!("{prefix}.attn"), d, d, d, rng)?;
    store.add_layer_norm(&format!("{prefix}.ln_q"), d)?;
    if cross {
        store.add_layer_norm(&format!("{prefix}.ln_kv"), d)?;
    }
    store.add_layer_norm(&format!("{prefix}.ln_ff"), d)?;
    store.add_mlp(&format!("{prefix}.ff"), &[d, ffn, d], rng)
}

pub fn init_cross_transformer<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, ffn: usize, layers: usize, rng: &mut R) -> Result<()> {
    if layers == 0 {
        return Err(Error::contract("a cross-modal transformer needs at least one layer"));
    }
    for l in 0..layers {
        init_layer(store, &format!("{prefix}.{l}"), d, ffn, l == 0, rng)?;
    }
    store.add_layer_norm(&format!("{prefix}.out"), d)
}

/// Self-attention encoder stack (every layer attends its own sequence).
pub fn init_self_encoder<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, ffn: usize, layers: usize, rng: &mut R) -> Result<()> {
    for l in 0..layers {
        init_layer(store, &format!("{prefix}.{l}"), d, ffn, false, rng)?;
    }
    store.add_layer_norm(&format!("{prefix}.out"), d)
}

fn feed_forward(tape: &mut Tape, p: &Bound, prefix: &str, z: Var) -> Result<Var> {
    let n = p.layer_norm(tape, &format!("{prefix}.ln_ff"), z)?;
    let f = p.mlp(tape, &format!("{prefix}.ff"), 2, n, false)?;
    tape.add(z, f)
}

fn self_layer(tape: &mut Tape, p: &Bound, prefix: &str, heads: usize, z: Var, trace: &mut AttentionTrace) -> Result<Var> {
    let n = p.layer_norm(tape, &format!("{prefix}.ln_q"), z)?;
    let a = attention_on_tape(tape, p, &format!("{prefix}.attn"), heads, n, n, n, trace)?;
    let z = tape.add(z, a)?;
    feed_forward(tape, p, prefix, z)
}

/// Maps a `t_i`-row input into a `t_q`-row output by querying with
/// `query`. Pre-norm residual blocks; final layer norm.
pub fn cross_transformer_on_tape(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    heads: usize,
    layers: usize,
    query: Var,
    input: Var,
    trace: &mut AttentionTrace,
) -> Result<Var> {
    let (dq, di) = (tape.value(query).cols(), tape.value(input).cols());
    if dq != di {
        return Err(Error::Dimension {
            op: "cross_transformer",
            lhs: tape.shape(query).to_vec(),
            rhs: tape.shape(input).to_vec(),
        });
    }
    let l0 = format!("{prefix}.0");
    let nq = p.layer_norm(tape, &format!("{l0}.ln_q"), query)?;
    let nkv = p.layer_norm(tape, &format!("{l0}.ln_kv"), input)?;
    let a = attention_on_tape(tape, p, &format!("{l0}.attn"), heads, nq, nkv, nkv, trace)?;
    let z = tape.add(query, a)?;
    let mut z = feed_forward(tape, p, &l0, z)?;
    for l in 1..layers {
        z = self_layer(tape, p, &format!("{prefix}.{l}"), heads, z, trace)?;
    }
    p.layer_norm(tape, &format!("{prefix}.out"), z)
}

pub fn self_encoder_on_tape(tape: &mut Tape, p: &Bound, prefix: &str, heads: usize, layers: usize, x: Var, trace: &mut AttentionTrace) -> Result<Var> {
    let mut z = x;
    for l in 0..layers {
        z = self_layer(tape, p, &format!("{prefix}.{l}"), heads, z, trace)?;
    }
    p.layer_norm(tape, &format!("{prefix}.out"), z)
}

fn rows_tensor(rows: &[Vec<f64>]) -> Result<Option<Tensor>> {
    if rows.is_empty() {
        return Ok(None);
    }
    Tensor::from_rows(rows).map(Some)
}

/// Standalone attention on explicit row matrices. Parameters are looked up
/// under `prefix` in `store`. Returns the output and head-averaged weights.
pub fn attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], store: &ParamStore, prefix: &str, heads: usize) -> Result<(Tensor, Tensor)> {
    let (Some(kt), Some(vt)) = (rows_tensor(k)?, rows_tensor(v)?) else {
        return Err(Error::EmptyContext);
    };
    let qt = rows_tensor(q)?.ok_or_else(|| Error::contract("attention needs at least one query"))?;
    if kt.rows() != vt.rows() {
        return Err(Error::Dimension {
            op: "attention",
            lhs: kt.shape().to_vec(),
            rhs: vt.shape().to_vec(),
        });
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let (qv, kv, vv) = (tape.constant(qt), tape.constant(kt), tape.constant(vt));
    let mut trace = AttentionTrace::default();
    let out = attention_on_tape(&mut tape, &bound, prefix, heads, qv, kv, vv, &mut trace)?;
    let weights = trace.entries.pop().expect("attention records its weights").1;
    Ok((tape.value(out).clone(), weights))
}

/// Standalone cross-modal transformer on explicit row matrices.
pub fn cross_transformer(query: &[Vec<f64>], input: &[Vec<f64>], store: &ParamStore, prefix: &str, heads: usize, layers: usize) -> Result<Tensor> {
    let it = rows_tensor(input)?.ok_or(Error::EmptyContext)?;
    let qt = rows_tensor(query)?.ok_or_else(|| Error::contract("cross_transformer needs at least one query row"))?;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let (qv, iv) = (tape.constant(qt), tape.constant(it));
    let out = cross_transformer_on_tape(&mut tape, &bound, prefix, heads, layers, qv, iv, &mut AttentionTrace::default())?;
    Ok(tape.value(out).clone())
}
