//! Point-cloud scene encoder, inverse-distance feature interpolation, and
//! per-pose ambient scene context.
//!
//! The encoder is a two-level set-abstraction network: farthest-point
//! sampling picks centroids, every point within a radius of a centroid is
//! grouped, a shared MLP runs on each grouped point and a max-pool reduces
//! each group. Two feature-propagation stages interpolate the coarse
//! features back onto every input point. All sampling and grouping is
//! defined on coordinates only, so permuting the input permutes the
//! per-point features and leaves the global descriptor untouched.

use crate::bodymodel::{dist3, Vec3};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt::Write as _;

pub const MIN_SCENE_POINTS: usize = 16;
pub const MAX_SCENE_DIAGONAL: f64 = 20.0;
/// Neighbors used by inverse-distance interpolation.
pub const INTERP_NEIGHBORS: usize = 3;
/// Below this distance a query snaps to the coinciding point's feature.
pub const SNAP_DISTANCE: f64 = 1e-9;

const SCENE_HEADER: &str = "GIMO-SCENE v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub points: Vec<Vec3>,
    /// Goal-object id per point; `None` for background.
    pub labels: Vec<Option<u32>>,
}

impl Scene {
    pub fn new(id: impl Into<String>, points: Vec<Vec3>, labels: Vec<Option<u32>>) -> Result<Self> {
        let scene = Scene {
            id: id.into(),
            points,
            labels,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn unlabeled(id: impl Into<String>, points: Vec<Vec3>) -> Result<Self> {
        let labels = vec![None; points.len()];
        Self::new(id, points, labels)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n < MIN_SCENE_POINTS {
            return Err(Error::SceneTooSmall(n));
        }
        if self.labels.len() != n {
            return Err(Error::contract(format!("{} labels for {n} points", self.labels.len())));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("scene coordinates must be finite"));
        }
        let (lo, hi) = self.bounds();
        let diag = dist3(lo, hi);
        if diag > MAX_SCENE_DIAGONAL {
            return Err(Error::contract(format!("scene bounding-box diagonal {diag} exceeds {MAX_SCENE_DIAGONAL} m")));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for c in 0..3 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        (lo, hi)
    }

    /// Indices of points carrying `label`.
    pub fn object_points(&self, label: u32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == Some(label)).collect()
    }

    /// Distinct object labels in ascending order.
    pub fn object_labels(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Label of the nearest scene point.
    pub fn nearest_label(&self, q: Vec3) -> Option<u32> {
        nearest_neighbors(&self.points, q, 1).first().and_then(|&(i, _)| self.labels[i])
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!("{SCENE_HEADER}\n{}\n", self.len());
        for (p, l) in self.points.iter().zip(&self.labels) {
            let _ = write!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
            if let Some(l) = l {
                let _ = write!(s, " {l}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, id: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, h)) if h.trim() == SCENE_HEADER => {}
            _ => return Err(Error::parse(source_name, 1, format!("expected header '{SCENE_HEADER}'"))),
        }
        let (line_no, count) = lines
            .next()
            .ok_or_else(|| Error::parse(source_name, 2, "missing point count"))?;
        let n: usize = count
            .trim()
            .parse()
            .map_err(|_| Error::parse(source_name, line_no, format!("bad point count '{count}'")))?;
        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for k in 0..n {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(source_name, 3 + k, format!("expected {n} points, found {k}")))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 && toks.len() != 4 {
                return Err(Error::parse(source_name, line_no, "expected 'x y z [label]'"));
            }
            let mut p = [0.0; 3];
            for c in 0..3 {
                p[c] = toks[c]
                    .parse()
                    .map_err(|_| Error::parse(source_name, line_no, format!("bad coordinate '{}'", toks[c])))?;
            }
            let label = match toks.get(3) {
                Some(t) => Some(
                    t.parse()
                        .map_err(|_| Error::parse(source_name, line_no, format!("bad label '{t}'")))?,
                ),
                None => None,
            };
            points.push(p);
            labels.push(label);
        }
        if let Some((line_no, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(source_name, line_no, format!("unexpected trailing content '{extra}'")));
        }
        Scene::new(id, points, labels).map_err(|e| Error::parse(source_name, 2, e.to_string()))
    }
}

/// One 3D gaze point per input frame, with a per-frame validity flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeTrack {
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFeatures {
    /// `n × d_p`
    pub per_point: Tensor,
    /// `d_o`
    pub global: Vec<f64>,
}

// ── geometry ─────────────────────────────────────────────────────────

fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Farthest-point sampling of `k` indices. Starts from the
/// lexicographically smallest point; ties in distance go to the
/// lexicographically smallest coordinates, then the lowest index.
pub fn farthest_point_sample(points: &[Vec3], k: usize) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let better = |i: usize, j: usize| lex_cmp(&points[i], &points[j]).then(i.cmp(&j)) == Ordering::Less;
    let mut first = 0;
    for i in 1..n {
        if better(i, first) {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut min_d = vec![f64::INFINITY; n];
    let mut last = first;
    while chosen.len() < k {
        let mut best = usize::MAX;
        for i in 0..n {
            let d = dist3(points[i], points[last]);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if best == usize::MAX
                || min_d[i] > min_d[best]
                || (min_d[i] == min_d[best] && better(i, best))
            {
                best = i;
            }
        }
        chosen.push(best);
        last = best;
    }
    chosen
}

/// Every point within `radius` of each center, in ascending index order.
/// Returns flat member indices and group offsets.
pub fn ball_query(points: &[Vec3], centers: &[Vec3], radius: f64) -> (Vec<usize>, Vec<usize>) {
    let mut members = Vec::new();
    let mut offsets = vec![0];
    for c in centers {
        for (i, p) in points.iter().enumerate() {
            if dist3(*p, *c) <= radius {
                members.push(i);
            }
        }
        offsets.push(members.len());
    }
    (members, offsets)
}

/// The `k` nearest points to `q` as `(index, distance)`, closest first;
/// ties broken by coordinates then index. Exhaustive search.
pub fn nearest_neighbors(points: &[Vec3], q: Vec3, k: usize) -> Vec<(usize, f64)> {
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    let key_less = |a: (usize, f64), b: (usize, f64)| {
        a.1.total_cmp(&b.1)
            .then_with(|| lex_cmp(&points[a.0], &points[b.0]))
            .then(a.0.cmp(&b.0))
            == Ordering::Less
    };
    for (i, p) in points.iter().enumerate() {
        let cand = (i, dist3(*p, q));
        if best.len() == k && !key_less(cand, best[k - 1]) {
            continue;
        }
        let pos = best.iter().position(|&b| key_less(cand, b)).unwrap_or(best.len());
        best.insert(pos, cand);
        best.truncate(k);
    }
    best
}

/// Normalized inverse-distance weights `wᵢ = 1/dᵢ`; snaps to the first
/// neighbor closer than [`SNAP_DISTANCE`].
pub fn inverse_distance_weights(neighbors: &[(usize, f64)]) -> Vec<(usize, f64)> {
    if let Some(&(i, _)) = neighbors.iter().find(|(_, d)| *d < SNAP_DISTANCE) {
        return vec![(i, 1.0)];
    }
    let total: f64 = neighbors.iter().map(|(_, d)| 1.0 / d).sum();
    neighbors.iter().map(|&(i, d)| (i, (1.0 / d) / total)).collect()
}

pub fn interpolation_weights(points: &[Vec3], q: Vec3) -> Vec<(usize, f64)> {
    inverse_distance_weights(&nearest_neighbors(points, q, INTERP_NEIGHBORS))
}

/// `F_{P|e}` for a single query point.
pub fn interpolate_features(feats: &SceneFeatures, scene: &Scene, e: Vec3) -> Vec<f64> {
    let weights = interpolation_weights(&scene.points, e);
    let base = feats.per_point.row(weights[0].0);
    let mut out = base.to_vec();
    for &(i, w) in &weights[1..] {
        for ((o, v), b) in out.iter_mut().zip(feats.per_point.row(i)).zip(base) {
            *o += w * (v - b);
        }
    }
    out
}

// ── encoder ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEncoderConfig {
    pub sa1_centroids: usize,
    pub sa1_radius: f64,
    /// Hidden widths of the first set-abstraction MLP (input is 6).
    pub sa1_mlp: Vec<usize>,
    pub sa2_centroids: usize,
    pub sa2_radius: f64,
    pub sa2_mlp: Vec<usize>,
    pub fp2_mlp: Vec<usize>,
    /// Last entry is the per-point feature width `d_p`.
    pub fp1_mlp: Vec<usize>,
}

impl SceneEncoderConfig {
    pub fn feature_dim(&self) -> usize {
        *self.fp1_mlp.last().expect("fp1_mlp is non-empty")
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [&self.sa1_mlp, &self.sa2_mlp, &self.fp2_mlp, &self.fp1_mlp];
        if lists.iter().any(|l| l.is_empty() || l.contains(&0)) {
            return Err(Error::contract("scene encoder MLP widths must be non-empty and positive"));
        }
        if self.sa1_centroids == 0 || self.sa2_centroids == 0 || self.sa2_centroids > self.sa1_centroids {
            return Err(Error::contract("need 0 < sa2_centroids ≤ sa1_centroids"));
        }
        if !(self.sa1_radius > 0.0 && self.sa2_radius > 0.0) {
            return Err(Error::contract("radii must be positive"));
        }
        Ok(())
    }

    fn stages(&self) -> [(&'static str, usize, &Vec<usize>); 4] {
        let c1 = *self.sa1_mlp.last().unwrap();
        let c2 = *self.sa2_mlp.last().unwrap();
        let c3 = *self.fp2_mlp.last().unwrap();
        [
            ("scene.sa1", 6, &self.sa1_mlp),
            ("scene.sa2", 3 + c1, &self.sa2_mlp),
            ("scene.fp2", c2 + c1, &self.fp2_mlp),
            ("scene.fp1", c3 + 3, &self.fp1_mlp),
        ]
    }

    pub fn init_params<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.validate()?;
        for (prefix, input, hidden) in self.stages() {
            let mut widths = vec![input];
            widths.extend(hidden);
            store.add_mlp(prefix, &widths, rng)?;
        }
        Ok(())
    }
}

/// Parameter-free sampling, grouping, and interpolation indices of one
/// scene under one encoder configuration.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    pub sa1_centers: Vec<usize>,
    sa1_inputs: Tensor,
    sa1_offsets: Vec<usize>,
    /// Indices into `sa1_centers`.
    pub sa2_centers: Vec<usize>,
    sa2_members: Vec<usize>,
    sa2_rel: Tensor,
    sa2_offsets: Vec<usize>,
    fp2_weights: Vec<Vec<(usize, f64)>>,
    fp1_weights: Vec<Vec<(usize, f64)>>,
    xyz: Tensor,
}

impl SceneGeometry {
    pub fn build(scene: &Scene, cfg: &SceneEncoderConfig) -> Result<Self> {
        scene.validate()?;
        cfg.validate()?;
        let pts = &scene.points;

        let sa1_centers = farthest_point_sample(pts, cfg.sa1_centroids);
        let c1_pos: Vec<Vec3> = sa1_centers.iter().map(|&i| pts[i]).collect();
        let (members, sa1_offsets) = ball_query(pts, &c1_pos, cfg.sa1_radius);
        let mut rows = Vec::with_capacity(members.len() * 6);
        for g in 0..c1_pos.len() {
            let c = c1_pos[g];
            for &m in &members[sa1_offsets[g]..sa1_offsets[g + 1]] {
                let p = pts[m];
                rows.extend_from_slice(&[p[0] - c[0], p[1] - c[1], p[2] - c[2], p[0], p[1], p[2]]);
            }
        }
        let sa1_inputs = Tensor::new(vec![members.len(), 6], rows)?;

        let sa2_centers = farthest_point_sample(&c1_pos, cfg.sa2_centroids);
        let c2_pos: Vec<Vec3> = sa2_centers.iter().map(|&i| c1_pos[i]).collect();
        let (sa2_members, sa2_offsets) = ball_query(&c1_pos, &c2_pos, cfg.sa2_radius);
        let mut rel = Vec::with_capacity(sa2_members.len() * 3);
        for g in 0..c2_pos.len() {
            let c = c2_pos[g];
            for &m in &sa2_members[sa2_offsets[g]..sa2_offsets[g + 1]] {
                let p = c1_pos[m];
                rel.extend_from_slice(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            }
        }
        let sa2_rel = Tensor::new(vec![sa2_members.len(), 3], rel)?;

        let fp2_weights = c1_pos.iter().map(|&p| interpolation_weights(&c2_pos, p)).collect();
        let fp1_weights = pts.iter().map(|&p| interpolation_weights(&c1_pos, p)).collect();
        let xyz = Tensor::new(vec![pts.len(), 3], pts.iter().flatten().copied().collect())?;

        Ok(SceneGeometry {
            sa1_centers,
            sa1_inputs,
            sa1_offsets,
            sa2_centers,
            sa2_members,
            sa2_rel,
            sa2_offsets,
            fp2_weights,
            fp1_weights,
            xyz,
        })
    }
}

/// Encodes a scene on `tape`; returns `(F_P: n×d_p, F_o: 1×d_p)`.
pub fn encode_scene_on_tape(tape: &mut Tape, p: &Bound, cfg: &SceneEncoderConfig, geom: &SceneGeometry) -> Result<(Var, Var)> {
    let per_point = per_point_features_on_tape(tape, p, cfg, geom)?;
    let n = tape.value(per_point).rows();
    let global = tape.segment_max(per_point, &[0, n])?;
    Ok((per_point, global))
}

/// The encoder up to (and including) the last feature-propagation MLP.
pub fn per_point_features_on_tape(tape: &mut Tape, p: &Bound, cfg: &SceneEncoderConfig, geom: &SceneGeometry) -> Result<Var> {
    let sa1_in = tape.constant(geom.sa1_inputs.clone());
    let h = p.mlp(tape, "scene.sa1", cfg.sa1_mlp.len(), sa1_in, true)?;
    let f1 = tape.segment_max(h, &geom.sa1_offsets)?;

    let rel = tape.constant(geom.sa2_rel.clone());
    let grouped = tape.gather_rows(f1, &geom.sa2_members)?;
    let sa2_in = tape.concat_cols(&[rel, grouped])?;
    let h = p.mlp(tape, "scene.sa2", cfg.sa2_mlp.len(), sa2_in, true)?;
    let f2 = tape.segment_max(h, &geom.sa2_offsets)?;

    let up2 = tape.blend_rows(f2, &geom.fp2_weights)?;
    let fp2_in = tape.concat_cols(&[up2, f1])?;
    let f3 = p.mlp(tape, "scene.fp2", cfg.fp2_mlp.len(), fp2_in, true)?;

    let up1 = tape.blend_rows(f3, &geom.fp1_weights)?;
    let xyz = tape.constant(geom.xyz.clone());
    let fp1_in = tape.concat_cols(&[up1, xyz])?;
    p.mlp(tape, "scene.fp1", cfg.fp1_mlp.len(), fp1_in, false)
}

/// `F_P, F_o = Φ_scene(S | θ_s)` with parameters held constant.
pub fn encode_scene(scene: &Scene, params: &ParamStore, cfg: &SceneEncoderConfig) -> Result<SceneFeatures> {
    let geom = SceneGeometry::build(scene, cfg)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let (fp, fo) = encode_scene_on_tape(&mut tape, &bound, cfg, &geom)?;
    Ok(SceneFeatures {
        per_point: tape.value(fp).clone(),
        global: tape.value(fo).data().to_vec(),
    })
}

// ── ambient context and gaze ─────────────────────────────────────────

/// Prefix of the shared per-vertex MLP applied before pooling.
pub const AMBIENT_PREFIX: &str = "ambient";

pub fn init_ambient_params<R: Rng + ?Sized>(store: &mut ParamStore, d_p: usize, widths: &[usize], rng: &mut R) -> Result<()> {
    let mut w = vec![d_p];
    w.extend(widths);
    store.add_mlp(AMBIENT_PREFIX, &w, rng)
}

/// Pooled ambient context for each vertex group: rows of `vertex_weights`
/// are grouped by `offsets` (one group per pose). Returns `groups × width`.
pub fn ambient_context_on_tape(
    tape: &mut Tape,
    p: &Bound,
    layers: usize,
    per_point: Var,
    vertex_weights: &[Vec<(usize, f64)>],
    offsets: &[usize],
) -> Result<Var> {
    let at_vertices = tape.blend_rows(per_point, vertex_weights)?;
    let h = p.mlp(tape, AMBIENT_PREFIX, layers, at_vertices, false)?;
    tape.segment_max(h, offsets)
}

/// `f_{m_v}` of a single mesh: interpolate at each vertex, shared MLP,
/// max-pool.
pub fn ambient_context(vertices: &[Vec3], feats: &SceneFeatures, scene: &Scene, params: &ParamStore, layers: usize) -> Result<Vec<f64>> {
    if vertices.is_empty() {
        return Err(Error::contract("ambient context of an empty mesh"));
    }
    let weights: Vec<_> = vertices.iter().map(|&v| interpolation_weights(&scene.points, v)).collect();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let fp = tape.constant(feats.per_point.clone());
    let out = ambient_context_on_tape(&mut tape, &bound, layers, fp, &weights, &[0, vertices.len()])?;
    Ok(tape.value(out).data().to_vec())
}

pub const MISSING_GAZE_PARAM: &str = "gaze.missing";

/// `f_g = F_{P|g}` for a valid gaze point, the learned missing-gaze
/// vector otherwise.
pub fn gaze_feature(feats: &SceneFeatures, scene: &Scene, g: Vec3, valid: bool, params: &ParamStore) -> Result<Vec<f64>> {
    if valid {
        Ok(interpolate_features(feats, scene, g))
    } else {
        Ok(params.get(MISSING_GAZE_PARAM)?.data().to_vec())
    }
}

/// Gaze features for a whole track on `tape` (`t × d_p`).
pub fn gaze_features_on_tape(tape: &mut Tape, p: &Bound, per_point: Var, scene: &Scene, gaze: &GazeTrack) -> Result<Var> {
    let weights: Vec<Option<Vec<(usize, f64)>>> = gaze
        .points
        .iter()
        .zip(&gaze.valid)
        .map(|(&g, &ok)| ok.then(|| interpolation_weights(&scene.points, g)))
        .collect();
    gaze_features_from_weights(tape, p, per_point, &weights)
}

pub(crate) fn gaze_features_from_weights(tape: &mut Tape, p: &Bound, per_point: Var, weights: &[Option<Vec<(usize, f64)>>]) -> Result<Var> {
    if weights.iter().all(Option::is_some) {
        let w: Vec<_> = weights.iter().map(|w| w.clone().unwrap()).collect();
        return tape.blend_rows(per_point, &w);
    }
    let missing = p.get(MISSING_GAZE_PARAM)?;
    let d = tape.value(per_point).cols();
    let missing_row = tape.reshape(missing, vec![1, d])?;
    let rows = weights
        .iter()
        .map(|w| match w {
            Some(w) => tape.blend_rows(per_point, std::slice::from_ref(w)),
            None => Ok(missing_row),
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat_rows(&rows)
}
