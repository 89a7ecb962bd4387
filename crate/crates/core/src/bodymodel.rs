//! Linear parametric body: a fixed stick-figure template deformed by a
//! 32-D pose embedding, rotated by an axis-angle orientation and translated.
//!
//! Shape `β` and hand pose `p` are carried by [`PoseFrame`] but never change
//! the geometry.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

pub const POSE_DIM: usize = 32;
pub const SHAPE_DIM: usize = 10;
pub const HAND_DIM: usize = 24;
/// Width of the predicted parameter vector `(t, r, h)`.
pub const MOTION_DIM: usize = 3 + 3 + POSE_DIM;
/// Poses per second in every motion sequence.
pub const FRAME_RATE: f64 = 2.0;

/// Seed used to build the shipped template asset.
pub const TEMPLATE_SEED: u64 = 0x6A4D_0B0D;
pub const TEMPLATE_VERTICES: usize = 64;
pub const TEMPLATE_JOINTS: usize = 15;
/// Upper bound on the Euclidean norm of any pose-basis column (meters).
pub const MAX_BASIS_COLUMN_NORM: f64 = 0.5;

const ASSET_HEADER: &str = "GIMO-BODY v1";
const SHIPPED_ASSET: &str = include_str!("../assets/body_template_v1.txt");

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    /// Global translation (meters).
    pub t: Vec3,
    /// Global orientation, axis-angle (radians).
    pub r: Vec3,
    /// Body pose embedding.
    pub h: [f64; POSE_DIM],
    pub beta: [f64; SHAPE_DIM],
    pub p: [f64; HAND_DIM],
}

impl Default for PoseFrame {
    fn default() -> Self {
        PoseFrame {
            t: [0.0; 3],
            r: [0.0; 3],
            h: [0.0; POSE_DIM],
            beta: [0.0; SHAPE_DIM],
            p: [0.0; HAND_DIM],
        }
    }
}

impl PoseFrame {
    /// `(t, r, h)` flattened in that order.
    pub fn motion_params(&self) -> [f64; MOTION_DIM] {
        let mut out = [0.0; MOTION_DIM];
        out[..3].copy_from_slice(&self.t);
        out[3..6].copy_from_slice(&self.r);
        out[6..].copy_from_slice(&self.h);
        out
    }

    /// Rebuilds a frame from `(t, r, h)`, taking `β` and `p` from `carry`.
    pub fn from_motion_params(params: &[f64], carry: &PoseFrame) -> Result<Self> {
        if params.len() != MOTION_DIM {
            return Err(Error::Dimension {
                op: "from_motion_params",
                lhs: vec![params.len()],
                rhs: vec![MOTION_DIM],
            });
        }
        let mut frame = carry.clone();
        frame.t.copy_from_slice(&params[..3]);
        frame.r.copy_from_slice(&params[3..6]);
        frame.h.copy_from_slice(&params[6..]);
        Ok(frame)
    }

    pub fn is_finite(&self) -> bool {
        self.t
            .iter()
            .chain(&self.r)
            .chain(&self.h)
            .chain(&self.beta)
            .chain(&self.p)
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    pub frames: Vec<PoseFrame>,
    pub rate: f64,
}

impl MotionSequence {
    pub fn new(frames: Vec<PoseFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::contract("motion sequence must be non-empty"));
        }
        Ok(MotionSequence {
            frames,
            rate: FRAME_RATE,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn last(&self) -> &PoseFrame {
        self.frames.last().expect("non-empty by construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyMesh {
    pub vertices: Vec<Vec3>,
    pub joints: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    pub base_vertices: Vec<Vec3>,
    pub base_joints: Vec<Vec3>,
    /// `(3V) × 32`, row-major; row `3v + c` is coordinate `c` of vertex `v`.
    pub pose_basis: Vec<f64>,
    /// `J × V`, row-major, rows non-negative and summing to one.
    pub joint_regressor: Vec<f64>,
}

fn skew(v: Vec3) -> [[f64; 3]; 3] {
    [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
}

fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn norm3(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dist3(a: Vec3, b: Vec3) -> f64 {
    norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

/// Rotation matrix of an axis-angle vector (Rodrigues), with a second-order
/// series below `‖r‖ = 1e-6`.
pub fn rotation_matrix(r: Vec3) -> [[f64; 3]; 3] {
    let theta = norm3(r);
    let mut out = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if theta < 1e-6 {
        let k = skew(r);
        let k2 = mat3_mul(&k, &k);
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += k[i][j] + 0.5 * k2[i][j];
            }
        }
    } else {
        let k = skew([r[0] / theta, r[1] / theta, r[2] / theta]);
        let k2 = mat3_mul(&k, &k);
        let (s, c) = theta.sin_cos();
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += s * k[i][j] + (1.0 - c) * k2[i][j];
            }
        }
    }
    out
}

/// Same rotation with angle wrapped into `[0, π]`.
pub fn canonicalize_axis_angle(r: Vec3) -> Vec3 {
    let theta = norm3(r);
    if theta <= PI {
        return r;
    }
    let wrapped = theta - TAU * (theta / TAU).round();
    let s = wrapped / theta;
    [r[0] * s, r[1] * s, r[2] * s]
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TAU * (a / TAU).round();
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

// Stick-figure skeleton, pelvis at the origin, z up, facing +x.
const SKELETON: [Vec3; 15] = [
    [0.0, 0.0, 0.0],     // pelvis
    [0.0, 0.0, 0.5],     // neck
    [0.0, 0.0, 0.72],    // head
    [0.0, 0.18, 0.45],   // left shoulder
    [0.0, 0.22, 0.18],   // left elbow
    [0.02, 0.24, -0.06], // left wrist
    [0.0, -0.18, 0.45],  // right shoulder
    [0.0, -0.22, 0.18],  // right elbow
    [0.02, -0.24, -0.06],
    [0.0, 0.1, -0.05], // left hip
    [0.02, 0.1, -0.46],
    [0.0, 0.1, -0.86],
    [0.0, -0.1, -0.05], // right hip
    [0.02, -0.1, -0.46],
    [0.0, -0.1, -0.86],
];

const BONES: [(usize, usize); 14] = [
    (0, 1),
    (1, 2),
    (1, 3),
    (3, 4),
    (4, 5),
    (1, 6),
    (6, 7),
    (7, 8),
    (0, 9),
    (9, 10),
    (10, 11),
    (0, 12),
    (12, 13),
    (13, 14),
];

impl BodyTemplate {
    /// The template shipped with the crate (V = 64, J = 15).
    pub fn standard() -> Self {
        Self::parse(SHIPPED_ASSET, "body_template_v1.txt").expect("shipped body asset is valid")
    }

    pub fn num_vertices(&self) -> usize {
        self.base_vertices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.base_joints.len()
    }

    /// Seeded template with `vertices` points scattered along the skeleton
    /// bones and `joints ≤ 15` regressed joints.
    pub fn generate(vertices: usize, joints: usize, seed: u64) -> Result<Self> {
        if vertices == 0 || joints == 0 || joints > SKELETON.len() {
            return Err(Error::contract(format!(
                "template needs V ≥ 1 and 1 ≤ J ≤ {}, got V={vertices}, J={joints}",
                SKELETON.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_vertices: Vec<Vec3> = (0..vertices)
            .map(|i| {
                let (a, b) = BONES[i % BONES.len()];
                let u: f64 = rng.random_range(0.0..1.0);
                let mut v = [0.0; 3];
                for c in 0..3 {
                    let jitter: f64 = rng.random_range(-0.03..0.03);
                    v[c] = SKELETON[a][c] + u * (SKELETON[b][c] - SKELETON[a][c]) + jitter;
                }
                v
            })
            .collect();

        let k = vertices.min(4);
        let mut joint_regressor = vec![0.0; joints * vertices];
        for j in 0..joints {
            let mut by_dist: Vec<(f64, usize)> = base_vertices
                .iter()
                .enumerate()
                .map(|(i, v)| (dist3(*v, SKELETON[j]), i))
                .collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let weights: Vec<(usize, f64)> = by_dist[..k].iter().map(|&(d, i)| (i, 1.0 / (d + 0.01))).collect();
            let total: f64 = weights.iter().map(|w| w.1).sum();
            for (i, w) in weights {
                joint_regressor[j * vertices + i] = w / total;
            }
        }

        let rows = 3 * vertices;
        let mut pose_basis = vec![0.0; rows * POSE_DIM];
        for col in 0..POSE_DIM {
            let target: f64 = rng.random_range(0.1..MAX_BASIS_COLUMN_NORM);
            let column: Vec<f64> = (0..rows).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (row, v) in column.iter().enumerate() {
                pose_basis[row * POSE_DIM + col] = v * target / norm;
            }
        }

        let mut template = BodyTemplate {
            base_vertices,
            base_joints: Vec::new(),
            pose_basis,
            joint_regressor,
        };
        template.base_joints = template.regress_joints(&template.base_vertices);
        Ok(template)
    }

    pub fn regress_joints(&self, vertices: &[Vec3]) -> Vec<Vec3> {
        let v = vertices.len();
        (0..self.joint_regressor.len() / v)
            .map(|j| {
                let row = &self.joint_regressor[j * v..(j + 1) * v];
                let mut out = [0.0; 3];
                for (w, vert) in row.iter().zip(vertices) {
                    for c in 0..3 {
                        out[c] += w * vert[c];
                    }
                }
                out
            })
            .collect()
    }

    /// Vertices in the body frame before rotation and translation.
    pub fn posed_vertices(&self, h: &[f64; POSE_DIM]) -> Vec<Vec3> {
        self.base_vertices
            .iter()
            .enumerate()
            .map(|(v, base)| {
                let mut out = *base;
                for c in 0..3 {
                    let row = &self.pose_basis[(3 * v + c) * POSE_DIM..(3 * v + c + 1) * POSE_DIM];
                    out[c] += row.iter().zip(h).map(|(b, x)| b * x).sum::<f64>();
                }
                out
            })
            .collect()
    }

    /// `vertices = R(r)·(base + B·h) + t`, `joints = regressor · vertices`.
    pub fn decode_pose(&self, x: &PoseFrame) -> BodyMesh {
        let rot = rotation_matrix(x.r);
        let vertices: Vec<Vec3> = self
            .posed_vertices(&x.h)
            .into_iter()
            .map(|p| {
                let mut out = x.t;
                for i in 0..3 {
                    out[i] += rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2];
                }
                out
            })
            .collect();
        let joints = self.regress_joints(&vertices);
        BodyMesh { vertices, joints }
    }

    pub fn to_asset_string(&self) -> String {
        let mut s = format!("{ASSET_HEADER}\n{} {}\n", self.num_vertices(), self.num_joints());
        let mut line = |vals: &[f64]| {
            let parts: Vec<String> = vals.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&parts.join(" "));
            s.push('\n');
        };
        for v in &self.base_vertices {
            line(v);
        }
        for j in &self.base_joints {
            line(j);
        }
        for row in self.pose_basis.chunks(POSE_DIM) {
            line(row);
        }
        for row in self.joint_regressor.chunks(self.num_vertices()) {
            line(row);
        }
        s
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == ASSET_HEADER => {}
            _ => return Err(Error::parse(source_name, 1, format!("expected header '{ASSET_HEADER}'"))),
        }
        let mut tokens = lines.flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)));
        let mut next_count = |what: &str| -> Result<usize> {
            let (line, tok) = tokens
                .next()
                .ok_or_else(|| Error::parse(source_name, 0, format!("missing {what}")))?;
            tok.parse().map_err(|_| Error::parse(source_name, line, format!("bad {what} '{tok}'")))
        };
        let v = next_count("vertex count")?;
        let j = next_count("joint count")?;
        if v == 0 || j == 0 {
            return Err(Error::parse(source_name, 2, "vertex and joint counts must be positive"));
        }
        let needed = 3 * v + 3 * j + 3 * v * POSE_DIM + j * v;
        let mut reals = Vec::with_capacity(needed);
        let mut last_line = 2;
        for (line, tok) in tokens {
            last_line = line;
            let x: f64 = tok
                .parse()
                .map_err(|_| Error::parse(source_name, line, format!("bad real '{tok}'")))?;
            reals.push(x);
        }
        if reals.len() != needed {
            return Err(Error::parse(
                source_name,
                last_line,
                format!("expected {needed} reals, found {}", reals.len()),
            ));
        }
        let mut it = reals.into_iter();
        let mut triples = |n: usize| -> Vec<Vec3> { (0..n).map(|_| [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]).collect() };
        let base_vertices = triples(v);
        let base_joints = triples(j);
        let pose_basis: Vec<f64> = it.by_ref().take(3 * v * POSE_DIM).collect();
        let joint_regressor: Vec<f64> = it.collect();
        let template = BodyTemplate {
            base_vertices,
            base_joints,
            pose_basis,
            joint_regressor,
        };
        template.validate().map_err(|e| Error::parse(source_name, 0, e.to_string()))?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.num_vertices();
        for (j, row) in self.joint_regressor.chunks(v).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::contract(format!("joint regressor row {j} is not row-stochastic")));
            }
        }
        for col in 0..POSE_DIM {
            let norm = (0..3 * v)
                .map(|r| self.pose_basis[r * POSE_DIM + col].powi(2))
                .sum::<f64>()
                .sqrt();
            if norm > MAX_BASIS_COLUMN_NORM + 1e-12 {
                return Err(Error::contract(format!("pose basis column {col} has norm {norm}")));
            }
        }
        Ok(())
    }
}
