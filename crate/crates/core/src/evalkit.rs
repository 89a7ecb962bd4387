//! Destination and path metrics, the ablation harness, and report files.
//!
//! Translation and orientation errors are l1 distances on the raw
//! parameters (orientation after canonicalization, in radians); MPJPE is
//! in millimeters over the template joints.

use crate::bodymodel::{canonicalize_axis_angle, dist3, BodyTemplate, MotionSequence, PoseFrame};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::fusion::{ModelParams, PreparedEpisode, Variant, HORIZON, INPUT_FRAMES};
use crate::synthgen::{Dataset, Episode, Split};
use crate::trainer::{train, TrainConfig, TrainLog};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const METRICS_HEADER: &str = "variant,split,trans,ori,mpjpe";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub trans: f64,
    pub ori: f64,
    /// Millimeters.
    pub mpjpe: f64,
}

impl Metrics {
    fn add(self, o: Metrics) -> Metrics {
        Metrics {
            trans: self.trans + o.trans,
            ori: self.ori + o.ori,
            mpjpe: self.mpjpe + o.mpjpe,
        }
    }

    fn scale(self, c: f64) -> Metrics {
        Metrics {
            trans: self.trans * c,
            ori: self.ori * c,
            mpjpe: self.mpjpe * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: String,
    pub split: Split,
    pub trans: f64,
    pub ori: f64,
    pub mpjpe: f64,
}

impl MetricRow {
    pub fn new(variant: impl Into<String>, split: Split, m: Metrics) -> Self {
        MetricRow {
            variant: variant.into(),
            split,
            trans: m.trans,
            ori: m.ori,
            mpjpe: m.mpjpe,
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            trans: self.trans,
            ori: self.ori,
            mpjpe: self.mpjpe,
        }
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn frame_error(p: &PoseFrame, g: &PoseFrame, template: &BodyTemplate) -> Metrics {
    let (jp, jg) = (template.decode_pose(p).joints, template.decode_pose(g).joints);
    let mpjpe = jp.iter().zip(&jg).map(|(&a, &b)| dist3(a, b)).sum::<f64>() / jp.len() as f64;
    Metrics {
        trans: l1(&p.t, &g.t),
        ori: l1(&canonicalize_axis_angle(p.r), &canonicalize_axis_angle(g.r)),
        mpjpe: 1000.0 * mpjpe,
    }
}

fn check_lengths(pred: &MotionSequence, gt: &MotionSequence) -> Result<()> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::contract(format!("sequence lengths differ or are empty: {} vs {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// Error of the final predicted frame only.
pub fn destination_error(pred: &MotionSequence, gt: &MotionSequence, template: &BodyTemplate) -> Result<Metrics> {
    check_lengths(pred, gt)?;
    Ok(frame_error(pred.last(), gt.last(), template))
}

/// Error averaged over every predicted frame.
pub fn path_error(pred: &MotionSequence, gt: &MotionSequence, template: &BodyTemplate) -> Result<Metrics> {
    check_lengths(pred, gt)?;
    let sum = pred
        .frames
        .iter()
        .zip(&gt.frames)
        .fold(Metrics::default(), |acc, (p, g)| acc.add(frame_error(p, g, template)));
    Ok(sum.scale(1.0 / pred.len() as f64))
}

/// Anything that maps episodes to predicted futures.
pub trait Predictor: Sync {
    fn tag(&self) -> String;

    /// Predictions for `episodes`, in order.
    fn predict_all(&self, data: &Dataset, episodes: &[&Episode], template: &BodyTemplate) -> Result<Vec<MotionSequence>>;
}

impl Predictor for ModelParams {
    fn tag(&self) -> String {
        self.variant.tag().to_string()
    }

    fn predict_all(&self, data: &Dataset, episodes: &[&Episode], template: &BodyTemplate) -> Result<Vec<MotionSequence>> {
        let mut feats = BTreeMap::new();
        for e in episodes {
            if !feats.contains_key(e.scene_id.as_str()) {
                feats.insert(e.scene_id.as_str(), self.encode_scene(data.scene(&e.scene_id)?)?);
            }
        }
        episodes
            .par_iter()
            .map(|e| {
                if e.past.len() != INPUT_FRAMES {
                    return Err(Error::contract(format!("episode has {} past frames, expected {INPUT_FRAMES}", e.past.len())));
                }
                let ep = PreparedEpisode::new(&self.config, template, data.scene(&e.scene_id)?, &e.past, &e.gaze)?;
                Ok(self.predict_prepared(&feats[e.scene_id.as_str()], &ep)?.0)
            })
            .collect()
    }
}

/// Returns the ground-truth future.
pub struct GtEcho;

impl Predictor for GtEcho {
    fn tag(&self) -> String {
        "gt_echo".into()
    }

    fn predict_all(&self, _: &Dataset, episodes: &[&Episode], _: &BodyTemplate) -> Result<Vec<MotionSequence>> {
        Ok(episodes.iter().map(|e| e.future.clone()).collect())
    }
}

/// Repeats the last observed pose over the horizon.
pub struct LastPose;

impl Predictor for LastPose {
    fn tag(&self) -> String {
        "last_pose".into()
    }

    fn predict_all(&self, _: &Dataset, episodes: &[&Episode], _: &BodyTemplate) -> Result<Vec<MotionSequence>> {
        episodes
            .iter()
            .map(|e| MotionSequence::new(vec![e.past.last().clone(); HORIZON]))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub destination: Vec<MetricRow>,
    pub path: Vec<MetricRow>,
}

/// Mean destination and path metrics of every predictor on every split,
/// rows ordered predictor-major.
pub fn evaluate(data: &Dataset, predictors: &[&dyn Predictor], splits: &[Split], template: &BodyTemplate) -> Result<Evaluation> {
    let mut out = Evaluation::default();
    for p in predictors {
        for &split in splits {
            let episodes = data.split(split);
            if episodes.is_empty() {
                return Err(Error::contract(format!("dataset has no '{split}' episodes")));
            }
            let preds = p.predict_all(data, &episodes, template)?;
            let per: Vec<(Metrics, Metrics)> = preds
                .par_iter()
                .zip(episodes.par_iter())
                .map(|(pred, e)| Ok((destination_error(pred, &e.future, template)?, path_error(pred, &e.future, template)?)))
                .collect::<Result<_>>()?;
            let n = 1.0 / per.len() as f64;
            let (dest, path) = per
                .iter()
                .fold((Metrics::default(), Metrics::default()), |(a, b), (d, q)| (a.add(*d), b.add(*q)));
            out.destination.push(MetricRow::new(p.tag(), split, dest.scale(n)));
            out.path.push(MetricRow::new(p.tag(), split, path.scale(n)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    /// Index into the dataset's episode list.
    pub episode: usize,
    pub map: Tensor,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub dataset_hash: String,
    pub evaluation: Evaluation,
    pub logs: Vec<(Variant, TrainLog)>,
    pub attention: Vec<AttentionDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    /// Shared budget; its `variant` field is overridden per run.
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub splits: Vec<Split>,
    /// Attention maps are dumped for the first this many test episodes.
    pub attention_episodes: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train: TrainConfig::default(),
            variants: Variant::ALL.to_vec(),
            splits: vec![Split::TestKnown, Split::TestNew],
            attention_episodes: 4,
        }
    }
}

/// Trains every variant with the same seed and budget, then evaluates all
/// of them on the same splits.
pub fn run_ablation(data: &Dataset, config: &AblationConfig, template: &BodyTemplate) -> Result<AblationReport> {
    let mut models = Vec::with_capacity(config.variants.len());
    let mut logs = Vec::with_capacity(config.variants.len());
    for &variant in &config.variants {
        let cfg = TrainConfig {
            variant,
            ..config.train.clone()
        };
        let (params, log) = train(data, &cfg, template, None)?;
        models.push(params);
        logs.push((variant, log));
    }
    let predictors: Vec<&dyn Predictor> = models.iter().map(|m| m as &dyn Predictor).collect();
    let evaluation = evaluate(data, &predictors, &config.splits, template)?;
    let mut attention = Vec::new();
    if let Some(full) = models.iter().find(|m| m.variant == Variant::Full) {
        let test = data
            .episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| config.splits.contains(&e.split))
            .take(config.attention_episodes);
        for (i, e) in test {
            let map = full.attention_map(e, template, data.scene(&e.scene_id)?)?;
            attention.push(AttentionDump { episode: i, map });
        }
    }
    Ok(AblationReport {
        dataset_hash: data.content_hash(),
        evaluation,
        logs,
        attention,
    })
}

pub fn metrics_table(rows: &[MetricRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.variant, r.split, r.trans, r.ori, r.mpjpe).expect("write to string");
    }
    out
}

pub fn parse_metrics_table(text: &str, source_name: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => return Err(Error::parse(source_name, 1, format!("expected header '{METRICS_HEADER}'"))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let err = |m: String| Error::parse(source_name, i + 1, m);
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number '{s}'")));
            Ok(MetricRow {
                variant: f[0].to_string(),
                split: f[1].parse().map_err(|e: Error| err(e.to_string()))?,
                trans: num(f[2])?,
                ori: num(f[3])?,
                mpjpe: num(f[4])?,
            })
        })
        .collect()
}

/// Number of heatmap cells drawn by [`attention_svg`] for a 10×6 map.
pub const HEATMAP_CELLS: usize = HORIZON * INPUT_FRAMES;

/// Grayscale heatmap, one cell per weight; brighter means larger weight.
/// Rows are predicted frames, columns are input frames.
pub fn attention_svg(map: &Tensor, title: &str) -> String {
    const CELL: usize = 24;
    const LEFT: usize = 40;
    const TOP: usize = 30;
    let (rows, cols) = (map.rows(), map.cols());
    let max = map.data().iter().cloned().fold(0.0, f64::max);
    let (w, h) = (LEFT + cols * CELL + 90, TOP + rows * CELL + 40);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    writeln!(s, "<title>{}</title>", xml_escape(title)).unwrap();
    writeln!(s, "<text x=\"{LEFT}\" y=\"18\" font-size=\"12\">{}</text>", xml_escape(title)).unwrap();
    for i in 0..rows {
        for j in 0..cols {
            let v = map.get(i, j);
            let level = if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 };
            writeln!(
                s,
                "<rect class=\"cell\" x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"rgb({level},{level},{level})\"><title>out {i} / in {j}: {v}</title></rect>",
                LEFT + j * CELL,
                TOP + i * CELL
            )
            .unwrap();
        }
        writeln!(s, "<text x=\"4\" y=\"{}\" font-size=\"10\">t+{}</text>", TOP + i * CELL + 16, i + 1).unwrap();
    }
    for j in 0..cols {
        writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\">g{}</text>", LEFT + j * CELL + 6, TOP + rows * CELL + 14, j + 1).unwrap();
    }
    let lx = LEFT + cols * CELL + 20;
    s.push_str("<defs><linearGradient id=\"legend\" x1=\"0\" y1=\"1\" x2=\"0\" y2=\"0\"><stop offset=\"0\" stop-color=\"black\"/><stop offset=\"1\" stop-color=\"white\"/></linearGradient></defs>\n");
    writeln!(s, "<rect class=\"legend\" x=\"{lx}\" y=\"{TOP}\" width=\"14\" height=\"{}\" fill=\"url(#legend)\" stroke=\"gray\"/>", rows * CELL).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\">{max:.3}</text>", lx + 18, TOP + 8).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"10\">0</text>", lx + 18, TOP + rows * CELL).unwrap();
    writeln!(s, "<text x=\"{LEFT}\" y=\"{}\" font-size=\"10\">brighter means larger weight</text>", h - 6).unwrap();
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `metrics.csv` plus `attention_<episode>.svg` per map into `dir`
/// and returns the written paths.
pub fn emit_report(rows: &[MetricRow], attention: &[AttentionDump], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(1 + attention.len());
    let table = dir.join("metrics.csv");
    std::fs::write(&table, metrics_table(rows))?;
    written.push(table);
    for a in attention {
        let path = dir.join(format!("attention_{}.svg", a.episode));
        std::fs::write(&path, attention_svg(&a.map, &format!("episode {} attention", a.episode)))?;
        written.push(path);
    }
    Ok(written)
}
