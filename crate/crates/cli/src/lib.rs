//! `gimo` subcommands. Each one is a thin wrapper over a `gimo-core`
//! operation that also writes a resolved-config snapshot next to its
//! outputs.

pub mod config;

use clap::{Parser, Subcommand};
use config::{snapshot, RunConfig};
use gimo_core::bodymodel::BodyTemplate;
use gimo_core::evalkit::{self, AblationConfig, GtEcho, LastPose, Predictor};
use gimo_core::fusion::{ModelParams, Variant};
use gimo_core::synthgen::{build_dataset, Dataset};
use gimo_core::trainer::{train, TrainLog, TrainManifest};
use gimo_core::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const THREADS_ENV: &str = "GIMO_THREADS";
pub const SNAPSHOT_FILE: &str = "resolved_config.json";
pub const CHECKPOINT_FILE: &str = "model.gimo";

#[derive(Debug, Parser)]
#[command(name = "gimo", version, about = "Predict human motion from past poses, eye gaze and scene geometry")]
pub struct Cli {
    /// Worker threads for generation and evaluation (default 1, or $GIMO_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic dataset directory.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `gen.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one variant; writes a checkpoint, manifest, and loss log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Overrides `train.variant`.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Destination and path metrics of one or more checkpoints.
    ///
    /// `gt_echo` and `last_pose` name the built-in oracle predictors.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        ckpt: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate all five variants with one budget.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heatmap of the prediction head's attention over the input frames.
    Attmap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Index into the dataset's episode list.
        #[arg(long)]
        episode: usize,
        /// SVG file to write.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// `--threads`, else `$GIMO_THREADS`, else 1.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Contract(format!("{THREADS_ENV}='{v}' is not a thread count")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(Error::Contract("thread count must be positive".into()));
    }
    Ok(n)
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = resolve_threads(cli.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate { config, out, seed } => cmd_generate(config.as_deref(), &out, seed),
        Command::Train {
            data,
            variant,
            config,
            out,
        } => cmd_train(&data, variant, config.as_deref(), &out),
        Command::Eval { data, ckpt, config, out } => cmd_eval(&data, &ckpt, config.as_deref(), &out),
        Command::Ablate { data, config, out } => cmd_ablate(&data, config.as_deref(), &out),
        Command::Attmap { data, ckpt, episode, out } => cmd_attmap(&data, &ckpt, episode, &out),
    })
}

fn write_snapshot(dir: &Path, command: &str, cfg: &RunConfig, inputs: &BTreeMap<String, String>) -> Result<()> {
    std::fs::write(dir.join(SNAPSHOT_FILE), snapshot(command, cfg, inputs))?;
    Ok(())
}

fn read_data(dir: &Path) -> Result<Dataset> {
    Dataset::read(dir)
}

pub fn log_csv(log: &TrainLog) -> String {
    let mut s = String::from("step,trans,ori,pose,total\n");
    for r in &log.steps {
        writeln!(s, "{},{},{},{},{}", r.step, r.loss.trans, r.loss.ori, r.loss.pose, r.loss.total).expect("write to string");
    }
    s
}

pub fn cmd_generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.gen.seed = s;
    }
    let data = build_dataset(&cfg.gen)?;
    data.write(out)?;
    write_snapshot(out, "generate", &cfg, &BTreeMap::new())
}

pub fn cmd_train(data_dir: &Path, variant: Option<Variant>, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(v) = variant {
        cfg.train.variant = v;
    }
    let data = read_data(data_dir)?;
    std::fs::create_dir_all(out)?;
    let (params, log) = train(&data, &cfg.train, &BodyTemplate::standard(), Some(out))?;
    params.save(&out.join(CHECKPOINT_FILE))?;
    let manifest = TrainManifest {
        config: cfg.train.clone(),
        dataset_hash: data.content_hash(),
        checkpoint_hash: params.content_hash(),
        final_train: log.final_train,
    };
    std::fs::write(out.join("train_manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    std::fs::write(out.join("log.csv"), log_csv(&log))?;
    let inputs = BTreeMap::from([("data".to_string(), data.content_hash())]);
    write_snapshot(out, "train", &cfg, &inputs)
}

fn load_predictor(name: &str) -> Result<(Box<dyn Predictor>, String)> {
    match name {
        "gt_echo" => Ok((Box::new(GtEcho), "builtin".into())),
        "last_pose" => Ok((Box::new(LastPose), "builtin".into())),
        path => {
            let p = ModelParams::load(Path::new(path))?;
            let hash = p.content_hash();
            Ok((Box::new(p), hash))
        }
    }
}

pub fn cmd_eval(data_dir: &Path, ckpts: &[String], config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let data = read_data(data_dir)?;
    let mut inputs = BTreeMap::from([("data".to_string(), data.content_hash())]);
    let mut predictors = Vec::with_capacity(ckpts.len());
    for (i, c) in ckpts.iter().enumerate() {
        let (p, hash) = load_predictor(c)?;
        inputs.insert(format!("ckpt.{i}.{}", p.tag()), hash);
        predictors.push(p);
    }
    let refs: Vec<&dyn Predictor> = predictors.iter().map(|p| p.as_ref()).collect();
    let ev = evalkit::evaluate(&data, &refs, &cfg.eval.splits, &BodyTemplate::standard())?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("metrics.csv"), evalkit::metrics_table(&ev.destination))?;
    std::fs::write(out.join("path_metrics.csv"), evalkit::metrics_table(&ev.path))?;
    write_snapshot(out, "eval", &cfg, &inputs)
}

pub fn cmd_ablate(data_dir: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let data = read_data(data_dir)?;
    let ab = AblationConfig {
        train: cfg.train.clone(),
        variants: Variant::ALL.to_vec(),
        splits: cfg.eval.splits.clone(),
        attention_episodes: cfg.eval.attention_episodes,
    };
    let report = evalkit::run_ablation(&data, &ab, &BodyTemplate::standard())?;
    evalkit::emit_report(&report.evaluation.destination, &report.attention, out)?;
    std::fs::write(out.join("path_metrics.csv"), evalkit::metrics_table(&report.evaluation.path))?;
    for (v, log) in &report.logs {
        std::fs::write(out.join(format!("log_{v}.csv")), log_csv(log))?;
    }
    let inputs = BTreeMap::from([("data".to_string(), report.dataset_hash)]);
    write_snapshot(out, "ablate", &cfg, &inputs)
}

pub fn cmd_attmap(data_dir: &Path, ckpt: &Path, episode: usize, out: &Path) -> Result<()> {
    let data = read_data(data_dir)?;
    let params = ModelParams::load(ckpt)?;
    let e = data
        .episodes
        .get(episode)
        .ok_or_else(|| Error::Contract(format!("episode {episode} out of range (dataset has {})", data.episodes.len())))?;
    let map = params.attention_map(e, &BodyTemplate::standard(), data.scene(&e.scene_id)?)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, evalkit::attention_svg(&map, &format!("episode {episode} attention")))?;
    let inputs = BTreeMap::from([
        ("data".to_string(), data.content_hash()),
        ("ckpt".to_string(), params.content_hash()),
        ("episode".to_string(), episode.to_string()),
    ]);
    let cfg = RunConfig {
        train: gimo_core::trainer::TrainConfig {
            variant: params.variant,
            model: params.config.clone(),
            ..Default::default()
        },
        ..RunConfig::default()
    };
    let snap = out.with_extension("resolved.json");
    std::fs::write(snap, snapshot("attmap", &cfg, &inputs))?;
    Ok(())
}
