//! `armot`: simulate data, train, track, evaluate, and run ablation sweeps.
//!
//! Config precedence, lowest first: built-in defaults, `--config` file,
//! `--set key=value` overrides, then the dedicated flags (`--seed`, `--mode`,
//! `--tau-loss`, `--tau-det`). Every successful run writes `manifest.json`
//! into its output directory; exit code 0 means the manifest exists.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use armot::ablation::{run_ablation, AblationSuite};
use armot::checkpoint;
use armot::config::RunConfig;
use armot::inference::{track_video, TrackMode};
use armot::metrics::evaluate;
use armot::pipeline::train_model;
use armot::simdata::{
    generate_suite, load_video, read_motchallenge, save_video, write_motchallenge, Video,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "armot",
    version,
    about = "Autoregressive multi-object tracking"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides a config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Seeds data generation, initialisation, and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    overwrite: bool,
    #[arg(long, global = true, value_parser = ["window", "tmf"])]
    mode: Option<String>,
    #[arg(long, global = true)]
    tau_loss: Option<usize>,
    #[arg(long, global = true)]
    tau_det: Option<f64>,
    /// Only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    device: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic suite (`data.*` keys) as one directory per video.
    Simulate,
    /// Train a model on simulated videos and save `model.ckpt`.
    Train {
        /// Directory written by `simulate`; generated from `data.*` when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Track videos with a checkpoint and write one MOTChallenge file per video.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A video directory or a directory of them.
        #[arg(long)]
        videos: PathBuf,
    },
    /// Score a prediction file against a ground-truth file.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Run a named sweep: tauloss, tmf, raa, tokens, alpha, or all.
    Ablate { suite: String },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: String,
    seed: Option<u64>,
    version: String,
    outputs: Vec<PathBuf>,
    seconds: f64,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            out.push(("seed".into(), seed.to_string()));
        }
        if let Some(m) = &self.mode {
            out.push(("infer.mode".into(), m.clone()));
        }
        if let Some(t) = self.tau_loss {
            out.push(("infer.tau_loss".into(), t.to_string()));
        }
        if let Some(t) = self.tau_det {
            out.push(("infer.tau_det".into(), format!("{t:?}")));
        }
        Ok(out)
    }

    fn run_config(&self) -> Result<RunConfig> {
        if self.device != "cpu" {
            bail!(
                "device {:?} is not available; only cpu is supported",
                self.device
            );
        }
        let cfg = RunConfig::load(self.config.as_deref(), &self.overrides()?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        let out = self.out.as_deref().context("--out is required")?;
        if out.is_file() {
            bail!(
                "output path {} is a file, expected a directory",
                out.display()
            );
        }
        let non_empty = out
            .read_dir()
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if non_empty && !self.overwrite {
            bail!(
                "output directory {} is not empty; pass --overwrite to replace its contents",
                out.display()
            );
        }
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(out)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}

/// Video directories under `root`, or `root` itself when it holds a video.
fn video_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join("video.json").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading video directory {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("video.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no videos found under {}", root.display());
    }
    Ok(dirs)
}

fn load_videos(root: &Path) -> Result<Vec<Video>> {
    video_dirs(root)?
        .iter()
        .map(|d| load_video(d).map_err(Into::into))
        .collect()
}

fn run(cli: &Cli) -> Result<PathBuf> {
    let started = Instant::now();
    let common = &cli.common;
    let cfg = common.run_config()?;
    let mut outputs = Vec::new();
    let (name, out) = match &cli.command {
        Command::Simulate => {
            let out = common.out_dir()?;
            for v in generate_suite(&cfg.data)? {
                let dir = out.join(&v.name);
                save_video(&v, &dir)?;
                outputs.push(dir);
            }
            log::info!("wrote {} videos to {}", outputs.len(), out.display());
            ("simulate", out)
        }
        Command::Train { data } => {
            let videos = match data {
                Some(d) => load_videos(d)?,
                None => generate_suite(&cfg.data)?,
            };
            let out = common.out_dir()?;
            let log_path = out.join("train_log.csv");
            let mut log_file = BufWriter::new(
                fs::File::create(&log_path)
                    .with_context(|| format!("creating {}", log_path.display()))?,
            );
            let (model, report) = train_model::<f32>(&cfg, &videos, &mut log_file)?;
            log_file.flush()?;
            log::info!(
                "trained {} steps in {:.1}s; epoch ce {:?}",
                report.steps,
                report.seconds,
                report.epoch_ce
            );
            let ckpt = out.join("model.ckpt");
            let meta = serde_json::json!({ "train": cfg.train, "report": report });
            checkpoint::save(&model, meta, &ckpt)?;
            outputs.extend([ckpt, log_path]);
            ("train", out)
        }
        Command::Track {
            checkpoint: ckpt,
            videos,
        } => {
            let (model, _) = checkpoint::load::<f32>(ckpt)?;
            if cfg.infer.mode == TrackMode::Tmf && !model.cfg.tmf {
                bail!(
                    "checkpoint {} has no temporal memory; use --mode window",
                    ckpt.display()
                );
            }
            let videos = load_videos(videos)?;
            let out = common.out_dir()?;
            for v in &videos {
                let result = track_video(&model, v, &cfg.infer)?;
                let path = out.join(format!("{}.txt", v.name));
                write_motchallenge(&result, &path)?;
                outputs.push(path);
            }
            ("track", out)
        }
        Command::Eval { gt, pred } => {
            let gt = read_motchallenge(gt)?;
            let pred = read_motchallenge(pred)?;
            let report = evaluate(&gt, &pred)?;
            print!("{}", report.to_text());
            let out = common.out_dir()?;
            let text = out.join("report.txt");
            write_atomic(&text, report.to_text().as_bytes())?;
            let json = out.join("report.json");
            write_atomic(&json, &serde_json::to_vec_pretty(&report)?)?;
            outputs.extend([text, json]);
            ("eval", out)
        }
        Command::Ablate { suite } => {
            let suites = if suite == "all" {
                AblationSuite::ALL.to_vec()
            } else {
                vec![suite.parse::<AblationSuite>()?]
            };
            let out = common.out_dir()?;
            let table = run_ablation::<f32>(&suites, &cfg, &mut std::io::sink())?;
            print!("{}", table.to_text());
            let text = out.join("ablation.txt");
            write_atomic(&text, table.to_text().as_bytes())?;
            let json = out.join("ablation.json");
            write_atomic(&json, &serde_json::to_vec_pretty(&table)?)?;
            outputs.extend([text, json]);
            ("ablate", out)
        }
    };
    let config_path = out.join("config.toml");
    write_atomic(&config_path, cfg.to_flat().as_bytes())?;
    outputs.push(config_path);
    let manifest = RunManifest {
        command: name.to_string(),
        config: cfg.to_flat(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        seconds: started.elapsed().as_secs_f64(),
    };
    let path = out.join("manifest.json");
    write_atomic(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ARMOT_LOG_LEVEL", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(manifest) => {
            log::info!("manifest written to {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
