use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use patchrank::features::{BoundingBox, GRID_COLS, GRID_ROWS};
use patchrank::io;
use patchrank::model::objective;
use patchrank::solver::{solve, Mode};
use patchrank::synth::{gen_instance, gen_sequence, SyntheticSpec};
use patchrank::tracker::{track, TrackerParams};
use patchrank::{evaluate, Params, RankingInstance};
use serde_json::json;

#[derive(Parser)]
#[command(name = "patchrank", version, about = "Patch weighting by graph-optimized ranking, and a tracker built on it")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one ranking instance stored as JSON.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value = "full")]
        mode: Mode,
        /// Per-iteration trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Output JSON with v, w, b and run statistics.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Parameter override `name=value`; repeatable.
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
    },
    /// Track a target through a directory of PPM/PGM frames.
    Track {
        #[arg(long)]
        frames: PathBuf,
        /// Initial box `x,y,w,h` on the first frame.
        #[arg(long)]
        init: BoundingBox,
        /// Trajectory output, one `x,y,w,h,confidence` line per frame.
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-frame patch weight maps (PGM).
        #[arg(long)]
        heatmaps: Option<PathBuf>,
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
    },
    /// Generate a synthetic ranking instance.
    SynthInstance {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value_t = 2)]
        clusters: usize,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.0)]
        corruption: f64,
        #[arg(long = "edge-noise", default_value_t = 0.0)]
        edge_noise: f64,
        #[arg(long, default_value_t = 4)]
        queries: usize,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth labels, one 0/1 per line.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
    },
    /// Generate a synthetic tracking sequence (frames and gt.txt).
    SynthSeq {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 2)]
        motion: i32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trajectory against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

fn split_param(raw: &str) -> Result<(&str, &str)> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => bail!("--param expects name=value, got {raw:?}"),
    }
}

fn apply_params(params: &mut Params, overrides: &[String]) -> Result<()> {
    for raw in overrides {
        let (k, v) = split_param(raw)?;
        params.set(k, v)?;
    }
    params.validate()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve { instance, mode, trace, weights, params } => {
            let text = fs::read_to_string(&instance).with_context(|| format!("reading {}", instance.display()))?;
            let mut inst = RankingInstance::from_json(&text)?;
            apply_params(&mut inst.params, &params)?;
            let result = solve(&inst, mode)?;
            if let Some(path) = trace {
                result.write_trace_csv(BufWriter::new(File::create(&path)?))?;
            }
            let obj = objective(&result.state, &inst)?;
            let summary = json!({
                "mode": mode.to_string(),
                "iterations": result.iterations,
                "converged": result.converged,
                "objective": obj,
                "v": result.ranking().as_slice(),
                "w": result.predictor().as_slice(),
                "b": result.bias(),
            });
            if let Some(path) = weights {
                fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
            }
            println!(
                "mode={mode} iterations={} converged={} objective={obj:.6e}",
                result.iterations, result.converged
            );
        }
        Command::Track { frames, init, out, heatmaps, params } => {
            let mut tp = TrackerParams::default();
            for raw in &params {
                let (k, v) = split_param(raw)?;
                tp.set(k, v)?;
            }
            let images = io::read_frames(&frames)?;
            let traj = track(&images, init, &tp)?;
            io::write_scored_boxes(&out, &traj.scored_boxes())?;
            if let Some(dir) = heatmaps {
                fs::create_dir_all(&dir)?;
                for (k, entry) in traj.entries.iter().enumerate() {
                    let map = io::weight_map(&entry.weights, GRID_ROWS, GRID_COLS)?;
                    io::write_pgm(&dir.join(format!("weights_{:04}.pgm", k + 1)), &map)?;
                }
            }
            let lost = traj.entries.iter().filter(|e| e.lost).count();
            println!("frames={} lost={lost}", traj.len());
        }
        Command::SynthInstance { seed, n, p, clusters, separation, corruption, edge_noise, queries, out, labels, params } => {
            let spec = SyntheticSpec {
                seed,
                n,
                p,
                clusters,
                separation,
                corruption_fraction: corruption,
                edge_noise,
                queries,
                ..SyntheticSpec::default()
            };
            let mut s = gen_instance(&spec)?;
            apply_params(&mut s.instance.params, &params)?;
            fs::write(&out, s.instance.to_json()?)?;
            if let Some(path) = labels {
                let text: String = s.labels.iter().map(|&l| if l { "1\n" } else { "0\n" }).collect();
                fs::write(path, text)?;
            }
        }
        Command::SynthSeq { seed, frames, motion, out } => {
            let seq = gen_sequence(&SyntheticSpec { seed, frames, motion, ..SyntheticSpec::default() })?;
            seq.write_to(&out)?;
        }
        Command::Eval { pred, gt } => {
            let s = evaluate(&io::read_boxes(&pred)?, &io::read_boxes(&gt)?)?;
            println!("PR@20={:.6} SR_AUC={:.6}", s.precision, s.success_auc);
        }
    }
    Ok(())
}
