//! The `meshmap` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Progress and
//! warnings go to standard error; results go to files or standard output.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{load_config, PipelineConfig};
use crate::dataset_io::{degrade_sequence, export_mesh, import_ply, load_sequence, read_trajectory, LoadOptions, MeshFormat};
use crate::evaluation::{ate, map_stats, timing_report, MapStats, TimingLog, TimingSummary};
use crate::features::detect_features;
use crate::frame::to_gray;
use crate::map_expansion::{expand, ExpansionStats, MeshMap};
use crate::underwater::Enhancement;

#[derive(Debug, Parser)]
#[command(name = "meshmap", version, about = "Incremental RGB-D mesh mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a colored mesh from a posed RGB-D sequence.
    Map {
        /// Sequence directory (rgb.txt, depth.txt, groundtruth.txt).
        sequence: PathBuf,
        /// Output mesh; `.ply` (binary) or `.obj`.
        output: PathBuf,
        /// Pipeline config file; absent keys use defaults (see `config-dump`).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Color enhancement: `none`, `baseline` or `dir=PATH`.
        #[arg(long, default_value = "none", value_parser = parse_enhancement)]
        enhance: Enhancement,
        /// Sliding window length in frames [default: from config, 25].
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        window: Option<u64>,
        /// Stop after this many frames.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        max_frames: Option<u64>,
        /// Per-frame statistics as JSON [default: OUTPUT.stats.json].
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Stage timing summary [default: OUTPUT.timing.txt].
        #[arg(long)]
        timing_out: Option<PathBuf>,
    },
    /// Write an underwater-looking copy of a sequence.
    Degrade {
        sequence: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Attenuation `R,G,B` in 1/m [default: from config, 0.6,0.2,0.1].
        #[arg(long, value_parser = parse_triple)]
        beta: Option<[f64; 3]>,
        /// Veiling light `R,G,B` [default: from config, 0.1,0.3,0.35].
        #[arg(long, value_parser = parse_triple)]
        backlight: Option<[f64; 3]>,
    },
    /// Absolute trajectory error between two trajectory files.
    Eval {
        estimate: PathBuf,
        groundtruth: PathBuf,
        /// Timestamp association tolerance, seconds.
        #[arg(long, default_value_t = 0.02)]
        max_dt: f64,
    },
    /// Vertex and triangle counts of a PLY mesh.
    Stats { mesh: PathBuf },
    /// Print the effective configuration.
    ConfigDump {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_enhancement(s: &str) -> std::result::Result<Enhancement, String> {
    match s {
        "none" => Ok(Enhancement::Identity),
        "baseline" => Ok(Enhancement::Baseline),
        _ => match s.strip_prefix("dir=") {
            Some(p) if !p.is_empty() => Ok(Enhancement::ExternalDir(PathBuf::from(p))),
            _ => Err("expected `none`, `baseline` or `dir=PATH`".into()),
        },
    }
}

fn parse_triple(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

/// One frame's line in the stats file.
#[derive(Debug, Clone, Serialize)]
pub struct FrameRecord {
    pub timestamp: f64,
    /// Features detected on the whole (possibly enhanced) color image.
    pub features: usize,
    pub expansion: ExpansionStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub frames: usize,
    pub map: MapStats,
    pub skipped_frames: usize,
    pub frames_with_diagnostics: usize,
    pub mesh: PathBuf,
    pub stats: PathBuf,
    pub timing: PathBuf,
    pub timing_summary: TimingSummary,
}

#[derive(Debug, Clone)]
pub struct MapArgs {
    pub sequence: PathBuf,
    pub output: PathBuf,
    pub config: PipelineConfig,
    pub enhance: Enhancement,
    pub max_frames: Option<usize>,
    pub stats_out: Option<PathBuf>,
    pub timing_out: Option<PathBuf>,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn config_or_default(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => load_config(p).context("config"),
        None => Ok(PipelineConfig::default()),
    }
}

/// Ingest, enhance, expand frame by frame, export.
pub fn cmd_map(args: &MapArgs) -> Result<RunSummary> {
    let cfg = &args.config;
    cfg.validate().context("config")?;
    let format = MeshFormat::from_path(&args.output)
        .with_context(|| format!("output {}: expected a .ply or .obj file", args.output.display()))?;
    let opts = LoadOptions {
        enhancement: args.enhance.clone(),
        ..LoadOptions::from_config(cfg)
    };
    let seq = load_sequence(&args.sequence, &opts).context("ingest")?;
    if seq.manifest().skipped > 0 {
        eprintln!(
            "warning: skipped {} frames without matching depth or pose",
            seq.manifest().skipped
        );
    }
    let total = args.max_frames.map_or(seq.len(), |m| m.min(seq.len()));
    let (cam, exp, thr, smp) = (cfg.camera(), cfg.expansion(), cfg.thresholds(), cfg.sampling());

    let mut map = MeshMap::new();
    let mut records = Vec::with_capacity(total);
    let mut log = TimingLog::new();
    for (i, frame) in seq.prefetch().take(total).enumerate() {
        let frame = frame.with_context(|| format!("ingest frame {i}"))?;
        let t = Instant::now();
        let features = detect_features(&to_gray(&frame.color), &smp, None)
            .with_context(|| format!("features frame {i}"))?
            .len();
        let feature_ms = t.elapsed().as_secs_f64() * 1e3;
        let stats = expand(&mut map, &frame, &cam, &exp, &thr, &smp).with_context(|| format!("expand frame {i}"))?;
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        let tm = &stats.timings;
        log.record([
            ("features", feature_ms),
            ("project", ms(tm.project)),
            ("detect", ms(tm.detect)),
            ("classify", ms(tm.classify)),
            ("triangulate", ms(tm.triangulate)),
            ("reject", ms(tm.reject)),
            ("total", ms(tm.total)),
        ]);
        if let Some(d) = &stats.diagnostic {
            eprintln!("warning: frame {i}: {d}");
        }
        if (i + 1) % 25 == 0 || i + 1 == total {
            eprintln!(
                "frame {}/{}: {} vertices, {} triangles",
                i + 1,
                total,
                map.vertices().len(),
                map.triangles().len()
            );
        }
        records.push(FrameRecord {
            timestamp: frame.timestamp,
            features,
            expansion: stats,
        });
    }
    if records.is_empty() {
        bail!("ingest: sequence {} has no usable frames", args.sequence.display());
    }

    export_mesh(&map, &args.output, format).context("export")?;
    let timing_summary = timing_report(&log).context("timing")?;
    let stats_path = args.stats_out.clone().unwrap_or_else(|| sibling(&args.output, ".stats.json"));
    let timing_path = args.timing_out.clone().unwrap_or_else(|| sibling(&args.output, ".timing.txt"));
    let summary = RunSummary {
        frames: records.len(),
        map: map_stats(&map),
        skipped_frames: seq.manifest().skipped,
        frames_with_diagnostics: records.iter().filter(|r| r.expansion.diagnostic.is_some()).count(),
        mesh: args.output.clone(),
        stats: stats_path.clone(),
        timing: timing_path.clone(),
        timing_summary,
    };
    let stats_json = serde_json::json!({ "summary": &summary, "frames": &records });
    fs::write(&stats_path, serde_json::to_string_pretty(&stats_json)?)
        .with_context(|| format!("write {}", stats_path.display()))?;
    fs::write(&timing_path, summary.timing_summary.to_key_values())
        .with_context(|| format!("write {}", timing_path.display()))?;
    Ok(summary)
}

pub fn cmd_degrade(sequence: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<usize> {
    let s = degrade_sequence(sequence, out_dir, &cfg.water(), cfg.depth_scale, cfg.max_dt).context("degrade")?;
    Ok(s.degraded)
}

pub fn cmd_eval(estimate: &Path, groundtruth: &Path, max_dt: f64) -> Result<String> {
    let est = read_trajectory(estimate).context("eval")?;
    let gt = read_trajectory(groundtruth).context("eval")?;
    Ok(ate(&est, &gt, max_dt).context("eval")?.to_key_values())
}

pub fn cmd_stats(mesh: &Path) -> Result<MapStats> {
    Ok(map_stats(&import_ply(mesh).context("stats")?))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Map {
            sequence,
            output,
            config,
            enhance,
            window,
            max_frames,
            stats_out,
            timing_out,
        } => {
            let mut config = config_or_default(config.as_deref())?;
            if let Some(n) = window {
                config.window_size = n as usize;
            }
            let summary = cmd_map(&MapArgs {
                sequence,
                output,
                config,
                enhance,
                max_frames: max_frames.map(|m| m as usize),
                stats_out,
                timing_out,
            })?;
            println!(
                "frames={} vertices={} triangles={} dense_points={} skipped={}",
                summary.frames, summary.map.vertices, summary.map.triangles, summary.map.dense_points, summary.skipped_frames
            );
        }
        Command::Degrade {
            sequence,
            out_dir,
            config,
            beta,
            backlight,
        } => {
            let mut config = config_or_default(config.as_deref())?;
            if let Some(b) = beta {
                config.beta = b;
            }
            if let Some(b) = backlight {
                config.backlight = b;
            }
            let n = cmd_degrade(&sequence, &out_dir, &config)?;
            eprintln!("degraded {n} frames into {}", out_dir.display());
        }
        Command::Eval {
            estimate,
            groundtruth,
            max_dt,
        } => println!("{}", cmd_eval(&estimate, &groundtruth, max_dt)?),
        Command::Stats { mesh } => println!("{}", cmd_stats(&mesh)?.to_key_values()),
        Command::ConfigDump { config } => print!("{}", config_or_default(config.as_deref())?.to_toml_string()),
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
