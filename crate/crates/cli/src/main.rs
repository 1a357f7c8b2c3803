use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use voidd_core::config::PipelineConfig;
use voidd_core::imgio::{read_manifest, read_pgm_dimensions};
use voidd_core::pipeline::{self, RunLayout, Tracking};
use voidd_core::synth::{generate, SceneSpec};
use voidd_core::Error;

/// Vessel-of-intervention detection in fluoroscopy sequences.
#[derive(Parser)]
#[command(name = "voidd", version)]
struct Cli {
    /// Pipeline configuration JSON; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Per-stage and per-frame timing on standard error.
    #[arg(long, short, global = true)]
    verbose: bool,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic scene: PGM frames, manifest and ground truth.
    Synth {
        /// Scene spec JSON; the built-in default scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Render the default scene without a guidewire.
        #[arg(long, conflicts_with = "spec")]
        tip_free: bool,
        /// Override the noise seed of the scene.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build the vessel graph of every reference phase.
    ExtractVessels {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Segment guidewire tip candidates in every navigation frame.
    ExtractTips {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Also write the min tree of every frame into this directory.
        #[arg(long)]
        dump_tree: Option<PathBuf>,
    },
    /// Match tips against the graphs and track the vessel of intervention.
    Track {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of graph_XX.json files; defaults to <manifest dir>/graphs.
        #[arg(long)]
        graphs: Option<PathBuf>,
        /// Directory of tips_XXX.json files; defaults to <manifest dir>/tips.
        #[arg(long)]
        tips: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        debug: DebugArgs,
    },
    /// Score a tracking result against ground truth.
    Evaluate {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// All stages from a manifest to the evaluation report.
    RunAll {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        debug: DebugArgs,
    },
}

#[derive(Args)]
struct DebugArgs {
    /// Write the ranked feature pairs of every frame into this directory.
    #[arg(long)]
    dump_pairs: Option<PathBuf>,
    /// Write tip and VOI masks of every detected frame into this directory.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

struct Ctx {
    cfg: PipelineConfig,
    verbose: bool,
}

impl Ctx {
    fn log(&self, msg: impl FnOnce() -> String) {
        if self.verbose {
            eprintln!("{}", msg());
        }
    }

    fn timed<T>(&self, stage: &str, f: impl FnOnce() -> voidd_core::Result<T>) -> voidd_core::Result<T> {
        let t0 = Instant::now();
        let out = f()?;
        self.log(|| format!("{stage}: {:.3} s", t0.elapsed().as_secs_f64()));
        Ok(out)
    }
}

fn report_tracking(ctx: &Ctx, tracking: &Tracking) {
    let n = tracking.matching_s.len().max(1) as f64;
    for (frame, s) in tracking.matching_s.iter().enumerate() {
        ctx.log(|| {
            format!(
                "frame {frame:3}: {} pairs, matching {:.1} ms",
                tracking.pairs[frame].len(),
                s * 1e3
            )
        });
    }
    let total: f64 = tracking.matching_s.iter().sum::<f64>() + tracking.assignment_s;
    ctx.log(|| {
        format!(
            "tracking: {:.4} s/frame (matching {:.4}, assignment {:.4})",
            total / n,
            tracking.matching_s.iter().sum::<f64>() / n,
            tracking.assignment_s / n
        )
    });
}

fn overlays(manifest_path: &Path, dir: &Path, result: &voidd_core::tracker::ResultFile) -> voidd_core::Result<()> {
    let m = read_manifest(manifest_path)?;
    let (w, h) = read_pgm_dimensions(&m.resolve(&m.navigation_frames[0].path))?;
    pipeline::write_overlays(dir, w, h, result)
}

fn run(cli: Cli) -> voidd_core::Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    let ctx = Ctx {
        cfg,
        verbose: cli.verbose,
    };
    let cfg = &ctx.cfg;
    match cli.cmd {
        Cmd::Synth {
            spec,
            tip_free,
            seed,
            out_dir,
        } => {
            let mut scene = match (&spec, tip_free) {
                (Some(p), _) => SceneSpec::read(p)?,
                (None, true) => SceneSpec::tip_free(),
                (None, false) => SceneSpec::default(),
            };
            if let Some(s) = seed {
                scene.seed = s;
            }
            ctx.timed("synth", || generate(&scene, &out_dir))?;
        }
        Cmd::ExtractVessels { manifest, out_dir } => {
            let m = read_manifest(&manifest)?;
            ctx.timed("extract-vessels", || pipeline::stage_extract_vessels(&m, cfg, &out_dir))?;
        }
        Cmd::ExtractTips {
            manifest,
            out_dir,
            dump_tree,
        } => {
            let m = read_manifest(&manifest)?;
            ctx.timed("extract-tips", || pipeline::stage_extract_tips(&m, cfg, &out_dir))?;
            if let Some(dir) = dump_tree {
                ctx.timed("dump-tree", || pipeline::dump_trees(&m, cfg, &dir))?;
            }
        }
        Cmd::Track {
            manifest,
            graphs,
            tips,
            out,
            debug,
        } => {
            let m = read_manifest(&manifest)?;
            let graphs = graphs.unwrap_or_else(|| m.resolve("graphs"));
            let tips = tips.unwrap_or_else(|| m.resolve("tips"));
            let (result, tracking) = ctx.timed("track", || {
                pipeline::stage_track(&m, cfg, &graphs, &tips, &out, debug.dump_pairs.as_deref())
            })?;
            report_tracking(&ctx, &tracking);
            if let Some(dir) = debug.overlay {
                overlays(&manifest, &dir, &result)?;
            }
        }
        Cmd::Evaluate {
            result,
            ground_truth,
            out,
        } => {
            let rep = ctx.timed("evaluate", || pipeline::stage_evaluate(&result, &ground_truth, cfg, &out))?;
            print!("{}", rep.table());
        }
        Cmd::RunAll {
            manifest,
            out_dir,
            debug,
        } => {
            let m = read_manifest(&manifest)?;
            let gt = m
                .ground_truth
                .as_ref()
                .map(|g| m.resolve(&g.voi_path))
                .ok_or_else(|| {
                    Error::Validation {
                        path: manifest.display().to_string(),
                        field: "ground_truth".into(),
                        message: "run-all needs a manifest with ground truth".into(),
                    }
                })?;
            let layout = RunLayout::new(&out_dir);
            ctx.timed("extract-vessels", || pipeline::stage_extract_vessels(&m, cfg, &layout.graphs))?;
            ctx.timed("extract-tips", || pipeline::stage_extract_tips(&m, cfg, &layout.tips))?;
            let (result, tracking) = ctx.timed("track", || {
                pipeline::stage_track(&m, cfg, &layout.graphs, &layout.tips, &layout.result, debug.dump_pairs.as_deref())
            })?;
            report_tracking(&ctx, &tracking);
            if let Some(dir) = debug.overlay {
                overlays(&manifest, &dir, &result)?;
            }
            let rep = ctx.timed("evaluate", || pipeline::stage_evaluate(&layout.result, &gt, cfg, &layout.report))?;
            print!("{}", rep.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
