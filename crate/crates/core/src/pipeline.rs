//! Stage functions chaining the modules, in memory and through files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{report, EvalReport, GroundTruth};
use crate::geom::{Point2, Polyline};
use crate::imgio::{read_manifest, read_pgm, write_pgm, GrayImage, SequenceManifest};
use crate::matching::{extract_feature_pairs, FeaturePair, PairRecord};
use crate::mintree::{build_min_tree, select_tip_components, TipComponent};
use crate::skeleton::{skeleton_to_curve, thin, BinaryMask, TipCandidate, TipCandidatesFile, NEIGHBORS};
use crate::synth::write_json;
use crate::tracker::{run_voidd, ResultFile, VoiddResult};
use crate::vesselmap::{extract_vessel_graph, VesselGraph};

/// Separable Gaussian blur with replicated borders, rounded back to the
/// input bit depth.
pub fn gaussian_smooth(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / sum).collect();
    let (w, h) = (img.width() as isize, img.height() as isize);
    let src = img.to_f64();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = (-r..=r)
                .map(|j| k[(j + r) as usize] * src[(y * w + (x + j).clamp(0, w - 1)) as usize])
                .sum();
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = (-r..=r)
                .map(|j| k[(j + r) as usize] * tmp[((y + j).clamp(0, h - 1) * w + x) as usize])
                .sum::<f64>()
                .round();
        }
    }
    GrayImage::from_f64(img.width(), img.height(), img.bit_depth(), &out).expect("same geometry")
}

/// Keeps the pixels of `comp` darker than `min + fraction · (level − min)`
/// and returns their largest 8-connected piece (earliest in raster order on
/// ties), in the component's local frame.
pub fn refine_component(img: &GrayImage, comp: &TipComponent, fraction: f64) -> BinaryMask {
    let (ox, oy) = comp.origin;
    let m = &comp.mask;
    let min = m.foreground().map(|(x, y)| img.get(x + ox, y + oy)).min().unwrap_or(0);
    let cut = f64::from(min) + fraction * (f64::from(comp.level) - f64::from(min));
    let dark = BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        m.get(x, y) && f64::from(img.get(x + ox, y + oy)) <= cut
    });
    let mut label = vec![usize::MAX; m.width() * m.height()];
    let mut best: Vec<(usize, usize)> = Vec::new();
    for (sx, sy) in dark.foreground() {
        if label[sy * m.width() + sx] != usize::MAX {
            continue;
        }
        label[sy * m.width() + sx] = 0;
        let mut comp_px = vec![(sx, sy)];
        let mut i = 0;
        while i < comp_px.len() {
            let (x, y) = comp_px[i];
            i += 1;
            for &(dx, dy) in &NEIGHBORS {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if dark.get_signed(nx, ny) && label[ny as usize * m.width() + nx as usize] == usize::MAX {
                    label[ny as usize * m.width() + nx as usize] = 0;
                    comp_px.push((nx as usize, ny as usize));
                }
            }
        }
        if comp_px.len() > best.len() {
            best = comp_px;
        }
    }
    let mut out = BinaryMask::new(m.width(), m.height());
    for (x, y) in best {
        out.set(x, y, true);
    }
    out
}

/// Tip candidates of one navigation frame, best elongation first.
pub fn extract_tips(img: &GrayImage, frame: usize, cfg: &PipelineConfig) -> Vec<TipCandidate> {
    let smooth = gaussian_smooth(img, cfg.candidates.presmooth_sigma);
    let tree = build_min_tree(&smooth, cfg.segmentation.connectivity);
    let mut out = Vec::new();
    for comp in select_tip_components(&tree, &cfg.segmentation) {
        if out.len() >= cfg.candidates.max_candidates {
            break;
        }
        let mask = refine_component(&smooth, &comp, cfg.candidates.cut_fraction);
        let Ok(local) = skeleton_to_curve(&thin(&mask)) else {
            continue;
        };
        let (ox, oy) = (comp.origin.0 as f64, comp.origin.1 as f64);
        let pts = local.points().iter().map(|p| Point2::new(p.x + ox, p.y + oy));
        let Ok(curve) = Polyline::from_points_dedup(pts) else {
            continue;
        };
        if curve.length() < cfg.candidates.min_length_px {
            continue;
        }
        out.push(TipCandidate {
            curve,
            score: comp.score,
            source_frame: frame,
        });
    }
    out
}

/// Vessel graphs of every reference phase, indexed by phase.
pub fn extract_graphs(manifest: &SequenceManifest, cfg: &PipelineConfig) -> Result<Vec<VesselGraph>> {
    let images: Vec<GrayImage> = manifest
        .reference_paths_by_phase()
        .par_iter()
        .map(read_pgm)
        .collect::<Result<_>>()?;
    images
        .par_iter()
        .enumerate()
        .map(|(phase, img)| extract_vessel_graph(img, phase, &cfg.vessels))
        .collect()
}

/// Tip candidates of every navigation frame.
pub fn extract_all_tips(manifest: &SequenceManifest, cfg: &PipelineConfig) -> Result<Vec<Vec<TipCandidate>>> {
    (0..manifest.navigation_frames.len())
        .into_par_iter()
        .map(|i| {
            let img = read_pgm(manifest.resolve(&manifest.navigation_frames[i].path))?;
            Ok(extract_tips(&img, i, cfg))
        })
        .collect()
}

pub fn frame_phases(manifest: &SequenceManifest) -> Vec<usize> {
    (0..manifest.navigation_frames.len())
        .map(|i| manifest.navigation_phase(i))
        .collect()
}

/// Output of the tracking stage with per-frame matching times.
pub struct Tracking {
    pub pairs: Vec<Vec<FeaturePair>>,
    pub result: VoiddResult,
    /// Seconds spent matching each frame.
    pub matching_s: Vec<f64>,
    /// Seconds spent on track assignment over the whole sequence.
    pub assignment_s: f64,
}

/// Matching of every frame against its iso-phase graph, then track
/// assignment.
pub fn track(
    phases: &[usize],
    frame_interval_s: f64,
    graphs: &[VesselGraph],
    tips: &[Vec<TipCandidate>],
    cfg: &PipelineConfig,
) -> Result<Tracking> {
    if tips.len() != phases.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames but tip candidates for {}",
            phases.len(),
            tips.len()
        )));
    }
    if let Some(&p) = phases.iter().find(|&&p| p >= graphs.len()) {
        return Err(Error::InvalidArgument(format!("no vessel graph for phase {p}")));
    }
    let timed: Vec<(Vec<FeaturePair>, f64)> = phases
        .par_iter()
        .zip(tips)
        .map(|(&phase, frame_tips)| {
            let t0 = Instant::now();
            let pairs = extract_feature_pairs(frame_tips, &graphs[phase], &cfg.matching);
            (pairs, t0.elapsed().as_secs_f64())
        })
        .collect();
    let (pairs, matching_s): (Vec<_>, Vec<_>) = timed.into_iter().unzip();
    let t0 = Instant::now();
    let result = run_voidd(phases, frame_interval_s, graphs, &pairs, &cfg.tracker)?;
    Ok(Tracking {
        pairs,
        result,
        matching_s,
        assignment_s: t0.elapsed().as_secs_f64(),
    })
}

pub fn graph_file(dir: &Path, phase: usize) -> PathBuf {
    dir.join(format!("graph_{phase:02}.json"))
}

pub fn tips_file(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("tips_{frame:03}.json"))
}

pub fn pairs_file(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("pairs_{frame:03}.json"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_graphs(dir: &Path, graphs: &[VesselGraph]) -> Result<()> {
    ensure_dir(dir)?;
    graphs.iter().try_for_each(|g| write_json(&graph_file(dir, g.phase), g))
}

pub fn read_graphs(dir: &Path, cycle_length: usize) -> Result<Vec<VesselGraph>> {
    (0..cycle_length)
        .map(|phase| {
            let path = graph_file(dir, phase);
            let g: VesselGraph = read_json(&path)?;
            if g.phase != phase {
                return Err(Error::validation(
                    path.display().to_string(),
                    "phase",
                    format!("expected {phase}, found {}", g.phase),
                ));
            }
            Ok(g)
        })
        .collect()
}

pub fn write_tips(dir: &Path, tips: &[Vec<TipCandidate>]) -> Result<()> {
    ensure_dir(dir)?;
    tips.iter().enumerate().try_for_each(|(frame, cands)| {
        write_json(
            &tips_file(dir, frame),
            &TipCandidatesFile {
                frame,
                candidates: cands.clone(),
            },
        )
    })
}

pub fn read_tips(dir: &Path, n_frames: usize) -> Result<Vec<Vec<TipCandidate>>> {
    (0..n_frames)
        .map(|frame| {
            let path = tips_file(dir, frame);
            let f: TipCandidatesFile = read_json(&path)?;
            if f.frame != frame {
                return Err(Error::validation(
                    path.display().to_string(),
                    "frame",
                    format!("expected {frame}, found {}", f.frame),
                ));
            }
            Ok(f.into_candidates())
        })
        .collect()
}

pub fn write_pairs(dir: &Path, pairs: &[Vec<FeaturePair>]) -> Result<()> {
    ensure_dir(dir)?;
    pairs.iter().enumerate().try_for_each(|(frame, p)| {
        let records: Vec<PairRecord> = p.iter().map(PairRecord::from).collect();
        write_json(&pairs_file(dir, frame), &records)
    })
}

pub fn write_result(path: &Path, result: &ResultFile) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_json(path, result)
}

pub fn read_result(path: &Path) -> Result<ResultFile> {
    read_json(path)
}

/// Writes `report.json` and the text table `report.txt` next to it.
pub fn write_report(path: &Path, rep: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_json(path, rep)?;
    let txt = path.with_extension("txt");
    std::fs::write(&txt, rep.table()).map_err(|e| Error::io(&txt, e))
}

/// Ground truth referenced by a manifest.
pub fn manifest_ground_truth(manifest: &SequenceManifest, origin: &str) -> Result<GroundTruth> {
    let gt_ref = manifest
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::validation(origin, "ground_truth", "manifest has no ground truth"))?;
    GroundTruth::read(&manifest.resolve(&gt_ref.voi_path))
}

/// Echo of the effective configuration written into result files.
pub fn config_echo(cfg: &PipelineConfig, frame_interval_s: f64) -> serde_json::Value {
    serde_json::json!({
        "config": cfg,
        "lambda": cfg.tracker.lambda(),
        "tad_threshold": cfg.tracker.threshold(frame_interval_s),
    })
}

/// Directory layout used by `run_all` under its output directory.
pub struct RunLayout {
    pub graphs: PathBuf,
    pub tips: PathBuf,
    pub result: PathBuf,
    pub report: PathBuf,
}

impl RunLayout {
    pub fn new(out: &Path) -> Self {
        RunLayout {
            graphs: out.join("graphs"),
            tips: out.join("tips"),
            result: out.join("result.json"),
            report: out.join("report.json"),
        }
    }
}

/// Extract-vessels stage: one graph file per phase.
pub fn stage_extract_vessels(manifest: &SequenceManifest, cfg: &PipelineConfig, out: &Path) -> Result<Vec<VesselGraph>> {
    let graphs = extract_graphs(manifest, cfg)?;
    write_graphs(out, &graphs)?;
    Ok(graphs)
}

/// Extract-tips stage: one candidates file per navigation frame.
pub fn stage_extract_tips(manifest: &SequenceManifest, cfg: &PipelineConfig, out: &Path) -> Result<Vec<Vec<TipCandidate>>> {
    let tips = extract_all_tips(manifest, cfg)?;
    write_tips(out, &tips)?;
    Ok(tips)
}

pub fn tree_file(dir: &Path, frame: usize) -> PathBuf {
    dir.join(format!("tree_{frame:03}.json"))
}

/// Writes the min tree of every (presmoothed) navigation frame.
pub fn dump_trees(manifest: &SequenceManifest, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    (0..manifest.navigation_frames.len()).into_par_iter().try_for_each(|i| {
        let img = read_pgm(manifest.resolve(&manifest.navigation_frames[i].path))?;
        let smooth = gaussian_smooth(&img, cfg.candidates.presmooth_sigma);
        let tree = build_min_tree(&smooth, cfg.segmentation.connectivity);
        write_json(&tree_file(dir, i), &tree.dump())
    })
}

fn draw_polyline(img: &mut GrayImage, pts: &[Point2]) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let value = img.max_value();
    let mut plot = |p: Point2| {
        let (x, y) = (p.x.round(), p.y.round());
        if x >= 0.0 && y >= 0.0 && x < w && y < h {
            img.set(x as usize, y as usize, value);
        }
    };
    if let [only] = pts {
        plot(*only);
    }
    for seg in pts.windows(2) {
        let steps = (2.0 * seg[0].distance(seg[1])).ceil().max(1.0) as usize;
        for k in 0..=steps {
            plot(seg[0].lerp(seg[1], k as f64 / steps as f64));
        }
    }
}

/// Debug masks of the detections: `tip_XXX.pgm` and `voi_XXX.pgm` per
/// detected frame, the curve drawn at full intensity on black.
pub fn write_overlays(dir: &Path, width: usize, height: usize, result: &ResultFile) -> Result<()> {
    ensure_dir(dir)?;
    result.vessel.entries.par_iter().try_for_each(|e| {
        for (name, pts) in [("tip", &e.tip_points), ("voi", &e.voi_points)] {
            let mut img = GrayImage::filled(width, height, 8, 0)?;
            draw_polyline(&mut img, pts);
            write_pgm(&img, dir.join(format!("{name}_{:03}.pgm", e.frame)))?;
        }
        Ok(())
    })
}

/// Track stage from graph and tip files.
pub fn stage_track(
    manifest: &SequenceManifest,
    cfg: &PipelineConfig,
    graph_dir: &Path,
    tip_dir: &Path,
    out: &Path,
    dump_pairs: Option<&Path>,
) -> Result<(ResultFile, Tracking)> {
    let graphs = read_graphs(graph_dir, manifest.cycle_length)?;
    let tips = read_tips(tip_dir, manifest.navigation_frames.len())?;
    let tracking = track(&frame_phases(manifest), manifest.frame_interval_s, &graphs, &tips, cfg)?;
    if let Some(dir) = dump_pairs {
        write_pairs(dir, &tracking.pairs)?;
    }
    let file = ResultFile::from_result(&tracking.result, config_echo(cfg, manifest.frame_interval_s));
    write_result(out, &file)?;
    Ok((file, tracking))
}

/// Evaluate stage.
pub fn stage_evaluate(result: &Path, ground_truth: &Path, cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    let res = read_result(result)?;
    let gt = GroundTruth::read(ground_truth)?;
    let rep = report(&res, &gt, cfg.evaluation.tre_samples)?;
    write_report(out, &rep)?;
    Ok(rep)
}

/// All stages through their files, from manifest to report.
pub fn run_all(manifest_path: &Path, cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    let manifest = read_manifest(manifest_path)?;
    let layout = RunLayout::new(out);
    stage_extract_vessels(&manifest, cfg, &layout.graphs)?;
    stage_extract_tips(&manifest, cfg, &layout.tips)?;
    stage_track(&manifest, cfg, &layout.graphs, &layout.tips, &layout.result, None)?;
    let gt_ref = manifest.ground_truth.as_ref().ok_or_else(|| {
        Error::validation(manifest_path.display().to_string(), "ground_truth", "manifest has no ground truth")
    })?;
    stage_evaluate(&layout.result, &manifest.resolve(&gt_ref.voi_path), cfg, &layout.report)
}
