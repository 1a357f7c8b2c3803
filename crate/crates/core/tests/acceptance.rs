//! Acceptance suite. Every criterion prints one PASS/FAIL line on stdout,
//! bypassing the test harness capture, and then asserts.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voidd_core::config::PipelineConfig;
use voidd_core::eval::{classify_frame, tre, EvalReport, FrameClass};
use voidd_core::geom::{Point2, Polyline};
use voidd_core::imgio::{read_manifest, GrayImage};
use voidd_core::matching::frechet_points;
use voidd_core::mintree::{build_min_tree, Connectivity, MinTree};
use voidd_core::pipeline;
use voidd_core::skeleton::{thin, BinaryMask};
use voidd_core::synth::{generate, SceneSpec};

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("[acceptance] {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

// ---- min tree against level-set labeling -------------------------------

fn label_components(img: &GrayImage, level: u16, conn: Connectivity) -> Vec<Vec<usize>> {
    let (w, h) = (img.width(), img.height());
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && img.get(x as usize, y as usize) <= level
    };
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    for start in 0..w * h {
        if seen[start] || !inside((start % w) as isize, (start / w) as isize) {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut i = 0;
        while i < comp.len() {
            let p = comp[i];
            i += 1;
            for &(dx, dy) in offsets {
                let (x, y) = ((p % w) as isize + dx, (p / w) as isize + dy);
                if inside(x, y) && !seen[y as usize * w + x as usize] {
                    seen[y as usize * w + x as usize] = true;
                    comp.push(y as usize * w + x as usize);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// Distinct level components with their lowest level and the pixel set of
/// their parent (the next larger component containing them).
fn oracle_tree(img: &GrayImage, conn: Connectivity) -> HashMap<Vec<usize>, (u16, Option<Vec<usize>>)> {
    let max = *img.pixels().iter().max().unwrap();
    let min = *img.pixels().iter().min().unwrap();
    let mut nodes: HashMap<Vec<usize>, (u16, Option<Vec<usize>>)> = HashMap::new();
    for level in min..=max {
        for comp in label_components(img, level, conn) {
            nodes.entry(comp).or_insert((level, None));
        }
    }
    let sets: Vec<Vec<usize>> = nodes.keys().cloned().collect();
    for s in &sets {
        let parent = sets
            .iter()
            .filter(|t| t.len() > s.len() && s.iter().all(|p| t.binary_search(p).is_ok()))
            .min_by_key(|t| t.len())
            .cloned();
        nodes.get_mut(s).unwrap().1 = parent;
    }
    nodes
}

fn node_pixels(tree: &MinTree, node: usize) -> Vec<usize> {
    let m = tree.component_mask(node);
    (0..m.width() * m.height()).filter(|&i| m.bits()[i]).collect()
}

fn tree_matches_oracle(img: &GrayImage, conn: Connectivity) -> bool {
    let tree = build_min_tree(img, conn);
    let oracle = oracle_tree(img, conn);
    if tree.node_count() != oracle.len() {
        return false;
    }
    (0..tree.node_count()).all(|n| {
        let px = node_pixels(&tree, n);
        let Some((level, parent)) = oracle.get(&px) else {
            return false;
        };
        let tree_parent = (n != tree.root()).then(|| node_pixels(&tree, tree.parent(n)));
        *level == tree.level(n) && *parent == tree_parent
    })
}

#[test]
fn min_tree_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0;
    for trial in 0..1000 {
        let (w, h) = (8, 8);
        let px: Vec<u16> = (0..w * h).map(|_| rng.gen_range(0..=3)).collect();
        let img = GrayImage::new(w, h, 8, px).unwrap();
        let conn = if trial % 2 == 0 { Connectivity::Four } else { Connectivity::Eight };
        if !tree_matches_oracle(&img, conn) {
            failures += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        "min-tree oracle",
        failures == 0 && secs < 10.0,
        format!("{failures}/1000 mismatches, {secs:.2} s (limit 10 s)"),
    );
}

// ---- discrete Fréchet against coupling enumeration ---------------------

fn enumerate_couplings(p: &[Point2], q: &[Point2], i: usize, j: usize, worst: f64, best: &mut f64) {
    let worst = worst.max(p[i].distance(q[j]));
    if i + 1 == p.len() && j + 1 == q.len() {
        *best = best.min(worst);
        return;
    }
    if i + 1 < p.len() {
        enumerate_couplings(p, q, i + 1, j, worst, best);
    }
    if j + 1 < q.len() {
        enumerate_couplings(p, q, i, j + 1, worst, best);
    }
    if i + 1 < p.len() && j + 1 < q.len() {
        enumerate_couplings(p, q, i + 1, j + 1, worst, best);
    }
}

#[test]
fn frechet_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst_err: f64 = 0.0;
    let curve = |rng: &mut ChaCha8Rng| -> Vec<Point2> {
        let n = rng.gen_range(1..=6);
        (0..n)
            .map(|_| Point2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect()
    };
    for _ in 0..500 {
        let (p, q) = (curve(&mut rng), curve(&mut rng));
        let mut best = f64::INFINITY;
        enumerate_couplings(&p, &q, 0, 0, 0.0, &mut best);
        worst_err = worst_err.max((frechet_points(&p, &q) - best).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        "Fréchet oracle",
        worst_err <= 1e-9 && secs < 5.0,
        format!("max |DP − enumeration| = {worst_err:.1e}, {secs:.2} s (limit 5 s)"),
    );
}

// ---- elongation calibration ---------------------------------------------

/// π·4λ₁/|C| from the pixel coordinates directly.
fn covariance_elongation(px: &[(f64, f64)]) -> f64 {
    let n = px.len() as f64;
    let (mx, my) = (px.iter().map(|p| p.0).sum::<f64>() / n, px.iter().map(|p| p.1).sum::<f64>() / n);
    let cxx = px.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n;
    let cyy = px.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n;
    let cxy = px.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
    let l1 = (cxx + cyy) / 2.0 + (((cxx - cyy) / 2.0).powi(2) + cxy * cxy).sqrt();
    std::f64::consts::PI * 4.0 * l1 / n
}

/// Elongation of the tree node holding exactly the dark pixels of `img`.
fn dark_node_elongation(img: &GrayImage, area: u64) -> f64 {
    let tree = build_min_tree(img, Connectivity::Four);
    let node = (0..tree.node_count())
        .find(|&n| tree.area(n) == area && tree.level(n) == 0)
        .expect("dark component is a node");
    tree.elongation(node)
}

#[test]
fn elongation_calibration() {
    let r = 15.0;
    let disk = GrayImage::new(
        41,
        41,
        8,
        (0..41 * 41)
            .map(|i| {
                let (x, y) = ((i % 41) as f64 - 20.0, (i / 41) as f64 - 20.0);
                if x * x + y * y <= r * r { 0 } else { 200 }
            })
            .collect(),
    )
    .unwrap();
    let disk_area = disk.pixels().iter().filter(|&&v| v == 0).count() as u64;
    let a_disk = dark_node_elongation(&disk, disk_area);

    let n = 20usize;
    let seg = GrayImage::new(30, 5, 8, (0..150).map(|i| if i / 30 == 2 && (5..5 + n).contains(&(i % 30)) { 0 } else { 200 }).collect())
        .unwrap();
    let a_seg = dark_node_elongation(&seg, n as u64);
    let oracle = covariance_elongation(&(5..5 + n).map(|x| (x as f64, 2.0)).collect::<Vec<_>>());
    let closed = std::f64::consts::PI * (4.0 * ((n * n - 1) as f64) / 12.0) / n as f64;

    let disk_ok = (a_disk - 1.0).abs() <= 0.10;
    let seg_ok = (a_seg / oracle - 1.0).abs() <= 0.02 && (oracle - closed).abs() < 1e-9;
    verdict(
        "elongation calibration",
        disk_ok && seg_ok,
        format!("disk r=15 A={a_disk:.4} (1 ± 10%); 20-px segment A={a_seg:.4}, covariance oracle {oracle:.4} (± 2%)"),
    );
}

// ---- TRE analytic cases ----------------------------------------------------

#[test]
fn tre_analytic_cases() {
    let line = |dy: f64| Polyline::new(vec![Point2::new(0.0, dy), Point2::new(100.0, dy)]).unwrap();
    let curve = Polyline::new((0..30).map(|i| Point2::new(i as f64 * 3.0, (i as f64 * 0.3).sin() * 10.0)).collect())
        .unwrap();
    let coincident = tre(&curve, &curve, 0.2, 64).unwrap();
    let offset = tre(&line(1.5), &line(0.0), 0.2, 64).unwrap();
    // 2.45 px and 2.55 px offsets straddle the 0.5 mm boundary at 0.2 mm/px.
    let below = tre(&line(2.45), &line(0.0), 0.2, 64).unwrap();
    let above = tre(&line(2.55), &line(0.0), 0.2, 64).unwrap();
    let class = |t| classify_frame(true, true, Some(t)).unwrap();
    let boundary_ok = class(below) == FrameClass::Correct
        && class(above) == FrameClass::Wrong
        && class(0.5) == FrameClass::Wrong
        && class(0.5 - 1e-12) == FrameClass::Correct;
    verdict(
        "TRE analytic cases",
        coincident == 0.0 && (offset - 0.3).abs() <= 1e-6 && boundary_ok,
        format!(
            "coincident {coincident}, 1.5 px offset {offset:.9} mm (0.3 ± 1e-6), \
             {below:.3} mm correct / {above:.3} mm wrong, exactly 0.5 mm wrong"
        ),
    );
}

// ---- end-to-end synthetic sequences -----------------------------------------

fn run_scene(spec: &SceneSpec, dir: &Path) -> (EvalReport, f64) {
    let t0 = Instant::now();
    generate(spec, &dir.join("scene")).unwrap();
    let rep = pipeline::run_all(&dir.join("scene/manifest.json"), &PipelineConfig::default(), &dir.join("out")).unwrap();
    (rep, t0.elapsed().as_secs_f64())
}

#[test]
fn end_to_end_default_scene() {
    let dir = tempfile::tempdir().unwrap();
    let (rep, secs) = run_scene(&SceneSpec::default(), dir.path());
    let r = &rep.rates;
    verdict(
        "end-to-end default scene",
        rep.n_frames == 60 && r.correct >= 0.85 && r.wrong <= 0.05 && r.missed <= 0.10 && secs < 180.0,
        format!(
            "correct {:.1}% (≥ 85), wrong {:.1}% (≤ 5), missed {:.1}% (≤ 10), {secs:.1} s (limit 180 s)",
            100.0 * r.correct,
            100.0 * r.wrong,
            100.0 * r.missed
        ),
    );
}

#[test]
fn end_to_end_tip_free_scene() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::tip_free();
    assert!(!spec.distractors.is_empty());
    let (rep, secs) = run_scene(&spec, dir.path());
    verdict(
        "end-to-end tip-free scene",
        rep.n_frames == 60 && rep.rates.false_detection <= 0.02 && secs < 120.0,
        format!(
            "false {:.1}% (≤ 2), true negative {:.1}%, {secs:.1} s (limit 120 s)",
            100.0 * rep.rates.false_detection,
            100.0 * rep.rates.true_negative
        ),
    );
}

// ---- thinning topology ----------------------------------------------------------

/// (8-connected foreground components, holes) with holes counted as
/// 4-connected background components not touching the border.
fn topology(m: &BinaryMask) -> (usize, usize) {
    let (w, h) = (m.width() as isize + 2, m.height() as isize + 2);
    let fg = |x: isize, y: isize| m.get_signed(x - 1, y - 1);
    let count = |want: bool, eight: bool| {
        let mut seen = vec![false; (w * h) as usize];
        let mut n = 0;
        for s in 0..w * h {
            let (sx, sy) = (s % w, s / w);
            if seen[s as usize] || fg(sx, sy) != want {
                continue;
            }
            n += 1;
            seen[s as usize] = true;
            let mut stack = vec![(sx, sy)];
            while let Some((x, y)) = stack.pop() {
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 && nx < w && ny < h && !seen[(ny * w + nx) as usize] && fg(nx, ny) == want {
                            seen[(ny * w + nx) as usize] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
        n
    };
    (count(true, true), count(false, false) - 1)
}

fn random_blob(rng: &mut ChaCha8Rng) -> BinaryMask {
    let (w, h) = (rng.gen_range(16..48), rng.gen_range(16..48));
    let mut shapes: Vec<(bool, f64, f64, f64, f64)> = Vec::new();
    for i in 0..rng.gen_range(2..8) {
        // Later shapes may carve holes out of earlier ones; carving near an
        // earlier centre makes an enclosed hole likely.
        let carve = i > 0 && rng.gen_bool(0.5);
        let (cx, cy, r) = if carve {
            let &(_, px, py, pr, _) = &shapes[rng.gen_range(0..shapes.len())];
            (px + rng.gen_range(-pr..pr) / 2.0, py + rng.gen_range(-pr..pr) / 2.0, rng.gen_range(1.0..pr.max(1.5) / 2.0 + 1.0))
        } else {
            (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64), rng.gen_range(1.5..9.0))
        };
        shapes.push((carve, cx, cy, r, rng.gen_range(0.3..1.0)));
    }
    BinaryMask::from_fn(w, h, |x, y| {
        let mut v = false;
        for &(carve, cx, cy, r, squash) in &shapes {
            let (dx, dy) = (x as f64 - cx, (y as f64 - cy) / squash);
            if dx * dx + dy * dy <= r * r {
                v = !carve;
            }
        }
        v
    })
}

#[test]
fn thinning_topology_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut topo_fail, mut idem_fail, mut with_holes) = (0, 0, 0);
    for _ in 0..200 {
        let m = random_blob(&mut rng);
        let t = thin(&m);
        let before = topology(&m);
        with_holes += usize::from(before.1 > 0);
        if topology(&t) != before {
            topo_fail += 1;
        }
        if thin(&t) != t {
            idem_fail += 1;
        }
    }
    verdict(
        "thinning topology",
        topo_fail == 0 && idem_fail == 0,
        format!("200 blobs ({with_holes} with holes): {topo_fail} topology changes, {idem_fail} non-idempotent"),
    );
}

// ---- tracking performance ---------------------------------------------------------

#[test]
fn tracking_performance() {
    let dir = tempfile::tempdir().unwrap();
    generate(&SceneSpec::default(), dir.path()).unwrap();
    let m = read_manifest(dir.path().join("manifest.json")).unwrap();
    let cfg = PipelineConfig::default();
    let graphs = pipeline::extract_graphs(&m, &cfg).unwrap();
    let tips = pipeline::extract_all_tips(&m, &cfg).unwrap();
    let phases = pipeline::frame_phases(&m);
    // Sequential matching so the figure is per-frame work, not divided by
    // the core count.
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t0 = Instant::now();
    let tracking = pool
        .install(|| pipeline::track(&phases, m.frame_interval_s, &graphs, &tips, &cfg))
        .unwrap();
    let per_frame = t0.elapsed().as_secs_f64() / phases.len() as f64;
    verdict(
        "tracking performance",
        per_frame <= 0.33 && tracking.result.vessel.is_some(),
        format!("{:.4} s/frame over {} frames, single thread (target 0.33, ceiling 1)", per_frame, phases.len()),
    );
}

// ---- determinism ----------------------------------------------------------------

#[test]
fn run_all_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    generate(&SceneSpec::default(), &dir.path().join("scene")).unwrap();
    let manifest = dir.path().join("scene/manifest.json");
    let cfg = PipelineConfig::default();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline::run_all(&manifest, &cfg, &a).unwrap();
    pipeline::run_all(&manifest, &cfg, &b).unwrap();
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let files = ["report.json", "report.txt", "result.json"];
    let differing: Vec<&str> = files.iter().copied().filter(|f| !same(f)).collect();
    verdict(
        "determinism",
        differing.is_empty(),
        format!("two run-all passes, differing files: {differing:?}"),
    );
}
