//! Synthetic fluoroscopy phantom: a branching vessel tree imaged over one
//! cardiac cycle (reference sequence) and a guidewire tip advancing along
//! one branch (navigation sequence), with exact ground truth.

use std::f64::consts::TAU;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::geom::{Point2, Polyline};
use crate::imgio::{
    write_pgm, GrayImage, GroundTruthRef, NavigationFrame, ReferenceFrame, SequenceManifest,
};

/// One vessel as a cubic Bézier curve. A child vessel starts on its parent
/// at curve parameter `attach_t`; its first control point is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselSpec {
    pub id: usize,
    #[serde(default)]
    pub parent: Option<usize>,
    #[serde(default)]
    pub attach_t: f64,
    pub control: [Point2; 4],
    /// Gaussian cross-section standard deviation in px.
    pub sigma: f64,
    /// Peak darkening in gray levels.
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidewireSpec {
    pub tip_length_px: f64,
    pub speed_px_per_frame: f64,
    /// Arc length of the tip head along the navigated path at frame 0.
    pub start_arc_px: f64,
    /// Leaf vessel the guidewire is steered into.
    pub branch: usize,
    pub sigma: f64,
    pub depth: f64,
    /// Frames where the tip is present but not visible.
    pub dropout_frames: Vec<usize>,
}

impl Default for GuidewireSpec {
    fn default() -> Self {
        GuidewireSpec {
            tip_length_px: 60.0,
            speed_px_per_frame: 2.5,
            start_arc_px: 140.0,
            branch: 2,
            sigma: 1.0,
            depth: 80.0,
            dropout_frames: Vec::new(),
        }
    }
}

/// Per-phase cardiac motion: translation along an ellipse, rotation and
/// scaling about `center`, plus a radial bulge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSpec {
    pub center: Point2,
    pub translation_px: f64,
    pub rotation_deg: f64,
    pub scale: f64,
    pub radial_px: f64,
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            center: Point2::new(256.0, 256.0),
            translation_px: 6.0,
            rotation_deg: 2.0,
            scale: 0.02,
            radial_px: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub control: [Point2; 4],
    pub sigma: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub cycle_length: usize,
    pub n_navigation_frames: usize,
    pub pixel_spacing_mm: f64,
    pub frame_interval_s: f64,
    pub background: f64,
    /// Horizontal background ramp, gray levels across the image.
    pub background_gradient: f64,
    pub vessels: Vec<VesselSpec>,
    /// `None` renders a tip-free navigation sequence.
    pub guidewire: Option<GuidewireSpec>,
    pub motion: MotionSpec,
    pub noise_sigma: f64,
    pub reference_noise_sigma: f64,
    /// Catheter-like curves drawn in navigation frames only.
    pub distractors: Vec<CurveSpec>,
    pub seed: u64,
}

fn p(x: f64, y: f64) -> Point2 {
    Point2::new(x, y)
}

impl Default for SceneSpec {
    fn default() -> Self {
        let vessel = |id, parent, attach_t, control, sigma, depth| VesselSpec {
            id,
            parent,
            attach_t,
            control,
            sigma,
            depth,
        };
        SceneSpec {
            width: 512,
            height: 512,
            cycle_length: 12,
            n_navigation_frames: 60,
            pixel_spacing_mm: 0.2,
            frame_interval_s: 1.0 / 15.0,
            background: 190.0,
            background_gradient: 20.0,
            vessels: vec![
                vessel(0, None, 0.0, [p(256.0, 30.0), p(230.0, 160.0), p(290.0, 270.0), p(250.0, 490.0)], 2.2, 70.0),
                vessel(1, Some(0), 0.3, [p(0.0, 0.0), p(190.0, 230.0), p(130.0, 320.0), p(70.0, 440.0)], 1.9, 65.0),
                vessel(2, Some(0), 0.55, [p(0.0, 0.0), p(340.0, 300.0), p(400.0, 370.0), p(470.0, 470.0)], 1.8, 65.0),
                vessel(3, Some(1), 0.45, [p(0.0, 0.0), p(110.0, 290.0), p(60.0, 260.0), p(30.0, 200.0)], 1.5, 60.0),
                vessel(4, Some(2), 0.4, [p(0.0, 0.0), p(420.0, 290.0), p(450.0, 220.0), p(485.0, 150.0)], 1.5, 60.0),
            ],
            guidewire: Some(GuidewireSpec::default()),
            motion: MotionSpec::default(),
            noise_sigma: 3.0,
            reference_noise_sigma: 2.0,
            distractors: vec![CurveSpec {
                control: [p(20.0, 60.0), p(60.0, 40.0), p(100.0, 70.0), p(140.0, 45.0)],
                sigma: 2.5,
                depth: 60.0,
            }],
            seed: 7,
        }
    }
}

impl SceneSpec {
    /// The default scene without a guidewire.
    pub fn tip_free() -> Self {
        SceneSpec {
            guidewire: None,
            ..SceneSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidArgument(format!("scene {field}: {msg}")));
        if self.width < 16 || self.height < 16 {
            return bad("size", "images must be at least 16x16".into());
        }
        if !(2..=64).contains(&self.cycle_length) {
            return bad("cycle_length", "must lie in 2..=64".into());
        }
        if !(self.pixel_spacing_mm > 0.0 && self.frame_interval_s > 0.0) {
            return bad("spacing", "pixel spacing and frame interval must be positive".into());
        }
        for (i, v) in self.vessels.iter().enumerate() {
            if v.id != i {
                return bad("vessels", format!("vessel {i} has id {}", v.id));
            }
            if let Some(par) = v.parent {
                if par >= i {
                    return bad("vessels", format!("vessel {i} must come after its parent {par}"));
                }
            }
            if !(v.sigma > 0.0 && (0.0..=1.0).contains(&v.attach_t)) {
                return bad("vessels", format!("vessel {i} has invalid sigma or attach_t"));
            }
        }
        if let Some(g) = &self.guidewire {
            if g.branch >= self.vessels.len() {
                return bad("guidewire.branch", format!("no vessel with id {}", g.branch));
            }
            if !(g.tip_length_px > 1.0 && g.sigma > 0.0 && g.speed_px_per_frame >= 0.0) {
                return bad("guidewire", "invalid tip length, sigma or speed".into());
            }
        }
        if self.noise_sigma < 0.0 || self.reference_noise_sigma < 0.0 {
            return bad("noise", "must be non-negative".into());
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

fn bezier(c: &[Point2; 4], t: f64) -> Point2 {
    let u = 1.0 - t;
    let (a, b, cc, d) = (u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t);
    p(
        a * c[0].x + b * c[1].x + cc * c[2].x + d * c[3].x,
        a * c[0].y + b * c[1].y + cc * c[2].y + d * c[3].y,
    )
}

const CURVE_SAMPLES: usize = 400;

/// Vessel control polygons with child start points resolved.
fn resolved_controls(spec: &SceneSpec) -> Vec<[Point2; 4]> {
    let mut out: Vec<[Point2; 4]> = Vec::with_capacity(spec.vessels.len());
    for v in &spec.vessels {
        let mut c = v.control;
        if let Some(par) = v.parent {
            c[0] = bezier(&out[par], v.attach_t);
        }
        out.push(c);
    }
    out
}

fn sample_bezier(c: &[Point2; 4], t0: f64, t1: f64) -> Vec<Point2> {
    let n = ((t1 - t0) * CURVE_SAMPLES as f64).ceil().max(1.0) as usize;
    (0..=n).map(|i| bezier(c, t0 + (t1 - t0) * i as f64 / n as f64)).collect()
}

/// Centerline of the navigated route from the root vessel into `branch`,
/// before motion.
pub fn navigated_path(spec: &SceneSpec, branch: usize) -> Result<Polyline> {
    if branch >= spec.vessels.len() {
        return Err(Error::InvalidArgument(format!("no vessel with id {branch}")));
    }
    let controls = resolved_controls(spec);
    let mut chain = vec![branch];
    while let Some(par) = spec.vessels[*chain.last().unwrap()].parent {
        chain.push(par);
    }
    chain.reverse();
    let mut pts = Vec::new();
    for (k, &v) in chain.iter().enumerate() {
        let t1 = chain.get(k + 1).map_or(1.0, |&child| spec.vessels[child].attach_t);
        let seg = sample_bezier(&controls[v], 0.0, t1);
        pts.extend(seg);
    }
    Polyline::from_points_dedup(pts)
}

/// Motion of phase `phase` applied to a point.
pub fn warp(spec: &SceneSpec, phase: usize, q: Point2) -> Point2 {
    let m = &spec.motion;
    let a = TAU * phase as f64 / spec.cycle_length as f64;
    let theta = m.rotation_deg.to_radians() * a.sin();
    let s = 1.0 + m.scale * (a + 0.5).sin();
    let (dx, dy) = (q.x - m.center.x, q.y - m.center.y);
    let r2 = (dx * dx + dy * dy) / (spec.width.max(spec.height) as f64 / 2.0).powi(2);
    let bulge = 1.0 + m.radial_px * a.cos() * r2 / (spec.width.max(spec.height) as f64 / 2.0);
    let (sn, cs) = theta.sin_cos();
    let rx = s * bulge * (cs * dx - sn * dy);
    let ry = s * bulge * (sn * dx + cs * dy);
    p(
        m.center.x + rx + m.translation_px * a.cos(),
        m.center.y + ry + 0.6 * m.translation_px * a.sin(),
    )
}

fn warp_points(spec: &SceneSpec, phase: usize, pts: &[Point2]) -> Vec<Point2> {
    pts.iter().map(|&q| warp(spec, phase, q)).collect()
}

/// Accumulates Gaussian-profile darkening of a curve, keeping the strongest
/// contribution per pixel.
fn darken_curve(buf: &mut [f64], w: usize, h: usize, pts: &[Point2], sigma: f64, depth: f64) {
    let reach = 4.0 * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let x0 = (a.x.min(b.x) - reach).floor().max(0.0) as usize;
        let y0 = (a.y.min(b.y) - reach).floor().max(0.0) as usize;
        let x1 = ((a.x.max(b.x) + reach).ceil().max(0.0) as usize).min(w - 1);
        let y1 = ((a.y.max(b.y) + reach).ceil().max(0.0) as usize).min(h - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = crate::geom::point_segment_distance(p(x as f64, y as f64), a, b);
                if d <= reach {
                    let v = depth * (-d * d * inv).exp();
                    let cell = &mut buf[y * w + x];
                    if v > *cell {
                        *cell = v;
                    }
                }
            }
        }
    }
}

fn finish(spec: &SceneSpec, dark: &[f64], noise_sigma: f64, stream: u64) -> GrayImage {
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite noise sigma");
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let bg = spec.background + spec.background_gradient * (x as f64 / w as f64 - 0.5);
            let n = if noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            values.push((bg - dark[y * w + x] + n).round().clamp(0.0, 255.0));
        }
    }
    GrayImage::from_f64(w, h, 8, &values).expect("valid synthetic image")
}

/// In-memory rendering of a scene.
#[derive(Debug, Clone)]
pub struct Scene {
    pub reference: Vec<GrayImage>,
    pub navigation: Vec<GrayImage>,
    pub ground_truth: GroundTruth,
}

/// Renders all frames and the ground truth of `spec`.
pub fn render(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let controls = resolved_controls(spec);
    let vessel_pts: Vec<Vec<Point2>> = spec
        .vessels
        .iter()
        .zip(&controls)
        .map(|(_, c)| sample_bezier(c, 0.0, 1.0))
        .collect();

    let reference: Vec<GrayImage> = (0..spec.cycle_length)
        .into_par_iter()
        .map(|phase| {
            let mut dark = vec![0.0; w * h];
            for (v, pts) in spec.vessels.iter().zip(&vessel_pts) {
                darken_curve(&mut dark, w, h, &warp_points(spec, phase, pts), v.sigma, v.depth);
            }
            finish(spec, &dark, spec.reference_noise_sigma, phase as u64)
        })
        .collect();

    let path = match &spec.guidewire {
        Some(g) => Some((g, navigated_path(spec, g.branch)?)),
        None => None,
    };
    let tips: Vec<Option<Polyline>> = (0..spec.n_navigation_frames)
        .map(|frame| {
            let (g, route) = path.as_ref()?;
            let head = (g.start_arc_px + g.speed_px_per_frame * frame as f64).min(route.length());
            let tail = (head - g.tip_length_px).max(0.0);
            let phase = frame % spec.cycle_length;
            let pts = warp_points(spec, phase, &route.sub_points(tail, head));
            Polyline::from_points_dedup(pts).ok()
        })
        .collect();
    let distractor_pts: Vec<Vec<Point2>> = spec
        .distractors
        .iter()
        .map(|d| sample_bezier(&d.control, 0.0, 1.0))
        .collect();

    let navigation: Vec<GrayImage> = (0..spec.n_navigation_frames)
        .into_par_iter()
        .map(|frame| {
            let mut dark = vec![0.0; w * h];
            for (d, pts) in spec.distractors.iter().zip(&distractor_pts) {
                darken_curve(&mut dark, w, h, pts, d.sigma, d.depth);
            }
            if let (Some((g, _)), Some(tip)) = (&path, &tips[frame]) {
                if !g.dropout_frames.contains(&frame) {
                    darken_curve(&mut dark, w, h, tip.points(), g.sigma, g.depth);
                }
            }
            finish(spec, &dark, spec.noise_sigma, (1 << 32) + frame as u64)
        })
        .collect();

    let (voi, voi_by_phase) = match &path {
        Some((_, route)) => (
            Polyline::from_points_dedup(warp_points(spec, 0, route.points()))?,
            (0..spec.cycle_length)
                .map(|ph| Polyline::from_points_dedup(warp_points(spec, ph, route.points())))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => {
            // Without a guidewire the ground-truth branch is irrelevant; keep
            // the root vessel so the file stays well formed.
            let root = Polyline::from_points_dedup(warp_points(spec, 0, &vessel_pts[0]))?;
            (root.clone(), vec![root; spec.cycle_length])
        }
    };
    let tip_present = tips.iter().map(Option::is_some).collect();
    Ok(Scene {
        reference,
        navigation,
        ground_truth: GroundTruth {
            voi,
            voi_by_phase: Some(voi_by_phase),
            tip_present,
            pixel_spacing_mm: spec.pixel_spacing_mm,
            tips: Some(tips),
        },
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Renders `spec` into `out_dir`: PGM frames, `manifest.json` and
/// `ground_truth.json`.
pub fn generate(spec: &SceneSpec, out_dir: &Path) -> Result<(SequenceManifest, GroundTruth)> {
    if spec.vessels.is_empty() {
        return Err(Error::InvalidArgument("scene has no vessels".into()));
    }
    let scene = render(spec)?;
    for sub in ["reference", "navigation"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut reference_frames = Vec::new();
    for (phase, img) in scene.reference.iter().enumerate() {
        let rel = format!("reference/ref_{phase:02}.pgm");
        write_pgm(img, out_dir.join(&rel))?;
        reference_frames.push(ReferenceFrame { path: rel, phase });
    }
    let mut navigation_frames = Vec::new();
    for (i, img) in scene.navigation.iter().enumerate() {
        let rel = format!("navigation/nav_{i:03}.pgm");
        write_pgm(img, out_dir.join(&rel))?;
        navigation_frames.push(NavigationFrame { path: rel, phase: None });
    }
    let gt = scene.ground_truth;
    let manifest = SequenceManifest {
        pixel_spacing_mm: spec.pixel_spacing_mm,
        frame_interval_s: spec.frame_interval_s,
        cycle_length: spec.cycle_length,
        reference_frames,
        navigation_frames,
        ground_truth: Some(GroundTruthRef {
            voi_path: GROUND_TRUTH_FILE.into(),
            tip_presence: gt.tip_present.clone(),
        }),
        base_dir: out_dir.to_path_buf(),
    };
    write_json(&out_dir.join(GROUND_TRUTH_FILE), &gt)?;
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok((manifest, gt))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        SceneSpec {
            width: 128,
            height: 128,
            cycle_length: 4,
            n_navigation_frames: 8,
            vessels: vec![VesselSpec {
                id: 0,
                parent: None,
                attach_t: 0.0,
                control: [p(10.0, 64.0), p(50.0, 60.0), p(80.0, 68.0), p(118.0, 64.0)],
                sigma: 2.0,
                depth: 60.0,
            }],
            guidewire: Some(GuidewireSpec {
                branch: 0,
                start_arc_px: 50.0,
                tip_length_px: 30.0,
                ..GuidewireSpec::default()
            }),
            motion: MotionSpec {
                center: p(64.0, 64.0),
                ..MotionSpec::default()
            },
            distractors: vec![],
            ..SceneSpec::default()
        }
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = render(&small()).unwrap();
        let b = render(&small()).unwrap();
        assert_eq!(a.navigation, b.navigation);
        assert_eq!(a.reference, b.reference);
        let mut other = small();
        other.seed = 8;
        assert_ne!(render(&other).unwrap().navigation, a.navigation);
    }

    #[test]
    fn zero_speed_repeats_iso_phase_tips() {
        let mut s = small();
        s.guidewire.as_mut().unwrap().speed_px_per_frame = 0.0;
        let tips = render(&s).unwrap().ground_truth.tips.unwrap();
        assert_eq!(tips[1], tips[5]);
        assert_ne!(tips[1], tips[2]);
    }

    #[test]
    fn reference_only_scene() {
        let mut s = small();
        s.n_navigation_frames = 0;
        let scene = render(&s).unwrap();
        assert!(scene.navigation.is_empty());
        assert_eq!(scene.reference.len(), 4);
    }

    #[test]
    fn unknown_branch_is_rejected() {
        let mut s = small();
        s.guidewire.as_mut().unwrap().branch = 3;
        assert!(matches!(render(&s), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tip_is_dark_on_its_true_curve() {
        let mut s = small();
        s.noise_sigma = 0.0;
        let scene = render(&s).unwrap();
        let tip = scene.ground_truth.tips.as_ref().unwrap()[3].clone().unwrap();
        let mid = tip.point_at(tip.length() / 2.0);
        let img = &scene.navigation[3];
        let v = img.get(mid.x.round() as usize, mid.y.round() as usize);
        assert!(v < 140, "{v}");
        assert!((tip.length() - 30.0).abs() < 2.0);
    }

    #[test]
    fn default_spec_round_trips_through_json() {
        let s = SceneSpec::default();
        let text = serde_json::to_string(&s).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let empty: SceneSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(empty, s);
    }
}
