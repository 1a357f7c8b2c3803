//! Hessian ridge enhancement and centerline mask extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;
use crate::skeleton::{prune_spurs, thin, BinaryMask, PixelGraph, NEIGHBORS};

/// Per-pixel ridge response together with the across-ridge unit normal
/// (eigenvector of the larger Hessian eigenvalue) of the winning scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeMap {
    pub width: usize,
    pub height: usize,
    pub response: Vec<f64>,
    pub normal: Vec<[f64; 2]>,
}

impl RidgeMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.response[y * self.width + x]
    }

    /// Bilinear sample with coordinates clamped to the image.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// The `q`-quantile (0 < q ≤ 1) of the strictly positive responses, or
    /// 0 when there are none.
    pub fn positive_quantile(&self, q: f64) -> f64 {
        let mut v: Vec<f64> = self.response.iter().copied().filter(|&r| r > 0.0).collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
        v[idx]
    }
}

pub const MIN_SCALE: f64 = 0.5;
pub const MAX_SCALE: f64 = 8.0;

/// Sampled Gaussian and its first two derivatives, each normalized to act
/// exactly on constants, ramps and parabolas (as correlation kernels).
struct Kernels {
    radius: usize,
    g0: Vec<f64>,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl Kernels {
    fn new(sigma: f64) -> Self {
        let radius = (4.0 * sigma).ceil() as usize;
        let js: Vec<f64> = (0..=2 * radius).map(|i| i as f64 - radius as f64).collect();
        let s2 = sigma * sigma;
        let g: Vec<f64> = js.iter().map(|j| (-j * j / (2.0 * s2)).exp()).collect();
        let sum: f64 = g.iter().sum();
        let g0: Vec<f64> = g.iter().map(|v| v / sum).collect();

        let raw1: Vec<f64> = js.iter().zip(&g0).map(|(j, v)| j * v).collect();
        let m1: f64 = js.iter().zip(&raw1).map(|(j, v)| j * v).sum();
        let g1 = raw1.iter().map(|v| v / m1).collect();

        let raw2: Vec<f64> = js.iter().zip(&g0).map(|(j, v)| (j * j / s2 - 1.0) * v).collect();
        let mean: f64 = raw2.iter().sum();
        let raw2: Vec<f64> = raw2.iter().zip(&g0).map(|(v, g)| v - mean * g).collect();
        let m2: f64 = js.iter().zip(&raw2).map(|(j, v)| j * j / 2.0 * v).sum();
        let g2 = raw2.iter().map(|v| v / m2).collect();
        Kernels { radius, g0, g1, g2 }
    }
}

/// Correlates every row (`horizontal`) or column with `k`, replicating
/// border pixels.
fn correlate(src: &[f64], w: usize, h: usize, k: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let o = i as isize - r;
                let idx = if horizontal {
                    let xx = (x as isize + o).clamp(0, w as isize - 1) as usize;
                    y * w + xx
                } else {
                    let yy = (y as isize + o).clamp(0, h as isize - 1) as usize;
                    yy * w + x
                };
                acc += kv * src[idx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Eigen-decomposition of `[[a, b], [b, c]]`: (larger, smaller, unit
/// eigenvector of the larger).
fn eigen_sym(a: f64, b: f64, c: f64) -> (f64, f64, [f64; 2]) {
    let m = 0.5 * (a + c);
    let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l2, l1) = (m + d, m - d);
    let v1 = [b, l2 - a];
    let v2 = [l2 - c, b];
    let n1 = v1[0].hypot(v1[1]);
    let n2 = v2[0].hypot(v2[1]);
    let v = if n1 >= n2 && n1 > 0.0 {
        [v1[0] / n1, v1[1] / n1]
    } else if n2 > 0.0 {
        [v2[0] / n2, v2[1] / n2]
    } else {
        [1.0, 0.0]
    };
    (l2, l1, v)
}

/// Multi-scale dark-ridge measure. For each scale σ and pixel, with Hessian
/// eigenvalues λ₂ ≥ λ₁, the response is `σ² λ₂ max(0, 1 − |λ₁|/λ₂)` when
/// λ₂ > 0 and zero otherwise; the output holds the maximum over scales.
pub fn vesselness(img: &GrayImage, scales: &[f64]) -> Result<RidgeMap> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("at least one scale is required".into()));
    }
    if let Some(s) = scales.iter().find(|s| !(MIN_SCALE..=MAX_SCALE).contains(*s)) {
        return Err(Error::InvalidArgument(format!(
            "scale {s} outside [{MIN_SCALE}, {MAX_SCALE}]"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let min = img.pixels().iter().copied().min().unwrap_or(0);
    let src: Vec<f64> = img.pixels().iter().map(|&v| f64::from(v - min)).collect();

    let mut response = vec![0.0; w * h];
    let mut normal = vec![[1.0, 0.0]; w * h];
    for &sigma in scales {
        let k = Kernels::new(sigma);
        debug_assert_eq!(k.g0.len(), 2 * k.radius + 1);
        let xx = correlate(&correlate(&src, w, h, &k.g2, true), w, h, &k.g0, false);
        let yy = correlate(&correlate(&src, w, h, &k.g0, true), w, h, &k.g2, false);
        let xy = correlate(&correlate(&src, w, h, &k.g1, true), w, h, &k.g1, false);
        let s2 = sigma * sigma;
        for i in 0..w * h {
            let (l2, l1, v) = eigen_sym(xx[i], xy[i], yy[i]);
            if l2 <= 0.0 {
                continue;
            }
            let r = s2 * l2 * (1.0 - l1.abs() / l2).max(0.0);
            if r > response[i] {
                response[i] = r;
                normal[i] = v;
            }
        }
    }
    Ok(RidgeMap {
        width: w,
        height: h,
        response,
        normal,
    })
}

/// Non-maximum suppression across the ridge followed by hysteresis: a pixel
/// survives when it is a local maximum along its normal and is 8-connected
/// through surviving pixels `≥ t_low` to one `≥ t_high`.
pub fn nms_hysteresis(resp: &RidgeMap, t_low: f64, t_high: f64) -> Result<BinaryMask> {
    if !(0.0 <= t_low && t_low < t_high) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must satisfy 0 <= t_low < t_high, got {t_low} and {t_high}"
        )));
    }
    let (w, h) = (resp.width, resp.height);
    let mut candidate = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let r = resp.response[i];
            if r < t_low || r <= 0.0 {
                continue;
            }
            let [nx, ny] = resp.normal[i];
            let a = resp.sample(x as f64 + nx, y as f64 + ny);
            let b = resp.sample(x as f64 - nx, y as f64 - ny);
            candidate[i] = r >= a && r >= b && (r > a || r > b);
        }
    }
    let mut out = BinaryMask::new(w, h);
    let mut stack = Vec::new();
    for i in 0..w * h {
        if candidate[i] && resp.response[i] >= t_high && !out.get(i % w, i / w) {
            out.set(i % w, i / w, true);
            stack.push(i);
            while let Some(p) = stack.pop() {
                let (px, py) = ((p % w) as isize, (p / w) as isize);
                for &(dx, dy) in &NEIGHBORS {
                    let (qx, qy) = (px + dx, py + dy);
                    if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                        continue;
                    }
                    let q = qy as usize * w + qx as usize;
                    if candidate[q] && !out.get(qx as usize, qy as usize) {
                        out.set(qx as usize, qy as usize, true);
                        stack.push(q);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Parameters of vessel centerline extraction from a reference frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselnessConfig {
    /// Gaussian scales in pixels.
    pub scales: Vec<f64>,
    /// Quantile of the positive responses used as the high threshold.
    pub high_quantile: f64,
    /// Low threshold as a fraction of the high one.
    pub low_ratio: f64,
    /// Explicit thresholds; override the quantile rule when set.
    pub t_high: Option<f64>,
    pub t_low: Option<f64>,
    /// Connected centerline fragments smaller than this are dropped.
    pub min_fragment_px: usize,
    /// Terminal branches shorter than this are pruned.
    pub spur_px: f64,
    /// Centerline endpoints are joined to other centerline pixels closer
    /// than this; closes the gaps non-maximum suppression leaves at
    /// bifurcations. 0 disables it.
    pub bridge_gap_px: f64,
}

impl Default for VesselnessConfig {
    fn default() -> Self {
        VesselnessConfig {
            scales: vec![1.5, 2.5, 4.0],
            high_quantile: 0.95,
            low_ratio: 1.0 / 3.0,
            t_high: None,
            t_low: None,
            min_fragment_px: 12,
            spur_px: 8.0,
            bridge_gap_px: 6.0,
        }
    }
}

impl VesselnessConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::validation("config", format!("vessels.{field}"), msg));
        if self.scales.is_empty() {
            return bad("scales", "at least one scale is required".into());
        }
        if let Some(s) = self.scales.iter().find(|s| !(MIN_SCALE..=MAX_SCALE).contains(*s)) {
            return bad("scales", format!("{s} outside [{MIN_SCALE}, {MAX_SCALE}]"));
        }
        if !(self.high_quantile > 0.0 && self.high_quantile <= 1.0) {
            return bad("high_quantile", "must lie in (0, 1]".into());
        }
        if !(self.low_ratio > 0.0 && self.low_ratio < 1.0) {
            return bad("low_ratio", "must lie in (0, 1)".into());
        }
        if let (Some(lo), Some(hi)) = (self.t_low, self.t_high) {
            if !(0.0 <= lo && lo < hi) {
                return bad("t_low", "must satisfy 0 <= t_low < t_high".into());
            }
        }
        if !(self.spur_px >= 0.0) {
            return bad("spur_px", "must be non-negative".into());
        }
        if !(self.bridge_gap_px >= 0.0 && self.bridge_gap_px <= 32.0) {
            return bad("bridge_gap_px", "must lie in [0, 32]".into());
        }
        Ok(())
    }

    /// (t_low, t_high) for a response map.
    pub fn thresholds(&self, resp: &RidgeMap) -> (f64, f64) {
        let high = self
            .t_high
            .unwrap_or_else(|| resp.positive_quantile(self.high_quantile));
        let low = self.t_low.unwrap_or(high * self.low_ratio);
        (low, high)
    }
}

/// Drops 8-connected fragments with fewer than `min_px` pixels.
pub fn remove_small_fragments(mask: &BinaryMask, min_px: usize) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = mask.clone();
    let mut seen = vec![false; w * h];
    for (sx, sy) in mask.foreground() {
        if seen[sy * w + sx] {
            continue;
        }
        seen[sy * w + sx] = true;
        let mut comp = vec![(sx, sy)];
        let mut i = 0;
        while i < comp.len() {
            let (x, y) = comp[i];
            i += 1;
            for &(dx, dy) in &NEIGHBORS {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if mask.get_signed(nx, ny) && !seen[ny as usize * w + nx as usize] {
                    seen[ny as usize * w + nx as usize] = true;
                    comp.push((nx as usize, ny as usize));
                }
            }
        }
        if comp.len() < min_px {
            for (x, y) in comp {
                out.set(x, y, false);
            }
        }
    }
    out
}

/// Joins every skeleton endpoint to the nearest skeleton pixel within
/// `max_gap` that is not on the endpoint's own branch, by a straight
/// digital segment. Pixels within three gap lengths of the endpoint along
/// the skeleton count as its own branch.
pub fn bridge_gaps(skel: &BinaryMask, max_gap: f64) -> BinaryMask {
    let mut out = skel.clone();
    if max_gap <= 0.0 {
        return out;
    }
    let g = PixelGraph::new(skel);
    let w = skel.width();
    let mut index = vec![usize::MAX; w * skel.height()];
    for (i, &(x, y)) in g.coords.iter().enumerate() {
        index[y * w + x] = i;
    }
    let own_hops = (3.0 * max_gap).ceil() as usize;
    let r = max_gap.ceil() as isize;
    let mut hops = vec![usize::MAX; g.coords.len()];
    for e in (0..g.coords.len()).filter(|&i| g.adj[i].len() == 1) {
        let mut visited = vec![e];
        hops[e] = 0;
        let mut i = 0;
        while i < visited.len() {
            let u = visited[i];
            i += 1;
            if hops[u] == own_hops {
                continue;
            }
            for &(v, _) in &g.adj[u] {
                if hops[v] == usize::MAX {
                    hops[v] = hops[u] + 1;
                    visited.push(v);
                }
            }
        }
        let (ex, ey) = (g.coords[e].0 as isize, g.coords[e].1 as isize);
        let mut best: Option<(f64, isize, isize)> = None;
        for y in ey - r..=ey + r {
            for x in ex - r..=ex + r {
                if !skel.get_signed(x, y) || hops[index[y as usize * w + x as usize]] != usize::MAX {
                    continue;
                }
                let d = (((x - ex).pow(2) + (y - ey).pow(2)) as f64).sqrt();
                if d <= max_gap && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, x, y));
                }
            }
        }
        for &u in &visited {
            hops[u] = usize::MAX;
        }
        if let Some((d, tx, ty)) = best {
            let steps = (2.0 * d).ceil() as usize;
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let x = ex as f64 + t * (tx - ex) as f64;
                let y = ey as f64 + t * (ty - ey) as f64;
                out.set(x.round() as usize, y.round() as usize, true);
            }
        }
    }
    out
}

/// One-pixel-wide vessel centerline mask of a reference frame.
pub fn extract_centerlines(img: &GrayImage, cfg: &VesselnessConfig) -> Result<BinaryMask> {
    let resp = vesselness(img, &cfg.scales)?;
    let (lo, hi) = cfg.thresholds(&resp);
    if hi <= 0.0 {
        return Ok(BinaryMask::new(img.width(), img.height()));
    }
    let mask = nms_hysteresis(&resp, lo, hi)?;
    let skel = thin(&mask);
    let skel = remove_small_fragments(&skel, cfg.min_fragment_px);
    let skel = thin(&bridge_gaps(&skel, cfg.bridge_gap_px));
    Ok(thin(&prune_spurs(&skel, cfg.spur_px)))
}
