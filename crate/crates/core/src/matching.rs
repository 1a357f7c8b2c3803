//! Pairing of tip candidates with vessel paths of the iso-phase reference
//! graph, scored by the discrete Fréchet distance left after a rigid fit.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{resample, rigid_align, Point2, Polyline};
use crate::skeleton::TipCandidate;
use crate::vesselmap::{GraphPosition, VesselGraph};

/// Discrete Fréchet distance between the vertex sequences of two curves.
pub fn discrete_frechet(p: &Polyline, q: &Polyline) -> f64 {
    frechet_points(p.points(), q.points())
}

/// Discrete Fréchet distance on raw point slices; both must be non-empty.
pub fn frechet_points(p: &[Point2], q: &[Point2]) -> f64 {
    assert!(!p.is_empty() && !q.is_empty(), "Fréchet distance of an empty curve");
    let m = q.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0f64; m];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            let d = a.distance(b);
            let reach = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
            };
            cur[j] = d.max(reach);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// A traversed stretch of one edge, from offset `from` to offset `to`
/// (`from > to` means against the edge direction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpan {
    pub edge: usize,
    pub from: f64,
    pub to: f64,
}

impl EdgeSpan {
    pub fn forward(&self) -> bool {
        self.from <= self.to
    }

    pub fn length(&self) -> f64 {
        (self.to - self.from).abs()
    }
}

/// A vessel-of-interest candidate: a path through the graph between two
/// positions, traversing each edge at most once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiCandidate {
    pub phase: usize,
    #[serde(rename = "edges")]
    pub spans: Vec<EdgeSpan>,
    #[serde(flatten)]
    pub polyline: Polyline,
}

impl VoiCandidate {
    pub fn start(&self) -> GraphPosition {
        let s = self.spans[0];
        GraphPosition {
            edge: s.edge,
            offset: s.from,
        }
    }

    pub fn end(&self) -> GraphPosition {
        let s = self.spans[self.spans.len() - 1];
        GraphPosition {
            edge: s.edge,
            offset: s.to,
        }
    }

    pub fn edge_ids(&self) -> Vec<usize> {
        self.spans.iter().map(|s| s.edge).collect()
    }

    /// Path length along the graph.
    pub fn length(&self) -> f64 {
        self.spans.iter().map(EdgeSpan::length).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub tip: TipCandidate,
    /// Position of the tip in the frame's candidate list.
    pub tip_index: usize,
    pub voi: VoiCandidate,
    /// Fréchet distance before alignment, in the winning orientation.
    pub raw_frechet: f64,
    /// Residual Fréchet distance after rigid alignment.
    pub frechet: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchConfig {
    /// Search radius around the tip extremities; defaults to the tip arc
    /// length times `radius_scale`.
    pub neighborhood_radius: Option<f64>,
    pub radius_scale: f64,
    pub max_paths: usize,
    /// Score scale; defaults to the tip arc length times `lambda_s_scale`.
    pub lambda_s: Option<f64>,
    pub lambda_s_scale: f64,
    pub frechet_reject: f64,
    /// Paths longer than this multiple of the tip arc length are not explored.
    pub path_length_factor: f64,
    /// Points per curve for the Fréchet comparison.
    pub resample_count: usize,
    /// Cap on search steps per (start, end) position pair.
    pub max_expansions: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            neighborhood_radius: None,
            radius_scale: 1.0,
            max_paths: 32,
            lambda_s: None,
            lambda_s_scale: 0.25,
            frechet_reject: 12.0,
            path_length_factor: 3.0,
            resample_count: 64,
            max_expansions: 20_000,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str| {
            Err(Error::validation(
                "config",
                format!("matching.{field}"),
                "must be positive",
            ))
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.neighborhood_radius.is_some_and(|r| !positive(r)) {
            return bad("neighborhood_radius");
        }
        if !positive(self.radius_scale) {
            return bad("radius_scale");
        }
        if self.max_paths == 0 {
            return bad("max_paths");
        }
        if self.lambda_s.is_some_and(|r| !positive(r)) {
            return bad("lambda_s");
        }
        if !positive(self.lambda_s_scale) {
            return bad("lambda_s_scale");
        }
        if !positive(self.frechet_reject) {
            return bad("frechet_reject");
        }
        if !positive(self.path_length_factor) {
            return bad("path_length_factor");
        }
        if self.resample_count < 2 {
            return Err(Error::validation(
                "config",
                "matching.resample_count",
                "must be at least 2",
            ));
        }
        if self.max_expansions == 0 {
            return bad("max_expansions");
        }
        Ok(())
    }

    pub fn radius_for(&self, tip_length: f64) -> f64 {
        self.neighborhood_radius
            .unwrap_or(self.radius_scale * tip_length)
    }

    pub fn lambda_s_for(&self, tip_length: f64) -> f64 {
        self.lambda_s.unwrap_or(self.lambda_s_scale * tip_length)
    }
}

/// Depth-first path enumeration state shared across one (start, end) pair.
struct PathSearch<'a> {
    g: &'a VesselGraph,
    target: GraphPosition,
    max_len: f64,
    budget: usize,
    used: Vec<usize>,
    spans: Vec<EdgeSpan>,
    found: Vec<Vec<EdgeSpan>>,
}

impl PathSearch<'_> {
    fn visit(&mut self, node: usize, len: f64) {
        if self.budget == 0 {
            return;
        }
        self.budget -= 1;
        let target = &self.g.edges()[self.target.edge];
        if !self.used.contains(&target.id) {
            for (end_node, from) in [(target.node_a, 0.0), (target.node_b, target.length)] {
                if end_node != node {
                    continue;
                }
                let last = EdgeSpan {
                    edge: target.id,
                    from,
                    to: self.target.offset,
                };
                if len + last.length() <= self.max_len {
                    let mut path = self.spans.clone();
                    path.push(last);
                    self.found.push(path);
                }
            }
        }
        let incident = self.g.incident(node).to_vec();
        for (k, &e) in incident.iter().enumerate() {
            if e == target.id || self.used.contains(&e) {
                continue;
            }
            let edge = &self.g.edges()[e];
            let nl = len + edge.length;
            if nl > self.max_len {
                continue;
            }
            // A self-loop is listed twice: walk it forwards from its first
            // listing and backwards from its second.
            let forward = if edge.node_a == edge.node_b {
                !incident[..k].contains(&e)
            } else {
                edge.node_a == node
            };
            let (from, to, next) = if forward {
                (0.0, edge.length, edge.node_b)
            } else {
                (edge.length, 0.0, edge.node_a)
            };
            self.used.push(e);
            self.spans.push(EdgeSpan { edge: e, from, to });
            self.visit(next, nl);
            self.spans.pop();
            self.used.pop();
        }
    }
}

/// Vertices of the path described by `spans`, consecutive duplicates removed.
fn spans_polyline(g: &VesselGraph, spans: &[EdgeSpan]) -> Option<Polyline> {
    let mut pts: Vec<Point2> = Vec::new();
    for s in spans {
        let e = &g.edges()[s.edge];
        pts.extend(e.polyline.sub_points(s.from, s.to));
    }
    Polyline::from_points_dedup(pts).ok()
}

/// All graph paths connecting the neighborhoods of the two tip extremities,
/// each trimmed to the stretch between the matched positions.
pub fn admissible_paths(g: &VesselGraph, tip: &TipCandidate, cfg: &MatchConfig) -> Vec<VoiCandidate> {
    let tip_len = tip.curve.length();
    let radius = cfg.radius_for(tip_len);
    let max_len = cfg.path_length_factor * tip_len;
    let near = |q: Point2| -> Vec<(GraphPosition, f64)> {
        g.edges()
            .iter()
            .filter_map(|e| {
                let (offset, d) = e.polyline.project(q);
                (d <= radius).then_some((GraphPosition { edge: e.id, offset }, d))
            })
            .collect()
    };
    let starts = near(tip.curve.first());
    let ends = near(tip.curve.last());

    // (endpoint distance, spans)
    let mut found: Vec<(f64, Vec<EdgeSpan>)> = Vec::new();
    for &(s, ds) in &starts {
        for &(e, de) in &ends {
            if s.edge == e.edge {
                let span = EdgeSpan {
                    edge: s.edge,
                    from: s.offset,
                    to: e.offset,
                };
                if span.length() > 0.0 && span.length() <= max_len {
                    found.push((ds + de, vec![span]));
                }
                continue;
            }
            let edge = &g.edges()[s.edge];
            let mut search = PathSearch {
                g,
                target: e,
                max_len,
                budget: cfg.max_expansions,
                used: vec![s.edge],
                spans: Vec::new(),
                found: Vec::new(),
            };
            for (to, node) in [(0.0, edge.node_a), (edge.length, edge.node_b)] {
                let first = EdgeSpan {
                    edge: s.edge,
                    from: s.offset,
                    to,
                };
                search.spans.push(first);
                search.visit(node, first.length());
                search.spans.pop();
            }
            found.extend(search.found.into_iter().map(|p| (ds + de, p)));
        }
    }

    let mut out: Vec<(f64, VoiCandidate)> = found
        .into_iter()
        .filter_map(|(d, spans)| {
            let polyline = spans_polyline(g, &spans)?;
            Some((
                d,
                VoiCandidate {
                    phase: g.phase,
                    spans,
                    polyline,
                },
            ))
        })
        .collect();
    out.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.length().total_cmp(&b.1.length()))
            .then_with(|| a.1.edge_ids().cmp(&b.1.edge_ids()))
            .then_with(|| span_key(&a.1).cmp(&span_key(&b.1)))
    });
    out.truncate(cfg.max_paths);
    out.into_iter().map(|(_, v)| v).collect()
}

fn span_key(v: &VoiCandidate) -> Vec<(u64, u64)> {
    v.spans
        .iter()
        .map(|s| (s.from.to_bits(), s.to.to_bits()))
        .collect()
}

/// Shape comparison of one tip against one VOI candidate. Returns
/// (raw Fréchet, residual Fréchet) for the better admissible orientation.
fn compare(tip_r: &Polyline, voi: &Polyline, cfg: &MatchConfig) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for candidate in [voi.clone(), voi.reversed()] {
        let Ok(v) = resample(&candidate, cfg.resample_count) else {
            continue;
        };
        if v.len() != tip_r.len() {
            continue;
        }
        let raw = discrete_frechet(tip_r, &v);
        if raw > cfg.frechet_reject {
            continue;
        }
        let Ok(fit) = rigid_align(tip_r, &v) else {
            continue;
        };
        let residual = discrete_frechet(&fit.residual_curve, &v);
        if best.is_none_or(|b| residual < b.1) {
            best = Some((raw, residual));
        }
    }
    best.filter(|b| b.1 <= cfg.frechet_reject)
}

/// Total order on feature pairs: best score first, then shorter VOI, lower
/// edge ids and lower tip index.
pub fn rank_order(a: &FeaturePair, b: &FeaturePair) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.voi.polyline.length().total_cmp(&b.voi.polyline.length()))
        .then_with(|| a.voi.edge_ids().cmp(&b.voi.edge_ids()))
        .then_with(|| a.tip_index.cmp(&b.tip_index))
        .then_with(|| span_key(&a.voi).cmp(&span_key(&b.voi)))
}

/// Scores every tip against its admissible paths and ranks the surviving
/// pairs by decreasing score.
pub fn extract_feature_pairs(tips: &[TipCandidate], g: &VesselGraph, cfg: &MatchConfig) -> Vec<FeaturePair> {
    let mut pairs = Vec::new();
    for (tip_index, tip) in tips.iter().enumerate() {
        let tip_len = tip.curve.length();
        let lambda_s = cfg.lambda_s_for(tip_len);
        let Ok(tip_r) = resample(&tip.curve, cfg.resample_count) else {
            continue;
        };
        for voi in admissible_paths(g, tip, cfg) {
            if let Some((raw, residual)) = compare(&tip_r, &voi.polyline, cfg) {
                pairs.push(FeaturePair {
                    tip: tip.clone(),
                    tip_index,
                    voi,
                    raw_frechet: raw,
                    frechet: residual,
                    score: (-residual / lambda_s).exp(),
                });
            }
        }
    }
    pairs.sort_by(rank_order);
    pairs
}

/// Feature-pair dump record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub score: f64,
    pub frechet: f64,
    pub tip_points: Vec<Point2>,
    pub voi: VoiCandidate,
}

impl From<&FeaturePair> for PairRecord {
    fn from(p: &FeaturePair) -> Self {
        PairRecord {
            score: p.score,
            frechet: p.frechet,
            tip_points: p.tip.curve.points().to_vec(),
            voi: p.voi.clone(),
        }
    }
}
