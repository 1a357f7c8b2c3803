//! Track management over the navigation sequence: feature pairs are
//! assigned to tracks by their track assignment distance (TAD) and the
//! longest track is reported as the vessel of intervention.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{resample, Point2, Polyline};
use crate::matching::{FeaturePair, VoiCandidate};
use crate::vesselmap::VesselGraph;

/// Exponential normalization `1 − exp(−d/λ)` into `[0, 1)`.
pub fn phi(d: f64, lambda: f64) -> f64 {
    1.0 - (-d / lambda).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Guidewire tip length in pixels; sets the default λ and threshold.
    pub tip_length_px: f64,
    /// Distance scale of φ; defaults to `tip_length_px`.
    pub lambda: Option<f64>,
    /// Maximal guidewire speed in px/s.
    pub v_max: f64,
    /// Defaults to φ(L_tip + v_max · frame interval).
    pub tad_threshold: Option<f64>,
    pub new_track_top_k: usize,
    /// Points per tip curve for the tip distance.
    pub tip_resample: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            tip_length_px: 60.0,
            lambda: None,
            v_max: 50.0,
            tad_threshold: None,
            new_track_top_k: 3,
            tip_resample: 32,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::validation("config", format!("tracker.{field}"), msg));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.tip_length_px) {
            return bad("tip_length_px", "must be positive");
        }
        if self.lambda.is_some_and(|l| !positive(l)) {
            return bad("lambda", "must be positive");
        }
        if !(self.v_max.is_finite() && self.v_max >= 0.0) {
            return bad("v_max", "must be non-negative");
        }
        if self.tad_threshold.is_some_and(|t| !(t > 0.0 && t < 1.0)) {
            return bad("tad_threshold", "must lie in (0, 1)");
        }
        if self.tip_resample < 2 {
            return bad("tip_resample", "must be at least 2");
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(self.tip_length_px)
    }

    /// The TAD acceptance threshold for a given frame interval.
    pub fn threshold(&self, frame_interval_s: f64) -> f64 {
        self.tad_threshold.unwrap_or_else(|| {
            let delta = self.tip_length_px + self.v_max * frame_interval_s;
            phi(delta, self.lambda())
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub frame: usize,
    pub phase: usize,
    pub pair: FeaturePair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: usize,
    pub entries: Vec<TrackEntry>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self) -> Option<&TrackEntry> {
        self.entries.last()
    }

    pub fn latest_in_phase(&self, phase: usize) -> Option<&TrackEntry> {
        self.entries.iter().rev().find(|e| e.phase == phase)
    }
}

/// Mean point-wise distance between the two tips resampled to `k` points,
/// in the better of the two relative orientations.
pub fn tip_distance(a: &Polyline, b: &Polyline, k: usize) -> Result<f64> {
    let ra = resample(a, k)?;
    let rb = resample(b, k)?;
    let n = ra.len().min(rb.len());
    let mean = |q: &[Point2]| -> f64 {
        ra.points()
            .iter()
            .zip(q)
            .map(|(p, q)| p.distance(*q))
            .sum::<f64>()
            / n as f64
    };
    let fwd = mean(rb.points());
    let rev: Vec<Point2> = rb.points().iter().rev().copied().collect();
    Ok(fwd.min(mean(&rev)))
}

/// Mean distance of matched VOI endpoints under the cheaper pairing.
pub fn voi_endpoint_distance(a: &Polyline, b: &Polyline) -> f64 {
    let straight = a.first().distance(b.first()) + a.last().distance(b.last());
    let crossed = a.first().distance(b.last()) + a.last().distance(b.first());
    straight.min(crossed) / 2.0
}

fn spans_overlap(a: &VoiCandidate, b: &VoiCandidate) -> bool {
    a.spans.iter().any(|sa| {
        b.spans.iter().any(|sb| {
            sa.edge == sb.edge
                && sa.from.min(sa.to).max(sb.from.min(sb.to)) <= sa.from.max(sa.to).min(sb.from.max(sb.to))
        })
    })
}

/// Along-graph distance between two VOI candidates of the same graph: 0 when
/// their supports overlap, otherwise the shortest endpoint-to-endpoint
/// geodesic. `None` when they are not connected.
pub fn voi_graph_distance(g: &VesselGraph, a: &VoiCandidate, b: &VoiCandidate) -> Result<Option<f64>> {
    if spans_overlap(a, b) {
        return Ok(Some(0.0));
    }
    let mut best: Option<f64> = None;
    for pa in [a.start(), a.end()] {
        for pb in [b.start(), b.end()] {
            if let Some(d) = g.geodesic(pa, pb)? {
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
    }
    Ok(best)
}

/// TAD of `pair` (observed in `phase`) with respect to `track`: the mean of
/// the φ-normalized tip, VOI-endpoint and graph distances. The graph term
/// is left out when the track holds no entry of the same phase.
pub fn track_assignment_distance(
    track: &Track,
    pair: &FeaturePair,
    phase: usize,
    graphs: &[VesselGraph],
    cfg: &TrackerConfig,
) -> Result<f64> {
    let latest = track
        .latest()
        .ok_or_else(|| Error::InvalidArgument("TAD of an empty track".into()))?;
    let lambda = cfg.lambda();
    let d_tip = tip_distance(&latest.pair.tip.curve, &pair.tip.curve, cfg.tip_resample)?;
    let d_voi = voi_endpoint_distance(&latest.pair.voi.polyline, &pair.voi.polyline);
    let mut sum = phi(d_tip, lambda) + phi(d_voi, lambda);
    let mut terms = 2.0;
    if let Some(iso) = track.latest_in_phase(phase) {
        let g = graphs
            .get(phase)
            .ok_or_else(|| Error::InvalidArgument(format!("no vessel graph for phase {phase}")))?;
        sum += match voi_graph_distance(g, &iso.pair.voi, &pair.voi)? {
            Some(d) => phi(d, lambda),
            None => 1.0,
        };
        terms += 1.0;
    }
    Ok(sum / terms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiddResult {
    pub tracks: Vec<Track>,
    /// Index into `tracks` of the longest track.
    pub vessel: Option<usize>,
    pub per_frame_detection: BTreeMap<usize, FeaturePair>,
    pub n_frames: usize,
    pub tad_threshold: f64,
}

impl VoiddResult {
    pub fn vessel_track(&self) -> Option<&Track> {
        self.vessel.map(|i| &self.tracks[i])
    }
}

/// Runs track assignment over the navigation frames. `frame_phases[i]` is
/// the cardiac phase of frame `i`, `pairs[i]` its ranked feature pairs and
/// `graphs[p]` the reference graph of phase `p`.
pub fn run_voidd(
    frame_phases: &[usize],
    frame_interval_s: f64,
    graphs: &[VesselGraph],
    pairs: &[Vec<FeaturePair>],
    cfg: &TrackerConfig,
) -> Result<VoiddResult> {
    if frame_phases.is_empty() {
        return Err(Error::InvalidArgument("no navigation frames to track".into()));
    }
    if pairs.len() != frame_phases.len() {
        return Err(Error::InvalidArgument(format!(
            "{} frames but feature pairs for {}",
            frame_phases.len(),
            pairs.len()
        )));
    }
    let threshold = cfg.threshold(frame_interval_s);
    let mut tracks: Vec<Track> = Vec::new();
    for (frame, (&phase, frame_pairs)) in frame_phases.iter().zip(pairs).enumerate() {
        for (rank, pair) in frame_pairs.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for (ti, track) in tracks.iter().enumerate() {
                if track.latest().is_some_and(|e| e.frame == frame) {
                    continue;
                }
                let d = track_assignment_distance(track, pair, phase, graphs, cfg)?;
                if d < threshold && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, ti));
                }
            }
            let entry = TrackEntry {
                frame,
                phase,
                pair: pair.clone(),
            };
            if let Some((_, ti)) = best {
                tracks[ti].entries.push(entry);
            } else if rank < cfg.new_track_top_k {
                tracks.push(Track {
                    id: tracks.len(),
                    entries: vec![entry],
                });
            }
        }
    }

    let mut vessel: Option<usize> = None;
    for (i, t) in tracks.iter().enumerate() {
        if vessel.is_none_or(|v| t.len() > tracks[v].len()) {
            vessel = Some(i);
        }
    }
    let per_frame_detection = vessel
        .map(|v| {
            tracks[v]
                .entries
                .iter()
                .map(|e| (e.frame, e.pair.clone()))
                .collect()
        })
        .unwrap_or_default();
    Ok(VoiddResult {
        tracks,
        vessel,
        per_frame_detection,
        n_frames: frame_phases.len(),
        tad_threshold: threshold,
    })
}

/// One detected frame of the result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: usize,
    pub phase: usize,
    pub score: f64,
    pub frechet: f64,
    pub tip_points: Vec<Point2>,
    pub voi_points: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VesselRecord {
    pub frames: Vec<usize>,
    pub entries: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSummary {
    pub id: usize,
    pub length: usize,
    pub first_frame: usize,
    pub last_frame: usize,
}

/// Serialized tracking result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub n_frames: usize,
    pub vessel: VesselRecord,
    pub tracks_summary: Vec<TrackSummary>,
    pub config_echo: serde_json::Value,
}

impl ResultFile {
    pub fn from_result(result: &VoiddResult, config_echo: serde_json::Value) -> Self {
        let entries: Vec<DetectionRecord> = result
            .vessel_track()
            .map(|t| {
                t.entries
                    .iter()
                    .map(|e| DetectionRecord {
                        frame: e.frame,
                        phase: e.phase,
                        score: e.pair.score,
                        frechet: e.pair.frechet,
                        tip_points: e.pair.tip.curve.points().to_vec(),
                        voi_points: e.pair.voi.polyline.points().to_vec(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        ResultFile {
            n_frames: result.n_frames,
            vessel: VesselRecord {
                frames: entries.iter().map(|e| e.frame).collect(),
                entries,
            },
            tracks_summary: result
                .tracks
                .iter()
                .map(|t| TrackSummary {
                    id: t.id,
                    length: t.len(),
                    first_frame: t.entries[0].frame,
                    last_frame: t.entries[t.len() - 1].frame,
                })
                .collect(),
            config_echo,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::EdgeSpan;
    use crate::skeleton::TipCandidate;
    use crate::vesselmap::{GraphEdge, GraphNode, NodeKind};

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.0, 5.0), 0.0);
        assert!((phi(5.0, 5.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((phi(50.0, 5.0) - 0.9999546).abs() < 1e-6);
        assert!(phi(1e6, 5.0) <= 1.0);
    }

    fn line_graph(phase: usize) -> VesselGraph {
        // A 200 px horizontal vessel and a detached one further down.
        let mk = |id, a, b, p: Point2, q: Point2| {
            let polyline = Polyline::new(vec![p, q]).unwrap();
            GraphEdge { id, node_a: a, node_b: b, length: polyline.length(), polyline }
        };
        let pts = [
            Point2::new(0.0, 0.0),
            Point2::new(200.0, 0.0),
            Point2::new(0.0, 100.0),
            Point2::new(200.0, 100.0),
        ];
        let nodes = pts
            .iter()
            .enumerate()
            .map(|(id, &pos)| GraphNode { id, pos, kind: NodeKind::Endpoint })
            .collect();
        let edges = vec![mk(0, 0, 1, pts[0], pts[1]), mk(1, 2, 3, pts[2], pts[3])];
        VesselGraph::new(phase, nodes, edges).unwrap()
    }

    fn pair_on(g: &VesselGraph, edge: usize, from: f64, to: f64, tip_dy: f64) -> FeaturePair {
        let e = &g.edges()[edge];
        let polyline = Polyline::from_points_dedup(e.polyline.sub_points(from, to)).unwrap();
        let tip_pts: Vec<Point2> = polyline.points().iter().map(|p| Point2::new(p.x, p.y + tip_dy)).collect();
        FeaturePair {
            tip: TipCandidate { curve: Polyline::new(tip_pts).unwrap(), score: 10.0, source_frame: 0 },
            tip_index: 0,
            voi: VoiCandidate { phase: g.phase, spans: vec![EdgeSpan { edge, from, to }], polyline },
            raw_frechet: 0.0,
            frechet: 0.0,
            score: 1.0,
        }
    }

    fn track_of(entries: Vec<(usize, usize, FeaturePair)>) -> Track {
        Track {
            id: 0,
            entries: entries
                .into_iter()
                .map(|(frame, phase, pair)| TrackEntry { frame, phase, pair })
                .collect(),
        }
    }

    #[test]
    fn identical_pair_has_zero_tad() {
        let graphs = vec![line_graph(0), line_graph(1)];
        let p = pair_on(&graphs[0], 0, 20.0, 80.0, 0.0);
        let t = track_of(vec![(0, 0, p.clone())]);
        let cfg = TrackerConfig::default();
        assert_eq!(track_assignment_distance(&t, &p, 0, &graphs, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn shifted_pair_matches_direct_formula() {
        let graphs = vec![line_graph(0), line_graph(1)];
        let a = pair_on(&graphs[0], 0, 20.0, 80.0, 0.0);
        let b = pair_on(&graphs[1], 0, 27.0, 87.0, 0.0);
        let t = track_of(vec![(0, 0, a)]);
        let cfg = TrackerConfig::default();
        let tad = track_assignment_distance(&t, &b, 1, &graphs, &cfg).unwrap();
        let l = cfg.lambda();
        let expected = (phi(7.0, l) + phi(7.0, l)) / 2.0;
        assert!((tad - expected).abs() < 1e-9, "{tad} vs {expected}");
    }

    #[test]
    fn disconnected_iso_phase_pair_saturates_graph_term() {
        let graphs = vec![line_graph(0)];
        let a = pair_on(&graphs[0], 0, 20.0, 80.0, 0.0);
        let b = pair_on(&graphs[0], 1, 20.0, 80.0, -100.0);
        let t = track_of(vec![(0, 0, a)]);
        let cfg = TrackerConfig::default();
        let tad = track_assignment_distance(&t, &b, 0, &graphs, &cfg).unwrap();
        let l = cfg.lambda();
        let d_tip = 0.0;
        let expected = (phi(d_tip, l) + phi(100.0, l) + 1.0) / 3.0;
        assert!((tad - expected).abs() < 1e-9);
        assert!(tad < 1.0);
    }

    #[test]
    fn graph_distance_rules() {
        let g = line_graph(0);
        let a = pair_on(&g, 0, 20.0, 80.0, 0.0).voi;
        let overlapping = pair_on(&g, 0, 70.0, 120.0, 0.0).voi;
        let apart = pair_on(&g, 0, 130.0, 100.0, 0.0).voi;
        assert_eq!(voi_graph_distance(&g, &a, &overlapping).unwrap(), Some(0.0));
        assert_eq!(voi_graph_distance(&g, &a, &apart).unwrap(), Some(20.0));
        let other = pair_on(&g, 1, 0.0, 50.0, 0.0).voi;
        assert_eq!(voi_graph_distance(&g, &a, &other).unwrap(), None);
    }

    #[test]
    fn advancing_tip_forms_one_track() {
        let cycle = 4;
        let graphs: Vec<VesselGraph> = (0..cycle).map(line_graph).collect();
        let phases: Vec<usize> = (0..20).map(|i| i % cycle).collect();
        let pairs: Vec<Vec<FeaturePair>> = (0..20)
            .map(|i| vec![pair_on(&graphs[i % cycle], 0, 10.0 + 3.0 * i as f64, 70.0 + 3.0 * i as f64, 0.5)])
            .collect();
        let r = run_voidd(&phases, 1.0 / 15.0, &graphs, &pairs, &TrackerConfig::default()).unwrap();
        assert_eq!(r.tracks.len(), 1);
        assert_eq!(r.vessel_track().unwrap().len(), 20);
        assert_eq!(r.per_frame_detection.len(), 20);
    }

    #[test]
    fn occasional_remote_distractor_loses() {
        let graphs = vec![line_graph(0), line_graph(1)];
        let phases: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let pairs: Vec<Vec<FeaturePair>> = (0..20)
            .map(|i| {
                let mut v = vec![pair_on(&graphs[i % 2], 0, 10.0 + 2.0 * i as f64, 70.0 + 2.0 * i as f64, 0.0)];
                if i % 10 == 3 {
                    let mut d = pair_on(&graphs[i % 2], 1, 100.0, 160.0, 0.0);
                    d.score = 1.5;
                    v.insert(0, d);
                }
                v
            })
            .collect();
        let r = run_voidd(&phases, 1.0 / 15.0, &graphs, &pairs, &TrackerConfig::default()).unwrap();
        assert_eq!(r.tracks.len(), 2);
        let v = r.vessel_track().unwrap();
        assert_eq!(v.len(), 20);
        assert!(v.entries.iter().all(|e| e.pair.voi.spans[0].edge == 0));
        for t in &r.tracks {
            assert!(t.entries.windows(2).all(|w| w[0].frame < w[1].frame));
        }
    }

    #[test]
    fn empty_sequence_and_no_pairs() {
        assert!(run_voidd(&[], 0.1, &[], &[], &TrackerConfig::default()).is_err());
        let r = run_voidd(&[0, 1], 0.1, &[line_graph(0), line_graph(1)], &[vec![], vec![]], &TrackerConfig::default()).unwrap();
        assert!(r.vessel_track().is_none());
        assert!(r.per_frame_detection.is_empty());
        let file = ResultFile::from_result(&r, serde_json::json!({}));
        assert!(file.vessel.frames.is_empty());
    }

    #[test]
    fn default_threshold_follows_tip_length_and_speed() {
        let cfg = TrackerConfig::default();
        let t = cfg.threshold(1.0 / 15.0);
        assert!((t - phi(60.0 + 50.0 / 15.0, 60.0)).abs() < 1e-15);
        assert!(t > 0.0 && t < 1.0);
    }
}
