//! Detection accuracy: TRE against the ground-truth branch and per-frame
//! classification into correct, wrong, missed, false and true-negative.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, resample, Polyline};
use crate::tracker::ResultFile;

/// A detection is correct below this TRE.
pub const CORRECT_TRE_MM: f64 = 0.5;
pub const DEFAULT_TRE_SAMPLES: usize = 64;
/// Point distances below this many pixels are rounding noise and count as 0.
pub const ON_CURVE_EPS_PX: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    /// Navigated branch centerline in reference phase 0 coordinates.
    pub voi: Polyline,
    /// The same branch as seen in each reference phase, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voi_by_phase: Option<Vec<Polyline>>,
    pub tip_present: Vec<bool>,
    pub pixel_spacing_mm: f64,
    /// True tip centerline of every navigation frame, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tips: Option<Vec<Option<Polyline>>>,
}

impl GroundTruth {
    pub fn validate(&self, origin: &str) -> Result<()> {
        if !(self.pixel_spacing_mm.is_finite() && self.pixel_spacing_mm > 0.0) {
            return Err(Error::validation(origin, "pixel_spacing_mm", "must be positive"));
        }
        if let Some(t) = &self.tips {
            if t.len() != self.tip_present.len() {
                return Err(Error::validation(origin, "tips", "length differs from tip_present"));
            }
        }
        Ok(())
    }

    /// Ground-truth branch in the coordinates of reference phase `phase`.
    pub fn voi_for_phase(&self, phase: usize) -> &Polyline {
        self.voi_by_phase
            .as_ref()
            .and_then(|v| v.get(phase))
            .unwrap_or(&self.voi)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let gt: GroundTruth = serde_json::from_str(&s).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        gt.validate(&path.display().to_string())?;
        Ok(gt)
    }
}

/// Mean distance, in mm, from `n` equidistant points of `x` to the closest
/// segment of `gt`.
pub fn tre(x: &Polyline, gt: &Polyline, spacing_mm: f64, n: usize) -> Result<f64> {
    if !(spacing_mm.is_finite() && spacing_mm > 0.0) {
        return Err(Error::InvalidArgument(format!("pixel spacing {spacing_mm} must be positive")));
    }
    if gt.length() <= 0.0 {
        return Err(Error::InvalidArgument("ground truth has zero length".into()));
    }
    let xr = resample(x, n)?;
    let sum: f64 = xr
        .points()
        .iter()
        .map(|&q| {
            let d = gt
                .points()
                .windows(2)
                .map(|w| point_segment_distance(q, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            if d < ON_CURVE_EPS_PX {
                0.0
            } else {
                d
            }
        })
        .sum();
    Ok(sum / xr.len() as f64 * spacing_mm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameClass {
    Correct,
    Wrong,
    Missed,
    False,
    TrueNegative,
}

/// Classifies one frame. `tre_mm` must be given exactly when there is a
/// detection and the tip is present.
pub fn classify_frame(detected: bool, tip_present: bool, tre_mm: Option<f64>) -> Result<FrameClass> {
    if tre_mm.is_some() != (detected && tip_present) {
        return Err(Error::InvalidArgument(
            "TRE must be given exactly for detections of a present tip".into(),
        ));
    }
    Ok(match (detected, tip_present, tre_mm) {
        (true, true, Some(t)) if t < CORRECT_TRE_MM => FrameClass::Correct,
        (true, true, _) => FrameClass::Wrong,
        (false, true, _) => FrameClass::Missed,
        (true, false, _) => FrameClass::False,
        (false, false, _) => FrameClass::TrueNegative,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts<T> {
    pub correct: T,
    pub wrong: T,
    pub missed: T,
    #[serde(rename = "false")]
    pub false_detection: T,
    pub true_negative: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameOutcome {
    pub frame: usize,
    pub class: FrameClass,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tre_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub n_frames: usize,
    pub counts: Counts<usize>,
    pub rates: Counts<f64>,
    pub mean_tre_mm: Option<f64>,
    pub frames: Vec<FrameOutcome>,
}

/// Evaluates a tracking result against ground truth frame by frame.
pub fn report(result: &ResultFile, gt: &GroundTruth, n_samples: usize) -> Result<EvalReport> {
    if result.n_frames != gt.tip_present.len() {
        return Err(Error::validation(
            "ground truth",
            "tip_present",
            format!(
                "covers {} frames but the result has {}",
                gt.tip_present.len(),
                result.n_frames
            ),
        ));
    }
    let mut by_frame = vec![None; result.n_frames];
    for e in &result.vessel.entries {
        if e.frame >= result.n_frames {
            return Err(Error::validation(
                "result",
                "vessel.entries",
                format!("frame {} beyond {} frames", e.frame, result.n_frames),
            ));
        }
        by_frame[e.frame] = Some(e);
    }
    let mut counts = Counts::<usize>::default();
    let mut frames = Vec::with_capacity(result.n_frames);
    let mut tres = Vec::new();
    for (frame, (det, &present)) in by_frame.iter().zip(&gt.tip_present).enumerate() {
        let tre_mm = match (det, present) {
            (Some(e), true) => {
                let x = Polyline::new(e.voi_points.clone())?;
                let t = tre(&x, gt.voi_for_phase(e.phase), gt.pixel_spacing_mm, n_samples)?;
                tres.push(t);
                Some(t)
            }
            _ => None,
        };
        let class = classify_frame(det.is_some(), present, tre_mm)?;
        match class {
            FrameClass::Correct => counts.correct += 1,
            FrameClass::Wrong => counts.wrong += 1,
            FrameClass::Missed => counts.missed += 1,
            FrameClass::False => counts.false_detection += 1,
            FrameClass::TrueNegative => counts.true_negative += 1,
        }
        frames.push(FrameOutcome { frame, class, tre_mm });
    }
    let n = result.n_frames.max(1) as f64;
    let rate = |c: usize| c as f64 / n;
    Ok(EvalReport {
        n_frames: result.n_frames,
        rates: Counts {
            correct: rate(counts.correct),
            wrong: rate(counts.wrong),
            missed: rate(counts.missed),
            false_detection: rate(counts.false_detection),
            true_negative: rate(counts.true_negative),
        },
        counts,
        mean_tre_mm: (!tres.is_empty()).then(|| tres.iter().sum::<f64>() / tres.len() as f64),
        frames,
    })
}

impl EvalReport {
    /// Aligned text table of counts and percentages.
    pub fn table(&self) -> String {
        let rows = [
            ("Correct detection", self.counts.correct, self.rates.correct),
            ("Wrong detection", self.counts.wrong, self.rates.wrong),
            ("Missed detection", self.counts.missed, self.rates.missed),
            ("False detection", self.counts.false_detection, self.rates.false_detection),
            ("True negative", self.counts.true_negative, self.rates.true_negative),
        ];
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>7} {:>8}", "Category", "Frames", "Rate");
        for (name, c, r) in rows {
            let _ = writeln!(s, "{:<20} {:>7} {:>7.2}%", name, c, 100.0 * r);
        }
        let _ = writeln!(s, "{:<20} {:>7}", "Total", self.n_frames);
        match self.mean_tre_mm {
            Some(t) => {
                let _ = writeln!(s, "{:<20} {:>7.3} mm", "Mean TRE", t);
            }
            None => {
                let _ = writeln!(s, "{:<20} {:>7}", "Mean TRE", "n/a");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point2;
    use crate::tracker::{DetectionRecord, VesselRecord};
    use proptest::prelude::*;

    fn pl(pts: &[(f64, f64)]) -> Polyline {
        Polyline::new(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn tre_examples() {
        let gt = pl(&[(0.0, 0.0), (50.0, 0.0), (100.0, 0.0)]);
        assert_eq!(tre(&gt, &gt, 0.2, 64).unwrap(), 0.0);
        let shifted = pl(&[(10.0, 1.5), (90.0, 1.5)]);
        assert!((tre(&shifted, &gt, 0.2, 64).unwrap() - 0.3).abs() < 1e-12);
        // Half on the line, half 5 px off.
        let half = pl(&[(0.0, 0.0), (50.0, 0.0), (50.0, 5.0), (100.0, 5.0)]);
        let direct: f64 = resample(&half, 64)
            .unwrap()
            .points()
            .iter()
            .map(|p| gt.distance_to(*p))
            .sum::<f64>()
            / 64.0
            * 0.2;
        assert!((tre(&half, &gt, 0.2, 64).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 0.5).abs() < 0.05);
        assert!(tre(&gt, &gt, 0.2, 1).is_err());
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_frame(true, true, Some(0.2)).unwrap(), FrameClass::Correct);
        assert_eq!(classify_frame(true, true, Some(0.5)).unwrap(), FrameClass::Wrong);
        assert_eq!(classify_frame(true, true, Some(0.4999999)).unwrap(), FrameClass::Correct);
        assert_eq!(classify_frame(false, true, None).unwrap(), FrameClass::Missed);
        assert_eq!(classify_frame(true, false, None).unwrap(), FrameClass::False);
        assert_eq!(classify_frame(false, false, None).unwrap(), FrameClass::TrueNegative);
        assert!(classify_frame(true, false, Some(0.1)).is_err());
        assert!(classify_frame(true, true, None).is_err());
    }

    fn result_with(n: usize, detected: &[usize], voi: &[(f64, f64)]) -> ResultFile {
        let entries: Vec<DetectionRecord> = detected
            .iter()
            .map(|&frame| DetectionRecord {
                frame,
                phase: 0,
                score: 1.0,
                frechet: 0.0,
                tip_points: vec![],
                voi_points: voi.iter().map(|&(x, y)| Point2::new(x, y)).collect(),
            })
            .collect();
        ResultFile {
            n_frames: n,
            vessel: VesselRecord {
                frames: detected.to_vec(),
                entries,
            },
            tracks_summary: vec![],
            config_echo: serde_json::Value::Null,
        }
    }

    fn gt(present: Vec<bool>) -> GroundTruth {
        GroundTruth {
            voi: pl(&[(0.0, 0.0), (100.0, 0.0)]),
            voi_by_phase: None,
            tip_present: present,
            pixel_spacing_mm: 0.2,
            tips: None,
        }
    }

    #[test]
    fn report_counts_and_rates() {
        let r = result_with(5, &[0, 1, 4], &[(10.0, 0.5), (40.0, 0.5)]);
        let rep = report(&r, &gt(vec![true, true, true, false, false]), 64).unwrap();
        assert_eq!(rep.counts.correct, 2);
        assert_eq!(rep.counts.missed, 1);
        assert_eq!(rep.counts.true_negative, 1);
        assert_eq!(rep.counts.false_detection, 1);
        let r = rep.rates;
        assert!((r.correct + r.wrong + r.missed + r.false_detection + r.true_negative - 1.0).abs() < 1e-12);
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["counts"]["false"], 1);
        assert!(rep.table().contains("Correct detection"));
    }

    #[test]
    fn frame_count_mismatch_is_a_validation_error() {
        let r = result_with(4, &[], &[]);
        assert!(matches!(report(&r, &gt(vec![true; 5]), 64), Err(Error::Validation { .. })));
    }

    #[test]
    fn tip_free_clean_run() {
        let r = result_with(6, &[], &[]);
        let rep = report(&r, &gt(vec![false; 6]), 64).unwrap();
        assert_eq!(rep.rates.true_negative, 1.0);
        assert_eq!(rep.rates.false_detection, 0.0);
    }

    fn arb_curve() -> impl Strategy<Value = Polyline> {
        proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 2..8).prop_filter_map("degenerate", |v| {
            Polyline::from_points_dedup(v.into_iter().map(|(x, y)| Point2::new(x, y))).ok()
        })
    }

    proptest! {
        #[test]
        fn tre_ignores_orientation(x in arb_curve(), g in arb_curve()) {
            let a = tre(&x, &g, 0.2, 64).unwrap();
            prop_assert!((a - tre(&x.reversed(), &g, 0.2, 64).unwrap()).abs() < 1e-9);
            prop_assert!((a - tre(&x, &g.reversed(), 0.2, 64).unwrap()).abs() < 1e-9);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn tre_is_zero_on_subcurves(g in arb_curve(), t0 in 0.0f64..0.5, t1 in 0.5f64..1.0) {
            let len = g.length();
            if let Ok(sub) = Polyline::from_points_dedup(g.sub_points(t0 * len, t1 * len)) {
                prop_assert!(tre(&sub, &g, 1.0, 64).unwrap() < 1e-9);
            }
        }
    }
}
