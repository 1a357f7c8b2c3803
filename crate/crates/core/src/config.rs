//! The single JSON configuration document of the pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DEFAULT_TRE_SAMPLES;
use crate::matching::MatchConfig;
use crate::mintree::TipSegConfig;
use crate::tracker::TrackerConfig;
use crate::vesselmap::VesselnessConfig;

/// Turning selected components into tip candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateConfig {
    /// Gaussian pre-smoothing of navigation frames before the min tree;
    /// 0 disables it.
    pub presmooth_sigma: f64,
    /// At most this many candidates per frame, best elongation first.
    pub max_candidates: usize,
    /// Candidates with a shorter centerline are dropped.
    pub min_length_px: f64,
    /// A selected component is cut at `min + cut_fraction · (level − min)`
    /// and reduced to its largest piece before thinning; 1 keeps it whole.
    pub cut_fraction: f64,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        CandidateConfig {
            presmooth_sigma: 1.0,
            max_candidates: 6,
            min_length_px: 15.0,
            cut_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub segmentation: TipSegConfig,
    pub candidates: CandidateConfig,
    pub vessels: VesselnessConfig,
    pub matching: MatchConfig,
    pub tracker: TrackerConfig,
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub tre_samples: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            tre_samples: DEFAULT_TRE_SAMPLES,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.segmentation
            .validate()
            .map_err(|e| Error::validation("config", "segmentation", e.to_string()))?;
        let c = &self.candidates;
        if !(c.presmooth_sigma >= 0.0 && c.presmooth_sigma <= 8.0) {
            return Err(Error::validation("config", "candidates.presmooth_sigma", "must lie in [0, 8]"));
        }
        if c.max_candidates == 0 {
            return Err(Error::validation("config", "candidates.max_candidates", "must be positive"));
        }
        if !(c.cut_fraction > 0.0 && c.cut_fraction <= 1.0) {
            return Err(Error::validation("config", "candidates.cut_fraction", "must lie in (0, 1]"));
        }
        if !(c.min_length_px >= 0.0) {
            return Err(Error::validation("config", "candidates.min_length_px", "must be non-negative"));
        }
        self.vessels.validate()?;
        self.matching.validate()?;
        self.tracker.validate()?;
        if self.evaluation.tre_samples < 2 {
            return Err(Error::validation("config", "evaluation.tre_samples", "must be at least 2"));
        }
        Ok(())
    }

    /// Reads and validates a configuration file.
    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&s).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Validation { field, message, .. } => Error::Validation {
                path: path.display().to_string(),
                field,
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"matching": {"max_paths": 4}}"#).unwrap();
        assert_eq!(cfg.matching.max_paths, 4);
        assert_eq!(cfg.matching.frechet_reject, MatchConfig::default().frechet_reject);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"tracker": {"lambdaa": 3}}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_name_their_field() {
        let mut cfg = PipelineConfig::default();
        cfg.tracker.tad_threshold = Some(1.5);
        match cfg.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "tracker.tad_threshold"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let cfg = PipelineConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), cfg);
    }
}
