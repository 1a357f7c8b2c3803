//! Shared fixtures for the criterion benches.

use voidd_core::config::PipelineConfig;
use voidd_core::matching::FeaturePair;
use voidd_core::pipeline;
use voidd_core::skeleton::TipCandidate;
use voidd_core::synth::{render, Scene, SceneSpec};
use voidd_core::vesselmap::{extract_vessel_graph, VesselGraph};

/// The default synthetic scene with every stage output precomputed.
pub struct Fixture {
    pub spec: SceneSpec,
    pub scene: Scene,
    pub cfg: PipelineConfig,
    pub graphs: Vec<VesselGraph>,
    pub tips: Vec<Vec<TipCandidate>>,
    pub phases: Vec<usize>,
    pub pairs: Vec<Vec<FeaturePair>>,
}

impl Fixture {
    pub fn default_scene() -> Self {
        let spec = SceneSpec::default();
        let scene = render(&spec).expect("default scene renders");
        let cfg = PipelineConfig::default();
        let graphs: Vec<VesselGraph> = scene
            .reference
            .iter()
            .enumerate()
            .map(|(p, img)| extract_vessel_graph(img, p, &cfg.vessels).expect("valid config"))
            .collect();
        let tips: Vec<_> = scene
            .navigation
            .iter()
            .enumerate()
            .map(|(f, img)| pipeline::extract_tips(img, f, &cfg))
            .collect();
        let phases: Vec<usize> = (0..spec.n_navigation_frames).map(|f| f % spec.cycle_length).collect();
        let pairs = pipeline::track(&phases, spec.frame_interval_s, &graphs, &tips, &cfg)
            .expect("consistent inputs")
            .pairs;
        Fixture {
            spec,
            scene,
            cfg,
            graphs,
            tips,
            phases,
            pairs,
        }
    }
}
