//! Vessel enhancement, centerline extraction and the per-phase vessel
//! graph of the reference sequence.

mod graph;
mod ridge;

pub use graph::{
    build_graph, GraphEdge, GraphNode, GraphPosition, NodeKind, VesselGraph, CONTRACT_EDGE_PX,
    EDGE_SMOOTHING_RADIUS, NODE_TOLERANCE_PX,
};
pub use ridge::{
    extract_centerlines, nms_hysteresis, remove_small_fragments, vesselness, RidgeMap,
    VesselnessConfig, MAX_SCALE, MIN_SCALE,
};

use crate::error::Result;
use crate::imgio::GrayImage;

/// Full reference-frame pipeline: enhancement, centerlines, graph.
pub fn extract_vessel_graph(img: &GrayImage, phase: usize, cfg: &VesselnessConfig) -> Result<VesselGraph> {
    let mask = extract_centerlines(img, cfg)?;
    Ok(build_graph(&mask, phase))
}
