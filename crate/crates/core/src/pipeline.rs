use crate::arena::ScoringArena;
use crate::detector::Detector;
use crate::error::Result;
use crate::maps::{AnomalyMap, PostChain};
use crate::tensor::FeatureTensor;

/// Scores one tensor and post-processes the map to its source resolution.
pub fn score_image(
    detector: &dyn Detector,
    tensor: &FeatureTensor,
    post: &PostChain,
    arena: &ScoringArena,
) -> Result<AnomalyMap> {
    let raw = detector.score_raw(tensor, arena)?;
    let target = tensor.source_resolution();
    // the upsampled and smoothed grids are workspace too
    let _post = arena.reserve(target.0 * target.1 * 4 * 2);
    post.apply(&raw, target)
}
