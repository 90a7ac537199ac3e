//! Post-processing chain from a predicted stack to scored boundaries.

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::contours::{extract_boundary, DetectionBoundary};
use crate::error::Result;
use crate::filtering::filter_candidates;
use crate::mask::InstanceMask;
use crate::probmap::{AlphaSchedule, ProbabilityStack};
use crate::reconstruct::reconstruct;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Postprocessed<T> {
    /// Grown candidates before filtering.
    pub candidates: Vec<InstanceMask>,
    /// Candidates that survived the filter.
    pub kept: Vec<InstanceMask>,
    /// One boundary per kept mask, in the same order.
    pub boundaries: Vec<DetectionBoundary<T>>,
}

/// Binarize, grow, filter and extract boundaries with the settings in `cfg`.
pub fn postprocess<T: Scalar>(
    stack: &ProbabilityStack<T>,
    schedule: &AlphaSchedule<T>,
    cfg: &PipelineConfig,
) -> Result<Postprocessed<T>> {
    let fcfg = cfg.filter_config::<T>();
    let candidates = reconstruct(stack, fcfg.th_b, cfg.grow)?;
    let kept = filter_candidates(&candidates, stack, schedule, &fcfg)?;
    let eps = T::lit(cfg.epsilon);
    let boundaries = kept
        .par_iter()
        .map(|m| extract_boundary(m, stack.last(), cfg.boundary, eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(Postprocessed {
        candidates,
        kept,
        boundaries,
    })
}
