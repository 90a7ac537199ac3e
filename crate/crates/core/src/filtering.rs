//! False-positive removal for candidate instances.
//!
//! Threshold filtering keeps a candidate when the final map's mean over it
//! reaches `th_e` and its area reaches `min_area`. Voting filtering compares,
//! map by map, the observed mean probability over the candidate with the mean
//! of the candidate's own sigmoid-alpha rendering and takes a weighted vote.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{instance_scale, mask_distance_map};
use crate::mask::InstanceMask;
use crate::probmap::{AlphaSchedule, ProbabilityMap, ProbabilityStack, SafCurve};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Threshold,
    Voting,
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "threshold" => Ok(Self::Threshold),
            "voting" => Ok(Self::Voting),
            other => Err(Error::InvalidConfig(format!("unknown filter mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for FilterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Threshold => "threshold",
            Self::Voting => "voting",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig<T> {
    pub th_b: T,
    pub th_e: T,
    /// Minimum candidate area in output-map pixels. Scale by the square of the
    /// output stride when maps are predicted at reduced resolution.
    pub min_area: usize,
    pub mode: FilterMode,
}

impl<T: Scalar> Default for FilterConfig<T> {
    fn default() -> Self {
        Self {
            th_b: T::lit(0.3),
            th_e: T::lit(0.65),
            min_area: 300,
            mode: FilterMode::Threshold,
        }
    }
}

impl<T: Scalar> FilterConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: T| v > T::zero() && v < T::one();
        if !open_unit(self.th_b) {
            return Err(Error::InvalidConfig(format!(
                "th_b must be in (0, 1), got {}",
                self.th_b
            )));
        }
        if !open_unit(self.th_e) {
            return Err(Error::InvalidConfig(format!(
                "th_e must be in (0, 1), got {}",
                self.th_e
            )));
        }
        Ok(())
    }
}

/// Keeps masks whose mean over `last_map` is at least `th_e` and whose area is
/// at least `min_area`, preserving order.
pub fn threshold_filter<T: Scalar>(
    masks: &[InstanceMask],
    last_map: &ProbabilityMap<T>,
    cfg: &FilterConfig<T>,
) -> Result<Vec<InstanceMask>> {
    check_grids(masks, last_map.grid)?;
    Ok(masks
        .iter()
        .filter(|m| m.area() >= cfg.min_area && last_map.mean_over(m.pixels()).is_some_and(|e| e >= cfg.th_e))
        .cloned()
        .collect())
}

fn check_grids(masks: &[InstanceMask], grid: crate::geometry::Grid) -> Result<()> {
    if let Some(m) = masks.iter().find(|m| m.grid() != grid) {
        return Err(Error::ShapeMismatch(format!(
            "mask {} lies on {:?}, map on {:?}",
            m.label,
            m.grid(),
            grid
        )));
    }
    Ok(())
}

/// Per-map details of one vote.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteDetail<T> {
    /// Observed mean of each predicted map over the mask.
    pub observed: Vec<T>,
    /// Mean of the mask's own sigmoid-alpha rendering, per alpha.
    pub expected: Vec<T>,
    pub votes: Vec<bool>,
    pub weighted: T,
}

/// Computes the weighted vote for one mask.
pub fn vote<T: Scalar>(
    mask: &InstanceMask,
    stack: &ProbabilityStack<T>,
    schedule: &AlphaSchedule<T>,
    th_b: T,
) -> Result<VoteDetail<T>> {
    if stack.len() != schedule.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} maps for a {}-alpha schedule",
            stack.len(),
            schedule.len()
        )));
    }
    let dist = mask_distance_map::<T>(mask)?;
    let scale = instance_scale(&dist)?;
    let offset = th_b * th_b;
    let n_px = T::from_usize_lossy(mask.area());
    let mut detail = VoteDetail {
        observed: Vec::with_capacity(stack.len()),
        expected: Vec::with_capacity(stack.len()),
        votes: Vec::with_capacity(stack.len()),
        weighted: T::zero(),
    };
    for ((map, curve), &w) in stack.maps().iter().zip(schedule.curves()).zip(schedule.weights()) {
        let observed = map.mean_over(mask.pixels()).ok_or(Error::EmptyInstance)?;
        let expected = dist.values.iter().map(|&d| curve.eval(d, scale)).sum::<T>() / n_px;
        let pass = observed >= expected - offset;
        if pass {
            detail.weighted = detail.weighted + w;
        }
        detail.observed.push(observed);
        detail.expected.push(expected);
        detail.votes.push(pass);
    }
    Ok(detail)
}

/// Keeps masks of at least `min_area` pixels whose weighted vote reaches 0.5,
/// preserving order.
pub fn voting_filter<T: Scalar>(
    masks: &[InstanceMask],
    stack: &ProbabilityStack<T>,
    schedule: &AlphaSchedule<T>,
    cfg: &FilterConfig<T>,
) -> Result<Vec<InstanceMask>> {
    check_grids(masks, stack.grid())?;
    if stack.len() != schedule.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} maps for a {}-alpha schedule",
            stack.len(),
            schedule.len()
        )));
    }
    let keep = masks
        .par_iter()
        .map(|m| {
            if m.area() < cfg.min_area {
                return Ok(false);
            }
            match vote(m, stack, schedule, cfg.th_b) {
                Ok(d) => Ok(d.weighted >= T::half()),
                Err(Error::EmptyInstance) => {
                    log::warn!("skipping empty candidate {}", m.label);
                    Ok(false)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(masks
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(m, _)| m.clone())
        .collect())
}

/// Dispatches on `cfg.mode`.
pub fn filter_candidates<T: Scalar>(
    masks: &[InstanceMask],
    stack: &ProbabilityStack<T>,
    schedule: &AlphaSchedule<T>,
    cfg: &FilterConfig<T>,
) -> Result<Vec<InstanceMask>> {
    cfg.validate()?;
    match cfg.mode {
        FilterMode::Threshold => threshold_filter(masks, stack.last(), cfg),
        FilterMode::Voting => voting_filter(masks, stack, schedule, cfg),
    }
}

/// The mask's own sigmoid-alpha rendering for one alpha, as `(pixel, value)` pairs.
pub fn self_rendering<T: Scalar>(mask: &InstanceMask, alpha: T) -> Result<Vec<(usize, T)>> {
    let curve = SafCurve::new(alpha)?;
    let dist = mask_distance_map::<T>(mask)?;
    let scale = instance_scale(&dist)?;
    Ok(dist
        .pixels
        .iter()
        .zip(&dist.values)
        .map(|(&p, &d)| (p, curve.eval(d, scale)))
        .collect())
}
