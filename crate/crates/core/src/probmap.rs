//! Sigmoid alpha function family, alpha schedules and ground-truth
//! probability-map stacks.
//!
//! For a pixel at boundary distance `d` inside an instance of scale `L`,
//! the sigmoid alpha function is
//!
//! ```text
//! saf(d, L, a) = C * (2 / (1 + exp(-a * d / L)) - 1),   C = (1 + exp(-a)) / (1 - exp(-a))
//! ```
//!
//! which equals `tanh(a * r / 2) / tanh(a / 2)` with `r = d / L`. The tanh
//! form is evaluated here: it has no cancellation near `d = 0` or for tiny
//! `a`, gives exactly 0 at `d = 0` and exactly 1 at `d = L`. Small alphas
//! approach the linear ramp `d / L`; large alphas approach a step at zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{distance_to_boundary, instance_scale, rasterize_interior, DistanceFragment, Grid, TextPolygon};
use crate::scalar::Scalar;

/// Precomputed sigmoid alpha curve for one alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafCurve<T> {
    alpha: T,
    norm: T,
}

impl<T: Scalar> SafCurve<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(Error::InvalidAlpha(alpha.to_f64_lossy()));
        }
        Ok(Self {
            alpha,
            norm: (alpha * T::half()).tanh(),
        })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Probability for distance `d` in an instance of scale `l`, clamped to `[0, 1]`.
    #[inline]
    pub fn eval(&self, d: T, l: T) -> T {
        let r = d / l;
        let v = (self.alpha * r * T::half()).tanh() / self.norm;
        v.max(T::zero()).min(T::one())
    }
}

/// Sigmoid alpha function.
pub fn saf<T: Scalar>(d: T, l: T, alpha: T) -> Result<T> {
    Ok(SafCurve::new(alpha)?.eval(d, l))
}

/// Linear normalisation `d / L`, clamped to `[0, 1]`.
pub fn lf<T: Scalar>(d: T, l: T) -> T {
    (d / l).max(T::zero()).min(T::one())
}

/// Binarisation: 1 strictly above `th`, else 0.
pub fn bf<T: Scalar>(d: T, th: T) -> T {
    if d > th {
        T::one()
    } else {
        T::zero()
    }
}

/// Ordered alphas plus the voting weight attached to each map.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSchedule<T> {
    alphas: Vec<T>,
    weights: Vec<T>,
    step: Option<u32>,
}

impl<T: Scalar> AlphaSchedule<T> {
    /// Explicit schedule. Alphas must be positive and strictly increasing
    /// (at least two); weights non-negative, one per alpha, summing to 1.
    pub fn new(alphas: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least 2 alphas, got {}",
                alphas.len()
            )));
        }
        if alphas.iter().any(|&a| !(a > T::zero()) || !a.is_finite()) {
            return Err(Error::InvalidSchedule("alphas must be positive and finite".into()));
        }
        if alphas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidSchedule("alphas must be strictly increasing".into()));
        }
        validate_weights(&weights, alphas.len())?;
        Ok(Self {
            alphas,
            weights,
            step: None,
        })
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn step(&self) -> Option<u32> {
        self.step
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Result<Self> {
        validate_weights(&weights, self.alphas.len())?;
        self.weights = weights;
        Ok(self)
    }

    pub fn curves(&self) -> Vec<SafCurve<T>> {
        self.alphas
            .iter()
            .map(|&a| SafCurve::new(a).expect("schedule alphas validated"))
            .collect()
    }
}

fn validate_weights<T: Scalar>(weights: &[T], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::InvalidSchedule(format!(
            "{} weights for {n} maps",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= T::zero()) || !w.is_finite()) {
        return Err(Error::InvalidSchedule("weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().map(|w| w.to_f64_lossy()).sum();
    // a few ulps of the scalar type per weight
    let tol = (T::epsilon().to_f64_lossy() * 4.0 * n as f64).max(1e-9);
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidSchedule(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Default voting weights `w_i = i / (1 + 2 + ... + n)`; `(0.1, 0.2, 0.3, 0.4)` for four maps.
pub fn default_weights<T: Scalar>(n: usize) -> Vec<T> {
    if n == 4 {
        return [0.1, 0.2, 0.3, 0.4].iter().map(|&w| T::lit(w)).collect();
    }
    let total = (n * (n + 1) / 2) as f64;
    (1..=n).map(|i| T::lit(i as f64 / total)).collect()
}

/// Arithmetic alpha schedule `a_i = k (i - 1) + 1` for `i = 1..=n`.
pub fn make_schedule<T: Scalar>(k: u32, n: usize) -> Result<AlphaSchedule<T>> {
    if k < 2 {
        return Err(Error::InvalidSchedule(format!("step k must be >= 2, got {k}")));
    }
    if n < 2 {
        return Err(Error::InvalidSchedule(format!("count n must be >= 2, got {n}")));
    }
    let alphas = (0..n).map(|i| T::from_usize_lossy(k as usize * i + 1)).collect();
    let mut schedule = AlphaSchedule::new(alphas, default_weights(n))?;
    schedule.step = Some(k);
    Ok(schedule)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap<T> {
    pub grid: Grid,
    pub alpha: T,
    pub values: Vec<T>,
}

impl<T: Scalar> ProbabilityMap<T> {
    pub fn zeros(grid: Grid, alpha: T) -> Self {
        Self {
            grid,
            alpha,
            values: vec![T::zero(); grid.len()],
        }
    }

    pub fn from_values(grid: Grid, alpha: T, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                grid.width,
                grid.height
            )));
        }
        Ok(Self { grid, alpha, values })
    }

    /// Mean over a pixel subset; `None` for an empty subset.
    pub fn mean_over(&self, pixels: &[usize]) -> Option<T> {
        if pixels.is_empty() {
            return None;
        }
        let sum: T = pixels.iter().map(|&p| self.values[p]).sum();
        Some(sum / T::from_usize_lossy(pixels.len()))
    }
}

/// Ordered probability maps of one image, one per schedule alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityStack<T> {
    maps: Vec<ProbabilityMap<T>>,
}

impl<T: Scalar> ProbabilityStack<T> {
    pub fn new(maps: Vec<ProbabilityMap<T>>) -> Result<Self> {
        let Some(first) = maps.first() else {
            return Err(Error::ShapeMismatch("stack needs at least one map".into()));
        };
        let grid = first.grid;
        if maps.iter().any(|m| m.grid != grid || m.values.len() != grid.len()) {
            return Err(Error::ShapeMismatch("all maps in a stack must share one grid".into()));
        }
        Ok(Self { maps })
    }

    pub fn zeros(grid: Grid, schedule: &AlphaSchedule<T>) -> Self {
        Self {
            maps: schedule
                .alphas()
                .iter()
                .map(|&a| ProbabilityMap::zeros(grid, a))
                .collect(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.maps[0].grid
    }

    pub fn maps(&self) -> &[ProbabilityMap<T>] {
        &self.maps
    }

    pub fn maps_mut(&mut self) -> &mut [ProbabilityMap<T>] {
        &mut self.maps
    }

    pub fn into_maps(self) -> Vec<ProbabilityMap<T>> {
        self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn last(&self) -> &ProbabilityMap<T> {
        self.maps.last().expect("stack is non-empty")
    }

    pub fn alphas(&self) -> Vec<T> {
        self.maps.iter().map(|m| m.alpha).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ProbabilityStack<U> {
        ProbabilityStack {
            maps: self
                .maps
                .iter()
                .map(|m| ProbabilityMap {
                    grid: m.grid,
                    alpha: U::lit(m.alpha.to_f64_lossy()),
                    values: m.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
                })
                .collect(),
        }
    }
}

/// Support, distances and scale of one annotated instance.
#[derive(Debug, Clone)]
pub struct InstanceDistances<T> {
    pub fragment: DistanceFragment<T>,
    pub scale: T,
}

/// Distances for one polygon; `None` when no pixel center falls inside it.
pub fn instance_distances<T: Scalar>(poly: &TextPolygon<T>, grid: Grid) -> Option<InstanceDistances<T>> {
    let pixels = rasterize_interior(poly, grid);
    let fragment = distance_to_boundary(poly, grid, &pixels);
    let scale = instance_scale(&fragment).ok()?;
    Some(InstanceDistances { fragment, scale })
}

/// Ground-truth stack: per alpha, the pixel-wise maximum over instances of
/// each instance's sigmoid-alpha map. Pixels outside every instance are 0.
///
/// Instances with no pixel center on the grid contribute nothing. `ignore`
/// instances are rendered like any other.
pub fn generate_label_stack<T: Scalar>(
    polys: &[TextPolygon<T>],
    grid: Grid,
    schedule: &AlphaSchedule<T>,
) -> ProbabilityStack<T> {
    let instances: Vec<InstanceDistances<T>> = polys
        .par_iter()
        .filter_map(|p| {
            let inst = instance_distances(p, grid);
            if inst.is_none() {
                log::debug!("instance {:?} covers no pixel center; skipped", p.id);
            }
            inst
        })
        .collect();
    let maps = schedule
        .curves()
        .into_par_iter()
        .map(|curve| {
            let mut map = ProbabilityMap::zeros(grid, curve.alpha());
            for inst in &instances {
                for (&idx, &d) in inst.fragment.pixels.iter().zip(&inst.fragment.values) {
                    let v = curve.eval(d, inst.scale);
                    let slot = &mut map.values[idx];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
            map
        })
        .collect();
    ProbabilityStack { maps }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig<T> {
    /// Per-map weights; all ones by default.
    pub lambdas: Vec<T>,
    /// Negative-to-positive ratio for hard negative mining.
    pub gamma: T,
    /// With mining off every pixel contributes to each map's loss.
    pub ohem: bool,
}

impl<T: Scalar> LossConfig<T> {
    pub fn new(n_maps: usize) -> Self {
        Self {
            lambdas: vec![T::one(); n_maps],
            gamma: T::lit(3.0),
            ohem: true,
        }
    }

    pub fn without_ohem(mut self) -> Self {
        self.ohem = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.iter().any(|&l| !(l >= T::zero())) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if !(self.gamma > T::zero()) {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub total: T,
    pub per_map: Vec<T>,
}

/// Hard-example selection for one map: every positive pixel (ground truth
/// above zero) plus the `ceil(gamma * positives)` zero-valued pixels with the
/// largest squared error. Equal errors are taken in row-major order. With no
/// positives all negatives are kept. Returned indices are sorted.
pub fn ohem_select<T: Scalar>(pred: &ProbabilityMap<T>, gt: &ProbabilityMap<T>, gamma: T) -> Result<Vec<usize>> {
    if pred.grid != gt.grid {
        return Err(Error::ShapeMismatch("prediction and ground truth grids differ".into()));
    }
    if !(gamma > T::zero()) {
        return Err(Error::InvalidConfig("gamma must be positive".into()));
    }
    let mut selected: Vec<usize> = Vec::new();
    let mut negatives: Vec<(T, usize)> = Vec::new();
    for (idx, (&g, &p)) in gt.values.iter().zip(&pred.values).enumerate() {
        if g > T::zero() {
            selected.push(idx);
        } else {
            let e = g - p;
            negatives.push((e * e, idx));
        }
    }
    let positives = selected.len();
    let keep = if positives == 0 {
        negatives.len()
    } else {
        let quota = (gamma * T::from_usize_lossy(positives)).ceil();
        quota.to_usize().unwrap_or(usize::MAX).min(negatives.len())
    };
    if keep < negatives.len() {
        let by_loss = |a: &(T, usize), b: &(T, usize)| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        };
        if keep > 0 {
            negatives.select_nth_unstable_by(keep - 1, by_loss);
        }
        negatives.truncate(keep);
    }
    selected.extend(negatives.iter().map(|&(_, i)| i));
    selected.sort_unstable();
    Ok(selected)
}

/// Per-map mean squared error over the mined pixel set and its weighted sum.
pub fn stack_loss<T: Scalar>(
    pred: &ProbabilityStack<T>,
    gt: &ProbabilityStack<T>,
    cfg: &LossConfig<T>,
) -> Result<LossReport<T>> {
    cfg.validate()?;
    if pred.grid() != gt.grid() || pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} maps on {:?}, ground truth {} maps on {:?}",
            pred.len(),
            pred.grid(),
            gt.len(),
            gt.grid()
        )));
    }
    if cfg.lambdas.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} loss weights for {} maps",
            cfg.lambdas.len(),
            gt.len()
        )));
    }
    let per_map = pred
        .maps()
        .iter()
        .zip(gt.maps())
        .map(|(p, g)| {
            let sq = |i: usize| {
                let e = g.values[i] - p.values[i];
                e * e
            };
            if cfg.ohem {
                let sel = ohem_select(p, g, cfg.gamma)?;
                let sum: T = sel.iter().map(|&i| sq(i)).sum();
                Ok(sum / T::from_usize_lossy(sel.len()))
            } else {
                let sum: T = (0..g.values.len()).map(sq).sum();
                Ok(sum / T::from_usize_lossy(g.values.len()))
            }
        })
        .collect::<Result<Vec<T>>>()?;
    let total = per_map.iter().zip(&cfg.lambdas).map(|(&l, &w)| w * l).sum();
    Ok(LossReport { total, per_map })
}
