//! Synthetic scenes and oracle predictions for closed-loop testing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{on_segment, point_segment_distance, rasterize_interior, Grid, Point, TextPolygon};
use crate::probmap::{generate_label_stack, AlphaSchedule, ProbabilityStack};
use crate::scalar::Scalar;

/// Perfect predictor: the ground-truth label stack itself.
pub fn oracle_stack<T: Scalar>(
    polys: &[TextPolygon<T>],
    grid: Grid,
    schedule: &AlphaSchedule<T>,
) -> ProbabilityStack<T> {
    generate_label_stack(polys, grid, schedule)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct NoiseSpec {
    pub gaussian_sigma: f64,
    pub blur_radius: usize,
    pub dropout_rate: f64,
}

impl NoiseSpec {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn gaussian(sigma: f64) -> Self {
        Self {
            gaussian_sigma: sigma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gaussian sigma must be finite and >= 0, got {}",
                self.gaussian_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in [0, 1], got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.gaussian_sigma <= 0.0 && self.blur_radius == 0 && self.dropout_rate <= 0.0
    }
}

impl std::str::FromStr for NoiseSpec {
    type Err = Error;

    /// Parses `sigma=0.05,blur=1,dropout=0.01`; omitted keys are zero.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = NoiseSpec::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {part:?}")))?;
            let bad = || Error::InvalidConfig(format!("bad value for {k}: {v:?}"));
            match k.trim() {
                "sigma" | "gaussian_sigma" => spec.gaussian_sigma = v.trim().parse().map_err(|_| bad())?,
                "blur" | "blur_radius" => spec.blur_radius = v.trim().parse().map_err(|_| bad())?,
                "dropout" | "dropout_rate" => spec.dropout_rate = v.trim().parse().map_err(|_| bad())?,
                other => return Err(Error::InvalidConfig(format!("unknown noise key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Corrupts a stack: additive Gaussian noise clamped to `[0, 1]`, then a
/// box blur of the given radius (edge-normalized), then per-pixel dropout
/// to zero. Each map draws from its own stream of a ChaCha generator seeded
/// with `seed`, so the result depends only on the inputs.
pub fn corrupt<T: Scalar>(stack: &ProbabilityStack<T>, noise: &NoiseSpec, seed: u64) -> ProbabilityStack<T> {
    let grid = stack.grid();
    let sigma = noise.gaussian_sigma.max(0.0);
    let dropout = noise.dropout_rate.clamp(0.0, 1.0);
    let mut out = stack.clone();
    out.maps_mut().par_iter_mut().enumerate().for_each(|(i, map)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for v in map.values.iter_mut() {
                let noisy = v.to_f64_lossy() + normal.sample(&mut rng);
                *v = T::lit(noisy.clamp(0.0, 1.0));
            }
        }
        if noise.blur_radius > 0 {
            map.values = box_blur(&map.values, grid, noise.blur_radius);
        }
        if dropout > 0.0 {
            for v in map.values.iter_mut() {
                if rng.random::<f64>() < dropout {
                    *v = T::zero();
                }
            }
        }
    });
    out
}

/// Mean over the `(2r+1)^2` window clipped to the grid.
fn box_blur<T: Scalar>(values: &[T], grid: Grid, r: usize) -> Vec<T> {
    let (w, h) = (grid.width, grid.height);
    let pass = |src: &[T], len: usize, stride: usize, lines: usize, step: usize| {
        let mut dst = vec![T::zero(); src.len()];
        for line in 0..lines {
            let base = line * step;
            let mut prefix = Vec::with_capacity(len + 1);
            prefix.push(0.0f64);
            for k in 0..len {
                let last = prefix[k];
                prefix.push(last + src[base + k * stride].to_f64_lossy());
            }
            for k in 0..len {
                let lo = k.saturating_sub(r);
                let hi = (k + r + 1).min(len);
                dst[base + k * stride] = T::lit((prefix[hi] - prefix[lo]) / (hi - lo) as f64);
            }
        }
        dst
    };
    let rows = pass(values, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Rect,
    Rotated,
    Curved,
    Mixed,
}

impl std::str::FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rect" => Ok(Self::Rect),
            "rotated" | "rotated-rect" => Ok(Self::Rotated),
            "curved" => Ok(Self::Curved),
            "mixed" => Ok(Self::Mixed),
            _ => Err(Error::InvalidConfig(format!(
                "unknown shape family {s:?} (expected rect, rotated, curved or mixed)"
            ))),
        }
    }
}

impl std::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rect => "rect",
            Self::Rotated => "rotated",
            Self::Curved => "curved",
            Self::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub count: usize,
    pub family: ShapeFamily,
    /// Minimum boundary-to-boundary distance between instances, in pixels.
    pub min_separation: f64,
    /// Minimum number of covered pixel centers per instance.
    pub min_area: usize,
    /// Sampling attempts per instance before giving up.
    pub max_attempts: usize,
}

impl SceneSpec {
    pub fn new(count: usize, family: ShapeFamily) -> Self {
        Self {
            count,
            family,
            min_separation: 4.0,
            min_area: 400,
            max_attempts: 500,
        }
    }

    pub fn with_separation(mut self, px: f64) -> Self {
        self.min_separation = px;
        self
    }

    pub fn with_min_area(mut self, px: usize) -> Self {
        self.min_area = px;
        self
    }
}

/// Closed-ring simplicity: no two non-adjacent edges touch.
pub fn is_simple(pts: &[Point<f64>]) -> bool {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (pts[j], pts[(j + 1) % n]);
            if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn orient(a: Point<f64>, b: Point<f64>, c: Point<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_touch(a: Point<f64>, b: Point<f64>, c: Point<f64>, d: Point<f64>) -> bool {
    let (d1, d2) = (orient(a, b, c), orient(a, b, d));
    let (d3, d4) = (orient(c, d, a), orient(c, d, b));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, b, c) || on_segment(a, b, d) || on_segment(c, d, a) || on_segment(c, d, b)
}

fn segment_distance(a: Point<f64>, b: Point<f64>, c: Point<f64>, d: Point<f64>) -> f64 {
    if segments_touch(a, b, c, d) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Boundary-to-boundary distance; zero when the polygons overlap or nest.
pub fn polygon_distance(p: &TextPolygon<f64>, q: &TextPolygon<f64>) -> f64 {
    if q.contains(p.vertices()[0]) || p.contains(q.vertices()[0]) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (a, b) in p.edges() {
        for (c, d) in q.edges() {
            best = best.min(segment_distance(a, b, c, d));
            if best == 0.0 {
                return 0.0;
            }
        }
    }
    best
}

fn rotate(pts: &mut [Point<f64>], theta: f64) {
    let (s, c) = theta.sin_cos();
    for p in pts {
        *p = Point::new(p.x * c - p.y * s, p.x * s + p.y * c);
    }
}

/// Box outline centered at the origin.
fn sample_box(rng: &mut ChaCha8Rng, long: (f64, f64), short: (f64, f64)) -> Vec<Point<f64>> {
    let w = rng.random_range(long.0..=long.1);
    let h = rng.random_range(short.0..=short.1.min(w));
    let (hw, hh) = (w / 2.0, h / 2.0);
    vec![
        Point::new(-hw, -hh),
        Point::new(hw, -hh),
        Point::new(hw, hh),
        Point::new(-hw, hh),
    ]
}

/// Band around a sinusoidal midline: seven samples per side, with a
/// slowly varying width.
fn sample_band(rng: &mut ChaCha8Rng, long: (f64, f64), short: (f64, f64)) -> Vec<Point<f64>> {
    let len = rng.random_range(long.0..=long.1);
    let w0 = rng.random_range(short.0..=short.1.min(len / 2.5).max(short.0));
    let amp = rng.random_range(0.0..=len * 0.12);
    let cycles = rng.random_range(0.5..=1.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let wobble = rng.random_range(0.0..=0.15);
    let wphase = rng.random_range(0.0..2.0 * PI);
    let k = 2.0 * PI * cycles;
    let mut top = Vec::with_capacity(7);
    let mut bottom = Vec::with_capacity(7);
    for i in 0..7 {
        let t = i as f64 / 6.0;
        let x = len * (t - 0.5);
        let y = amp * (k * t + phase).sin();
        let dy = amp * k / len * (k * t + phase).cos();
        let norm = (1.0 + dy * dy).sqrt();
        let (nx, ny) = (-dy / norm, 1.0 / norm);
        let half = 0.5 * w0 * (1.0 + wobble * (2.0 * PI * t + wphase).sin());
        top.push(Point::new(x - nx * half, y - ny * half));
        bottom.push(Point::new(x + nx * half, y + ny * half));
    }
    bottom.reverse();
    top.extend(bottom);
    top
}

fn sample_shape(rng: &mut ChaCha8Rng, family: ShapeFamily, grid: Grid) -> Vec<Point<f64>> {
    let side = grid.width.min(grid.height) as f64;
    let long = (24.0f64.min(side * 0.5), (side * 0.6).clamp(24.0, 160.0));
    let short = (12.0, 36.0);
    let family = match family {
        ShapeFamily::Mixed => [ShapeFamily::Rect, ShapeFamily::Rotated, ShapeFamily::Curved][rng.random_range(0..3)],
        f => f,
    };
    match family {
        ShapeFamily::Rect => sample_box(rng, long, short),
        ShapeFamily::Rotated => {
            let mut pts = sample_box(rng, long, short);
            rotate(&mut pts, rng.random_range(0.0..PI));
            pts
        }
        _ => {
            let mut pts = sample_band(rng, (long.0.max(36.0f64.min(long.1)), long.1), short);
            rotate(&mut pts, rng.random_range(-0.6..0.6));
            pts
        }
    }
}

/// Random non-overlapping text instances inside the grid.
///
/// Every instance keeps a 2 px margin from the grid border, covers at least
/// `min_area` pixel centers and lies at least `min_separation` from every
/// other instance. Deterministic for a given seed.
pub fn random_scene<T: Scalar>(grid: Grid, spec: &SceneSpec, seed: u64) -> Result<Vec<TextPolygon<T>>> {
    const MARGIN: f64 = 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<TextPolygon<f64>> = Vec::with_capacity(spec.count);
    let (gw, gh) = (grid.width as f64, grid.height as f64);
    for index in 0..spec.count {
        let mut ok = None;
        for _ in 0..spec.max_attempts {
            let shape = sample_shape(&mut rng, spec.family, grid);
            let (lo, hi) = bounds(&shape);
            let (sw, sh) = (hi.x - lo.x, hi.y - lo.y);
            if sw > gw - 2.0 * MARGIN || sh > gh - 2.0 * MARGIN {
                continue;
            }
            let dx = rng.random_range(MARGIN..=gw - MARGIN - sw) - lo.x;
            let dy = rng.random_range(MARGIN..=gh - MARGIN - sh) - lo.y;
            let pts: Vec<Point<f64>> = shape.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
            if !is_simple(&pts) {
                continue;
            }
            let Ok(poly) = TextPolygon::new(pts) else { continue };
            if rasterize_interior(&poly, grid).len() < spec.min_area {
                continue;
            }
            if placed.iter().any(|q| polygon_distance(&poly, q) < spec.min_separation) {
                continue;
            }
            ok = Some(poly);
            break;
        }
        let poly = ok.ok_or(Error::PlacementFailure {
            index,
            attempts: spec.max_attempts,
        })?;
        placed.push(poly.with_id(format!("inst_{index}")));
    }
    Ok(placed.iter().map(|p| p.cast()).collect())
}

fn bounds(pts: &[Point<f64>]) -> (Point<f64>, Point<f64>) {
    pts.iter().fold(
        (
            Point::new(f64::INFINITY, f64::INFINITY),
            Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        ),
        |(lo, hi), p| {
            (
                Point::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmap::make_schedule;

    #[test]
    fn scenes_are_deterministic_and_separated() {
        let grid = Grid::new(256, 256).unwrap();
        let spec = SceneSpec::new(3, ShapeFamily::Mixed).with_separation(8.0);
        let a: Vec<TextPolygon<f64>> = random_scene(grid, &spec, 7).unwrap();
        let b: Vec<TextPolygon<f64>> = random_scene(grid, &spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(polygon_distance(&a[i], &a[j]) >= 8.0);
            }
        }
        let empty: Vec<TextPolygon<f64>> = random_scene(grid, &SceneSpec::new(0, ShapeFamily::Curved), 1).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn impossible_scene_fails_placement() {
        let grid = Grid::new(40, 40).unwrap();
        let mut spec = SceneSpec::new(5, ShapeFamily::Rect);
        spec.max_attempts = 50;
        let err = random_scene::<f64>(grid, &spec, 3).unwrap_err();
        assert!(matches!(err, Error::PlacementFailure { attempts: 50, .. }));
    }

    #[test]
    fn corrupt_identity_and_full_dropout() {
        let grid = Grid::new(64, 48).unwrap();
        let s = make_schedule::<f64>(3, 4).unwrap();
        let polys: Vec<TextPolygon<f64>> =
            random_scene(grid, &SceneSpec::new(1, ShapeFamily::Rect).with_min_area(100), 4).unwrap();
        let stack = oracle_stack(&polys, grid, &s);
        assert_eq!(corrupt(&stack, &NoiseSpec::clean(), 9), stack);
        let dropped = corrupt(
            &stack,
            &NoiseSpec {
                dropout_rate: 1.0,
                ..NoiseSpec::default()
            },
            9,
        );
        assert!(dropped.maps().iter().all(|m| m.values.iter().all(|&v| v == 0.0)));
        let n1 = corrupt(&stack, &NoiseSpec::gaussian(0.05), 11);
        let n2 = corrupt(&stack, &NoiseSpec::gaussian(0.05), 11);
        let n3 = corrupt(&stack, &NoiseSpec::gaussian(0.05), 12);
        assert_eq!(n1, n2);
        assert_ne!(n1, n3);
        assert!(n1
            .maps()
            .iter()
            .all(|m| m.values.iter().all(|&v| (0.0..=1.0).contains(&v))));
    }

    #[test]
    fn box_blur_preserves_constants_and_mass_center() {
        let grid = Grid::new(5, 4).unwrap();
        let flat = vec![0.25f64; 20];
        assert!(box_blur(&flat, grid, 2).iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let mut spike = vec![0.0f64; 20];
        spike[grid.index(2, 1)] = 9.0;
        let b = box_blur(&spike, grid, 1);
        assert_eq!(b[grid.index(2, 1)], 1.0);
        assert_eq!(b[grid.index(3, 2)], 1.0);
        assert_eq!(b[grid.index(4, 3)], 0.0);
    }

    #[test]
    fn noise_spec_parsing() {
        let n: NoiseSpec = "sigma=0.1, blur=2,dropout=0.05".parse().unwrap();
        assert_eq!(
            n,
            NoiseSpec {
                gaussian_sigma: 0.1,
                blur_radius: 2,
                dropout_rate: 0.05
            }
        );
        assert!("sigma=-1".parse::<NoiseSpec>().is_err());
        assert!("dropout=2".parse::<NoiseSpec>().is_err());
        assert!("gamma=1".parse::<NoiseSpec>().is_err());
    }
}
