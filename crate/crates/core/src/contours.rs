//! Boundary extraction for instance masks.
//!
//! Curved text gets its outer boundary traced along pixel corners and then
//! simplified; quadrilateral text gets the minimum-area rotated rectangle
//! of the mask's pixel-corner hull.

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, rasterize_interior, Point, TextPolygon};
use crate::mask::InstanceMask;
use crate::probmap::ProbabilityMap;
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Polygon,
    Rect,
}

impl std::str::FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "polygon" | "poly" => Ok(Self::Polygon),
            "rect" => Ok(Self::Rect),
            other => Err(Error::InvalidConfig(format!("unknown boundary mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Polygon => "polygon",
            Self::Rect => "rect",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionBoundary<T> {
    pub polygon: TextPolygon<T>,
    /// Mean final-map probability over the source mask.
    pub score: T,
    pub mode: BoundaryMode,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Dir {
    E,
    S,
    W,
    N,
}

impl Dir {
    fn right(self) -> Self {
        match self {
            Dir::E => Dir::S,
            Dir::S => Dir::W,
            Dir::W => Dir::N,
            Dir::N => Dir::E,
        }
    }

    fn left(self) -> Self {
        match self {
            Dir::E => Dir::N,
            Dir::N => Dir::W,
            Dir::W => Dir::S,
            Dir::S => Dir::E,
        }
    }

    fn step(self) -> (isize, isize) {
        match self {
            Dir::E => (1, 0),
            Dir::S => (0, 1),
            Dir::W => (-1, 0),
            Dir::N => (0, -1),
        }
    }
}

/// Outer boundary of a mask on the pixel-corner lattice, one vertex per turn.
///
/// The walk keeps the mask on its right in image coordinates and turns
/// towards the mask at saddle corners, so diagonally touching pixels are kept
/// apart (4-connectivity). Starts at the top-left corner of the first
/// row-major pixel; the resulting signed area is positive.
pub fn trace_outer_boundary(mask: &InstanceMask) -> Result<Vec<(i64, i64)>> {
    if mask.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let grid = mask.grid();
    let (c0, r0, c1, r1) = mask.bbox();
    // local bitmap with a one-pixel empty border
    let bw = c1 - c0 + 3;
    let bh = r1 - r0 + 3;
    let mut bits = vec![false; bw * bh];
    for &p in mask.pixels() {
        let (c, r) = grid.coords(p);
        bits[(r - r0 + 1) * bw + (c - c0 + 1)] = true;
    }
    // pixel (x, y) in local padded coordinates
    let at = |x: isize, y: isize| bits[y as usize * bw + x as usize];
    // vertex (vx, vy) is the top-left corner of pixel (vx, vy)
    let has_edge = |vx: isize, vy: isize, d: Dir| {
        let nw = at(vx - 1, vy - 1);
        let ne = at(vx, vy - 1);
        let sw = at(vx - 1, vy);
        let se = at(vx, vy);
        match d {
            Dir::E => se && !ne,
            Dir::S => sw && !se,
            Dir::W => nw && !sw,
            Dir::N => ne && !nw,
        }
    };
    let (fc, fr) = grid.coords(mask.pixels()[0]);
    let start = ((fc - c0 + 1) as isize, (fr - r0 + 1) as isize);
    let mut v = start;
    let mut dir = Dir::E;
    let mut out = vec![start];
    let limit = 4 * mask.area() + 8;
    for _ in 0..limit {
        let (dx, dy) = dir.step();
        v = (v.0 + dx, v.1 + dy);
        if v == start {
            break;
        }
        let next = [dir.right(), dir, dir.left()]
            .into_iter()
            .find(|&d| has_edge(v.0, v.1, d))
            .expect("boundary walk always continues");
        if next != dir {
            out.push(v);
        }
        dir = next;
    }
    let ox = c0 as i64 - 1;
    let oy = r0 as i64 - 1;
    Ok(out.into_iter().map(|(x, y)| (x as i64 + ox, y as i64 + oy)).collect())
}

fn douglas_peucker<T: Scalar>(pts: &[Point<T>], eps: T, keep: &mut [bool]) {
    let mut stack = vec![(0usize, pts.len() - 1)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let mut best = T::zero();
        let mut idx = a;
        for i in a + 1..b {
            let d = point_segment_distance(pts[i], pts[a], pts[b]);
            if d > best {
                best = d;
                idx = i;
            }
        }
        if best > eps {
            keep[idx] = true;
            stack.push((a, idx));
            stack.push((idx, b));
        }
    }
}

/// Douglas-Peucker simplification of a closed ring, anchored at vertex 0 and
/// the vertex farthest from it.
pub fn simplify_closed<T: Scalar>(ring: &[Point<T>], eps: T) -> Vec<Point<T>> {
    let n = ring.len();
    if n <= 3 {
        return ring.to_vec();
    }
    let d2 = |p: Point<T>| {
        let dx = p.x - ring[0].x;
        let dy = p.y - ring[0].y;
        dx * dx + dy * dy
    };
    let mut far = 1;
    for i in 2..n {
        if d2(ring[i]) > d2(ring[far]) {
            far = i;
        }
    }
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    let mut closed = ring.to_vec();
    closed.push(ring[0]);
    douglas_peucker(&closed[..=far], eps, &mut keep[..=far]);
    douglas_peucker(&closed[far..], eps, &mut keep[far..]);
    (0..n).filter(|&i| keep[i]).map(|i| ring[i]).collect()
}

/// Share of mask pixels a simplified boundary must re-cover when rasterized.
pub const MIN_RECOVERY: f64 = 0.99;
/// Largest share of extra pixels a simplified boundary may add when rasterized.
pub const MAX_EXTRA: f64 = 0.05;
const MAX_REFINEMENTS: usize = 8;

/// Traced and simplified outer boundary with tolerance `epsilon` pixels.
///
/// The simplified ring must have no crossing edges and must rasterize back
/// to the mask within [`MIN_RECOVERY`] and [`MAX_EXTRA`]. Otherwise the
/// tolerance is halved and simplification repeated; after a few rounds the
/// exact traced ring is returned, which rasterizes to the mask itself
/// (plus any holes).
pub fn trace_polygon<T: Scalar>(mask: &InstanceMask, epsilon: T) -> Result<TextPolygon<T>> {
    let ring: Vec<Point<T>> = trace_outer_boundary(mask)?
        .into_iter()
        .map(|(x, y)| Point::new(T::lit(x as f64), T::lit(y as f64)))
        .collect();
    let mut eps = epsilon;
    for _ in 0..MAX_REFINEMENTS {
        if !(eps > T::zero()) {
            break;
        }
        let simplified = simplify_closed(&ring, eps);
        if simplified.len() < ring.len() {
            if let Ok(p) = TextPolygon::new(simplified) {
                if p.signed_area() > T::zero() && !has_crossing(p.vertices()) && rasterizes_back(&p, mask) {
                    return Ok(p);
                }
            }
        } else {
            break;
        }
        eps = eps * T::half();
    }
    TextPolygon::new(ring)
}

fn rasterizes_back<T: Scalar>(poly: &TextPolygon<T>, mask: &InstanceMask) -> bool {
    let covered = rasterize_interior(poly, mask.grid());
    let hit = covered.iter().filter(|&&i| mask.contains(i)).count();
    let area = mask.area() as f64;
    hit as f64 >= MIN_RECOVERY * area && (covered.len() - hit) as f64 <= MAX_EXTRA * area
}

/// Whether two non-adjacent edges of a closed ring cross at interior points.
/// Touching at a vertex does not count.
pub fn has_crossing<T: Scalar>(pts: &[Point<T>]) -> bool {
    let n = pts.len();
    let sign = |v: T| {
        if v > T::zero() {
            1
        } else if v < T::zero() {
            -1
        } else {
            0
        }
    };
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (pts[j], pts[(j + 1) % n]);
            let (s1, s2) = (sign(cross(a, b, c)), sign(cross(a, b, d)));
            let (s3, s4) = (sign(cross(c, d, a)), sign(cross(c, d, b)));
            if s1 * s2 < 0 && s3 * s4 < 0 {
                return true;
            }
            // collinear overlap of positive length
            if s1 == 0 && s2 == 0 {
                let (ux, uy) = (b.x - a.x, b.y - a.y);
                let t = |p: Point<T>| (p.x - a.x) * ux + (p.y - a.y) * uy;
                let len2 = ux * ux + uy * uy;
                let (tc, td) = (t(c), t(d));
                let lo = tc.min(td).max(T::zero());
                let hi = tc.max(td).min(len2);
                if hi > lo {
                    return true;
                }
            }
        }
    }
    false
}

fn cross<T: Scalar>(o: Point<T>, a: Point<T>, b: Point<T>) -> T {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull with positive signed area, collinear points dropped.
pub fn convex_hull<T: Scalar>(mut pts: Vec<Point<T>>) -> Vec<Point<T>> {
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.y.partial_cmp(&b.y).unwrap_or(std::cmp::Ordering::Equal))
    });
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point<T>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point<T>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= T::zero() {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn mask_center_extremes<T: Scalar>(mask: &InstanceMask) -> Vec<Point<T>> {
    let grid = mask.grid();
    let (_, r0, _, r1) = mask.bbox();
    let mut lo = vec![usize::MAX; r1 - r0 + 1];
    let mut hi = vec![0usize; r1 - r0 + 1];
    for &p in mask.pixels() {
        let (c, r) = grid.coords(p);
        lo[r - r0] = lo[r - r0].min(c);
        hi[r - r0] = hi[r - r0].max(c);
    }
    let half = T::half();
    let mut pts = Vec::with_capacity(2 * lo.len());
    for (k, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
        if a == usize::MAX {
            continue;
        }
        let y = T::from_usize_lossy(r0 + k) + half;
        pts.push(Point::new(T::from_usize_lossy(a) + half, y));
        pts.push(Point::new(T::from_usize_lossy(b) + half, y));
    }
    pts
}

/// Minimum-area rotated rectangle of the mask's pixel squares, seen from
/// their centers: rotating calipers over the convex hull of pixel centers
/// minimize `(w + 1)(h + 1)`, and the winning rectangle is pushed out by half
/// a pixel on every side. Axis-aligned blocks give their exact corner
/// rectangle. Vertices run with positive signed area, starting from the
/// topmost (then leftmost) corner.
pub fn min_area_rect<T: Scalar>(mask: &InstanceMask) -> Result<TextPolygon<T>> {
    if mask.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let mut hull = convex_hull(mask_center_extremes::<T>(mask));
    if hull.len() == 1 {
        hull.push(hull[0]);
    }
    let h = hull.len();
    let dot = |p: Point<T>, u: (T, T)| p.x * u.0 + p.y * u.1;
    let next = |i: usize| (i + 1) % h;
    let half = T::half();

    let mut best: Option<(T, [Point<T>; 4])> = None;
    // calipers: far end along the edge, farthest from the edge, near end
    let (mut j, mut k, mut l) = (1usize, 1usize, 0usize);
    for i in 0..h {
        let a = hull[i];
        let b = hull[next(i)];
        let len = ((b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y)).sqrt();
        let u = if len > T::zero() {
            ((b.x - a.x) / len, (b.y - a.y) / len)
        } else {
            (T::one(), T::zero())
        };
        let n = (-u.1, u.0);
        if i == 0 {
            j = next(i);
            k = next(i);
        }
        let mut guard = 0;
        while dot(hull[next(j)], u) > dot(hull[j], u) && guard < h {
            j = next(j);
            guard += 1;
        }
        if i == 0 {
            k = j;
        }
        guard = 0;
        while dot(hull[next(k)], n) > dot(hull[k], n) && guard < h {
            k = next(k);
            guard += 1;
        }
        if i == 0 {
            l = k;
        }
        guard = 0;
        while dot(hull[next(l)], u) < dot(hull[l], u) && guard < h {
            l = next(l);
            guard += 1;
        }
        let s_min = dot(hull[l], u) - dot(a, u) - half;
        let s_max = dot(hull[j], u) - dot(a, u) + half;
        let t_min = -half;
        let t_max = (dot(hull[k], n) - dot(a, n)).max(T::zero()) + half;
        let area = (s_max - s_min) * (t_max - t_min);
        let corner = |s: T, t: T| Point::new(a.x + u.0 * s + n.0 * t, a.y + u.1 * s + n.1 * t);
        if best.as_ref().is_none_or(|(ba, _)| area < *ba) {
            best = Some((
                area,
                [
                    corner(s_min, t_min),
                    corner(s_max, t_min),
                    corner(s_max, t_max),
                    corner(s_min, t_max),
                ],
            ));
        }
    }
    let (_, mut rect) = best.expect("hull has edges");
    let start = (0..4)
        .min_by(|&x, &y| {
            rect[x]
                .y
                .partial_cmp(&rect[y].y)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(rect[x].x.partial_cmp(&rect[y].x).unwrap_or(std::cmp::Ordering::Equal))
        })
        .unwrap();
    rect.rotate_left(start);
    TextPolygon::new(rect)
}

/// Boundary of one mask in the requested mode, scored by the final map.
pub fn extract_boundary<T: Scalar>(
    mask: &InstanceMask,
    last_map: &ProbabilityMap<T>,
    mode: BoundaryMode,
    epsilon: T,
) -> Result<DetectionBoundary<T>> {
    if mask.grid() != last_map.grid {
        return Err(Error::ShapeMismatch("mask and score map differ in size".into()));
    }
    let polygon = match mode {
        BoundaryMode::Polygon => trace_polygon(mask, epsilon)?,
        BoundaryMode::Rect => min_area_rect(mask)?,
    };
    let score = last_map.mean_over(mask.pixels()).ok_or(Error::EmptyInstance)?;
    Ok(DetectionBoundary {
        polygon,
        score: score.max(T::zero()).min(T::one()),
        mode,
    })
}
