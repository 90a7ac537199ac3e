//! Polygons, pixel grids, rasterization and boundary distances.
//!
//! Pixel `(col, row)` is sampled at its center `(col + 0.5, row + 0.5)`.
//! Coordinates are in pixel units with the origin at the top-left corner
//! and `y` growing downwards.

use crate::error::{Error, Result};
use crate::mask::InstanceMask;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }
}

/// Image domain shared by every map belonging to one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// `(col, row)` of a row-major pixel index.
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    #[inline]
    pub fn center<T: Scalar>(&self, idx: usize) -> Point<T> {
        let (c, r) = self.coords(idx);
        pixel_center(c, r)
    }

    /// 4-neighbours of a pixel that lie on the grid, in up/left/right/down order.
    #[inline]
    pub fn neighbors4(&self, idx: usize) -> impl Iterator<Item = usize> {
        let (c, r) = self.coords(idx);
        let w = self.width;
        let h = self.height;
        [
            (r > 0).then(|| idx - w),
            (c > 0).then(|| idx - 1),
            (c + 1 < w).then(|| idx + 1),
            (r + 1 < h).then(|| idx + w),
        ]
        .into_iter()
        .flatten()
    }
}

#[inline]
pub fn pixel_center<T: Scalar>(col: usize, row: usize) -> Point<T> {
    Point::new(
        T::from_usize_lossy(col) + T::half(),
        T::from_usize_lossy(row) + T::half(),
    )
}

/// Closed text polygon (last vertex connects back to the first).
#[derive(Debug, Clone, PartialEq)]
pub struct TextPolygon<T> {
    vertices: Vec<Point<T>>,
    pub id: String,
    pub ignore: bool,
}

impl<T: Scalar> TextPolygon<T> {
    /// Builds a polygon, dropping consecutive duplicate vertices (including a
    /// repeated closing vertex). Rejects non-finite coordinates, fewer than
    /// three distinct vertices and zero signed area.
    pub fn new(points: impl IntoIterator<Item = Point<T>>) -> Result<Self> {
        let mut vertices: Vec<Point<T>> = Vec::new();
        for p in points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::DegeneratePolygon("non-finite coordinate".into()));
            }
            if vertices.last() != Some(&p) {
                vertices.push(p);
            }
        }
        while vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "need at least 3 distinct vertices, got {}",
                vertices.len()
            )));
        }
        let poly = Self {
            vertices,
            id: String::new(),
            ignore: false,
        };
        if poly.signed_area() == T::zero() {
            return Err(Error::DegeneratePolygon("zero area".into()));
        }
        Ok(poly)
    }

    pub fn from_xy(points: &[(T, T)]) -> Result<Self> {
        Self::new(points.iter().map(|&(x, y)| Point::new(x, y)))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_ignore(mut self, ignore: bool) -> Self {
        self.ignore = ignore;
        self
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Directed edges `(v[i], v[i+1])`, wrapping around.
    pub fn edges(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace signed area. Positive for vertex order (0,0),(1,0),(1,1),(0,1).
    pub fn signed_area(&self) -> T {
        let twice: T = self.edges().map(|(a, b)| a.x * b.y - b.x * a.y).sum();
        twice * T::half()
    }

    pub fn area(&self) -> T {
        self.signed_area().abs()
    }

    pub fn bounds(&self) -> (Point<T>, Point<T>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for p in &self.vertices[1..] {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect(),
            id: self.id.clone(),
            ignore: self.ignore,
        }
    }

    /// Same polygon with the opposite vertex order.
    pub fn reversed(&self) -> Self {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        Self {
            vertices,
            id: self.id.clone(),
            ignore: self.ignore,
        }
    }

    pub fn cast<U: Scalar>(&self) -> TextPolygon<U> {
        TextPolygon {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point::new(U::lit(p.x.to_f64_lossy()), U::lit(p.y.to_f64_lossy())))
                .collect(),
            id: self.id.clone(),
            ignore: self.ignore,
        }
    }

    /// Nonzero-winding membership; points on the boundary count as inside.
    pub fn contains(&self, p: Point<T>) -> bool {
        let mut wn = 0i32;
        for (a, b) in self.edges() {
            if on_segment(a, b, p) {
                return true;
            }
            if a.y <= p.y {
                if b.y > p.y && is_left(a, b, p) > T::zero() {
                    wn += 1;
                }
            } else if b.y <= p.y && is_left(a, b, p) < T::zero() {
                wn -= 1;
            }
        }
        wn != 0
    }

    /// Minimum Euclidean distance from `p` to any boundary segment.
    pub fn boundary_distance(&self, p: Point<T>) -> T {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(T::infinity(), T::min)
    }
}

/// Twice the signed area of triangle `(a, b, p)`; positive when `p` is left of `a -> b`
/// in a y-up frame.
#[inline]
pub fn is_left<T: Scalar>(a: Point<T>, b: Point<T>, p: Point<T>) -> T {
    (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)
}

#[inline]
pub fn on_segment<T: Scalar>(a: Point<T>, b: Point<T>, p: Point<T>) -> bool {
    is_left(a, b, p) == T::zero()
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// Exact Euclidean distance from `p` to the closed segment `a-b`.
#[inline]
pub fn point_segment_distance<T: Scalar>(p: Point<T>, a: Point<T>, b: Point<T>) -> T {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len2 = dx * dx + dy * dy;
    let t = if len2 > T::zero() {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2)
            .max(T::zero())
            .min(T::one())
    } else {
        T::zero()
    };
    let ex = p.x - (a.x + t * dx);
    let ey = p.y - (a.y + t * dy);
    (ex * ex + ey * ey).sqrt()
}

fn clamp_index(v: f64, lo: isize, hi: isize) -> isize {
    if v.is_nan() {
        return lo;
    }
    (v.max(lo as f64).min(hi as f64)) as isize
}

/// Pixels whose centers lie inside `poly` under the nonzero winding rule,
/// boundary included, in row-major order.
///
/// Scanline crossings are located approximately and then decided with the
/// same exact orientation predicate as [`TextPolygon::contains`], so the
/// result matches a per-pixel test bit for bit.
pub fn rasterize_interior<T: Scalar>(poly: &TextPolygon<T>, grid: Grid) -> Vec<usize> {
    let (lo, hi) = poly.bounds();
    let w = grid.width as isize;
    let h = grid.height as isize;
    let row_lo = clamp_index((lo.y.to_f64_lossy() - 0.5).ceil() - 1.0, 0, h - 1);
    let row_hi = clamp_index((hi.y.to_f64_lossy() - 0.5).floor() + 1.0, -1, h - 1);
    let col_lo = clamp_index((lo.x.to_f64_lossy() - 0.5).ceil() - 1.0, 0, w - 1);
    let col_hi = clamp_index((hi.x.to_f64_lossy() - 0.5).floor() + 1.0, -1, w - 1);
    let mut out = Vec::new();
    if row_hi < row_lo || col_hi < col_lo {
        return out;
    }
    let span = (col_hi - col_lo + 1) as usize;
    let mut diff = vec![0i32; span + 1];
    let mut on_edge = vec![false; span];
    let edges: Vec<_> = poly.edges().collect();

    for row in row_lo..=row_hi {
        diff.iter_mut().for_each(|d| *d = 0);
        on_edge.iter_mut().for_each(|o| *o = false);
        let py = T::from_usize_lossy(row as usize) + T::half();
        let center = |col: isize| Point::new(T::from_usize_lossy(col as usize) + T::half(), py);

        for &(a, b) in &edges {
            let up = a.y <= py && b.y > py;
            let down = b.y <= py && a.y > py;
            let touches = a.y.min(b.y) <= py && a.y.max(b.y) >= py;
            if !touches {
                continue;
            }
            if a.y == b.y {
                // horizontal edge lying on this scanline
                let x0 = a.x.min(b.x).to_f64_lossy();
                let x1 = a.x.max(b.x).to_f64_lossy();
                let c0 = clamp_index((x0 - 0.5).ceil() - 1.0, col_lo, col_hi + 1);
                let c1 = clamp_index((x1 - 0.5).floor() + 1.0, col_lo - 1, col_hi);
                for c in c0..=c1 {
                    if on_segment(a, b, center(c)) {
                        on_edge[(c - col_lo) as usize] = true;
                    }
                }
                continue;
            }
            let xc = (a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y)).to_f64_lossy();
            let band_lo = clamp_index(xc.floor() - 2.0, col_lo, col_hi + 1);
            let band_hi = clamp_index(xc.floor() + 2.0, col_lo - 1, col_hi);
            for c in band_lo..=band_hi {
                if on_segment(a, b, center(c)) {
                    on_edge[(c - col_lo) as usize] = true;
                }
            }
            if up || down {
                let s = if up { 1 } else { -1 };
                // columns left of the band always satisfy the crossing predicate
                let sure_end = (band_lo - col_lo) as usize;
                diff[0] += s;
                diff[sure_end] -= s;
                for c in band_lo..=band_hi {
                    let il = is_left(a, b, center(c));
                    let counts = if up { il > T::zero() } else { il < T::zero() };
                    if counts {
                        let k = (c - col_lo) as usize;
                        diff[k] += s;
                        diff[k + 1] -= s;
                    }
                }
            }
        }

        let mut wn = 0i32;
        for k in 0..span {
            wn += diff[k];
            if wn != 0 || on_edge[k] {
                out.push(grid.index(col_lo as usize + k, row as usize));
            }
        }
    }
    out
}

/// Per-pixel values for a subset of a grid (one instance's support).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceFragment<T> {
    pub grid: Grid,
    /// Row-major pixel indices.
    pub pixels: Vec<usize>,
    /// Distance for each entry of `pixels`, in pixels.
    pub values: Vec<T>,
}

impl<T: Scalar> DistanceFragment<T> {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn max_value(&self) -> Option<T> {
        self.values.iter().copied().reduce(T::max)
    }
}

/// Distance from each listed pixel center to the nearest boundary segment of `poly`.
pub fn distance_to_boundary<T: Scalar>(poly: &TextPolygon<T>, grid: Grid, pixels: &[usize]) -> DistanceFragment<T> {
    let edges: Vec<_> = poly.edges().collect();
    let values = pixels
        .iter()
        .map(|&idx| {
            let p = grid.center(idx);
            edges
                .iter()
                .map(|&(a, b)| point_segment_distance(p, a, b))
                .fold(T::infinity(), T::min)
        })
        .collect();
    DistanceFragment {
        grid,
        pixels: pixels.to_vec(),
        values,
    }
}

/// Instance scale: the largest boundary distance, never below one pixel.
pub fn instance_scale<T: Scalar>(fragment: &DistanceFragment<T>) -> Result<T> {
    fragment
        .max_value()
        .map(|m| m.max(T::one()))
        .ok_or(Error::EmptyInstance)
}

/// Dense distance map over a whole grid, zero outside every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap<T> {
    pub grid: Grid,
    pub values: Vec<T>,
}

impl<T: Scalar> DistanceMap<T> {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![T::zero(); grid.len()],
        }
    }

    /// Merges a fragment, keeping the larger value where instances overlap.
    pub fn merge_max(&mut self, fragment: &DistanceFragment<T>) -> Result<()> {
        if fragment.grid != self.grid {
            return Err(Error::ShapeMismatch("fragment grid differs from map grid".into()));
        }
        for (&idx, &v) in fragment.pixels.iter().zip(&fragment.values) {
            let slot = &mut self.values[idx];
            *slot = slot.max(v);
        }
        Ok(())
    }
}

/// Distance of every mask pixel to the nearest boundary pixel center, where a
/// boundary pixel has at least one 4-neighbour outside the mask or the grid.
pub fn mask_distance_map<T: Scalar>(mask: &InstanceMask) -> Result<DistanceFragment<T>> {
    if mask.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let grid = mask.grid();
    let (c0, r0, c1, r1) = mask.bbox();
    let bw = c1 - c0 + 1;
    let bh = r1 - r0 + 1;
    let local = |idx: usize| {
        let (c, r) = grid.coords(idx);
        (r - r0) * bw + (c - c0)
    };
    let mut inside = vec![false; bw * bh];
    for &idx in mask.pixels() {
        inside[local(idx)] = true;
    }
    let is_in = |c: isize, r: isize| {
        c >= 0 && r >= 0 && (c as usize) < bw && (r as usize) < bh && inside[r as usize * bw + c as usize]
    };
    let mut sq = vec![T::infinity(); bw * bh];
    for &idx in mask.pixels() {
        let (c, r) = grid.coords(idx);
        let (lc, lr) = ((c - c0) as isize, (r - r0) as isize);
        let touches_outside = [(0, -1), (-1, 0), (1, 0), (0, 1)].iter().any(|&(dc, dr)| {
            let gc = c as isize + dc;
            let gr = r as isize + dr;
            gc < 0 || gr < 0 || gc as usize >= grid.width || gr as usize >= grid.height || !is_in(lc + dc, lr + dr)
        });
        if touches_outside {
            sq[local(idx)] = T::zero();
        }
    }
    squared_edt_2d(&mut sq, bw, bh);
    let values = mask.pixels().iter().map(|&idx| sq[local(idx)].sqrt()).collect();
    Ok(DistanceFragment {
        grid,
        pixels: mask.pixels().to_vec(),
        values,
    })
}

/// In-place exact squared Euclidean distance transform (lower envelope of
/// parabolas, columns then rows). Zero marks feature sites, infinity elsewhere.
pub(crate) fn squared_edt_2d<T: Scalar>(buf: &mut [T], width: usize, height: usize) {
    let mut line = vec![T::zero(); width.max(height)];
    let mut out = vec![T::zero(); width.max(height)];
    let mut sites = Vec::with_capacity(width.max(height));
    let mut bounds = Vec::with_capacity(width.max(height) + 1);
    for c in 0..width {
        for r in 0..height {
            line[r] = buf[r * width + c];
        }
        edt_1d(&line[..height], &mut out[..height], &mut sites, &mut bounds);
        for r in 0..height {
            buf[r * width + c] = out[r];
        }
    }
    for r in 0..height {
        line[..width].copy_from_slice(&buf[r * width..(r + 1) * width]);
        edt_1d(&line[..width], &mut out[..width], &mut sites, &mut bounds);
        buf[r * width..(r + 1) * width].copy_from_slice(&out[..width]);
    }
}

fn edt_1d<T: Scalar>(f: &[T], d: &mut [T], sites: &mut Vec<usize>, bounds: &mut Vec<T>) {
    sites.clear();
    bounds.clear();
    let sq = |q: usize| {
        let q = T::from_usize_lossy(q);
        q * q
    };
    let intersect = |q: usize, p: usize| {
        ((f[q] + sq(q)) - (f[p] + sq(p))) / (T::two() * (T::from_usize_lossy(q) - T::from_usize_lossy(p)))
    };
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        while let Some(&p) = sites.last() {
            let s = intersect(q, p);
            if sites.len() > 1 && s <= bounds[bounds.len() - 1] {
                sites.pop();
                bounds.pop();
            } else {
                bounds.push(s);
                break;
            }
        }
        if sites.is_empty() {
            bounds.clear();
        }
        sites.push(q);
    }
    if sites.is_empty() {
        d.iter_mut().for_each(|v| *v = T::infinity());
        return;
    }
    // bounds[k] separates sites[k] and sites[k+1]
    let mut k = 0;
    for (q, slot) in d.iter_mut().enumerate() {
        let qf = T::from_usize_lossy(q);
        while k < bounds.len() && bounds[k] < qf {
            k += 1;
        }
        let p = sites[k];
        let diff = qf - T::from_usize_lossy(p);
        *slot = diff * diff + f[p];
    }
}
