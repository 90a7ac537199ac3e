//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use pmtext::geometry::rasterize_interior;
use pmtext::reconstruct::{connected_components, BinarizedStack};
use pmtext::{Grid, InstanceMask, Point, ProbabilityMap, ProbabilityStack, SceneSpec, ShapeFamily, TextPolygon64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Arbitrary-precision sigmoid alpha function, straight from the exponential
// definition: C * (2 / (1 + exp(-a d / L)) - 1), C = (1 + exp(-a)) / (1 - exp(-a)).

const FRAC_BITS: u32 = 320;

/// `(mantissa, exponent)` with `v = mantissa * 2^exponent`, for finite `v >= 0`.
fn decompose(v: f64) -> (BigInt, i64) {
    assert!(v.is_finite() && v >= 0.0);
    if v == 0.0 {
        return (BigInt::zero(), 0);
    }
    let bits = v.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (BigInt::from(frac), -1074)
    } else {
        (BigInt::from(frac | (1u64 << 52)), exp - 1075)
    }
}

/// Fixed-point value of `num / den * 2^shift` with `FRAC_BITS` fraction bits.
fn fixed(num: BigInt, den: BigInt, shift: i64) -> BigInt {
    let s = shift + FRAC_BITS as i64;
    if s >= 0 {
        (num << s as usize) / den
    } else {
        num / (den << (-s) as usize)
    }
}

fn one() -> BigInt {
    BigInt::one() << FRAC_BITS as usize
}

/// `exp(-x)` for fixed-point `x >= 0`.
fn exp_neg(x: &BigInt) -> BigInt {
    let bits = x.bits() as i64;
    let k = (bits - (FRAC_BITS as i64 - 12)).max(0) as usize;
    let y = x >> k;
    let mut sum = one();
    let mut term = one();
    let mut n = 1u32;
    loop {
        term = -((term * &y) >> FRAC_BITS as usize) / BigInt::from(n);
        if term.is_zero() {
            break;
        }
        sum += &term;
        n += 1;
    }
    for _ in 0..k {
        sum = (&sum * &sum) >> FRAC_BITS as usize;
    }
    sum
}

/// `num / den` rounded to f64 with full relative precision.
fn ratio_to_f64(num: &BigInt, den: &BigInt) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let s = (66 + den.bits() as i64 - num.bits() as i64).max(0);
    let q = (num << s as usize) / den;
    let mut v = q.to_f64().unwrap();
    // scale down in steps to stay clear of overflow in the power
    let mut left = s;
    while left > 0 {
        let step = left.min(1000);
        v *= 2f64.powi(-(step as i32));
        left -= step;
    }
    v
}

/// High-precision reference for `saf(d, l, alpha)` with `0 <= d <= l`.
pub fn hp_saf(d: f64, l: f64, alpha: f64) -> f64 {
    let (ma, ea) = decompose(alpha);
    let (md, ed) = decompose(d);
    let (ml, el) = decompose(l);
    let x = fixed(&ma * &md, ml, ea + ed - el);
    let a_fixed = fixed(ma, BigInt::one(), ea);
    let e_x = exp_neg(&x);
    let e_a = exp_neg(&a_fixed);
    let num = (one() + &e_a) * (one() - &e_x);
    let den = (one() - &e_a) * (one() + &e_x);
    assert!(!num.is_negative());
    ratio_to_f64(&num, &den)
}

// ---------------------------------------------------------------------------
// Geometry references.

fn orient(a: Point<f64>, b: Point<f64>, p: Point<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)
}

/// Even-odd membership with explicit boundary inclusion.
pub fn inside(v: &[Point<f64>], p: Point<f64>) -> bool {
    let n = v.len();
    let mut odd = false;
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let o = orient(a, b, p);
        if o == 0.0 && p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y) {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let right_of_p = if b.y > a.y { o > 0.0 } else { o < 0.0 };
            if right_of_p {
                odd = !odd;
            }
        }
    }
    odd
}

/// Same closed-form projection as the library, written out independently.
pub fn seg_dist(p: Point<f64>, a: Point<f64>, b: Point<f64>) -> f64 {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let ex = p.x - (a.x + t * dx);
    let ey = p.y - (a.y + t * dy);
    (ex * ex + ey * ey).sqrt()
}

pub fn center(grid: Grid, idx: usize) -> Point<f64> {
    Point::new((idx % grid.width) as f64 + 0.5, (idx / grid.width) as f64 + 0.5)
}

pub fn brute_raster(poly: &TextPolygon64, grid: Grid) -> Vec<usize> {
    (0..grid.len())
        .filter(|&i| inside(poly.vertices(), center(grid, i)))
        .collect()
}

/// Per-pixel, per-instance, per-alpha label stack.
pub fn brute_label_stack(polys: &[TextPolygon64], grid: Grid, alphas: &[f64]) -> Vec<Vec<f64>> {
    // per instance: membership and boundary distance of every pixel, then scale
    struct Inst {
        member: Vec<bool>,
        dist: Vec<f64>,
        scale: f64,
    }
    let mut insts = Vec::new();
    for poly in polys {
        let v = poly.vertices();
        let mut member = vec![false; grid.len()];
        let mut dist = vec![0.0; grid.len()];
        let mut scale = f64::NEG_INFINITY;
        for i in 0..grid.len() {
            let p = center(grid, i);
            if !inside(v, p) {
                continue;
            }
            member[i] = true;
            let mut d = f64::INFINITY;
            for k in 0..v.len() {
                d = d.min(seg_dist(p, v[k], v[(k + 1) % v.len()]));
            }
            dist[i] = d;
            scale = scale.max(d);
        }
        if scale > f64::NEG_INFINITY {
            insts.push(Inst {
                member,
                dist,
                scale: scale.max(1.0),
            });
        }
    }
    let mut out = vec![vec![0.0; grid.len()]; alphas.len()];
    for i in 0..grid.len() {
        for inst in &insts {
            if !inst.member[i] {
                continue;
            }
            for (j, &a) in alphas.iter().enumerate() {
                let v = pmtext::saf(inst.dist[i], inst.scale, a).unwrap();
                if v > out[j][i] {
                    out[j][i] = v;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Region references.

/// BFS flood fill; labels in order of each component's first row-major pixel.
pub fn flood_components(grid: Grid, layer: &[bool]) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; grid.len()];
    let mut next = 0;
    for s in 0..grid.len() {
        if !layer[s] || labels[s] != 0 {
            continue;
        }
        next += 1;
        labels[s] = next;
        let mut q = VecDeque::from([s]);
        while let Some(i) = q.pop_front() {
            for n in neighbours(grid, i) {
                if layer[n] && labels[n] == 0 {
                    labels[n] = next;
                    q.push_back(n);
                }
            }
        }
    }
    (labels, next)
}

/// Up, left, right, down.
pub fn neighbours(grid: Grid, i: usize) -> Vec<usize> {
    let (c, r) = (i % grid.width, i / grid.width);
    let mut v = Vec::with_capacity(4);
    if r > 0 {
        v.push(i - grid.width);
    }
    if c > 0 {
        v.push(i - 1);
    }
    if c + 1 < grid.width {
        v.push(i + 1);
    }
    if r + 1 < grid.height {
        v.push(i + grid.width);
    }
    v
}

/// Scale expansion with every claimed pixel enqueued, label by label.
pub fn bfs_pse(b: &BinarizedStack) -> Vec<u32> {
    let grid = b.grid();
    let (mut labels, count) = flood_components(grid, &b.layers()[0]);
    for layer in &b.layers()[1..] {
        let mut q = VecDeque::new();
        for l in 1..=count {
            for i in 0..grid.len() {
                if labels[i] == l {
                    q.push_back(i);
                }
            }
        }
        while let Some(i) = q.pop_front() {
            for n in neighbours(grid, i) {
                if labels[n] == 0 && layer[n] {
                    labels[n] = labels[i];
                    q.push_back(n);
                }
            }
        }
    }
    labels
}

/// Priority flood by linear scan for the lowest (level, index).
pub fn naive_watershed(stack: &ProbabilityStack<f64>, b: &BinarizedStack) -> Vec<u32> {
    let grid = b.grid();
    let n = stack.len() as f64;
    let topo: Vec<f64> = (0..grid.len())
        .map(|i| {
            let mut s = 0.0;
            for m in stack.maps() {
                s += m.values[i];
            }
            1.0 - s / n
        })
        .collect();
    let (mut labels, _) = flood_components(grid, &b.layers()[0]);
    let support = b.last();
    let mut pending: Vec<Option<u32>> = vec![None; grid.len()];
    let mut open: Vec<usize> = Vec::new();
    for i in 0..grid.len() {
        if labels[i] == 0 {
            continue;
        }
        for n in neighbours(grid, i) {
            if labels[n] == 0 && support[n] && pending[n].is_none() {
                pending[n] = Some(labels[i]);
                open.push(n);
            }
        }
    }
    while !open.is_empty() {
        let (k, _) = open
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| topo[a].partial_cmp(&topo[b]).unwrap().then(a.cmp(&b)))
            .unwrap();
        let i = open.swap_remove(k);
        labels[i] = pending[i].unwrap();
        for n in neighbours(grid, i) {
            if labels[n] == 0 && support[n] && pending[n].is_none() {
                pending[n] = Some(labels[i]);
                open.push(n);
            }
        }
    }
    labels
}

pub fn labels_from_masks(grid: Grid, masks: &[InstanceMask]) -> Vec<u32> {
    let mut labels = vec![0u32; grid.len()];
    for m in masks {
        for &p in m.pixels() {
            assert_eq!(labels[p], 0, "masks overlap");
            labels[p] = m.label;
        }
    }
    labels
}

// ---------------------------------------------------------------------------
// Loss reference.

/// Full-sort hard negative mining and per-map MSE.
pub fn full_sort_loss(
    pred: &[ProbabilityMap<f64>],
    gt: &[ProbabilityMap<f64>],
    gamma: f64,
    lambdas: &[f64],
) -> (f64, Vec<f64>) {
    let mut per = Vec::new();
    for (p, g) in pred.iter().zip(gt) {
        let err = |i: usize| (p.values[i] - g.values[i]).powi(2);
        let pos: Vec<usize> = (0..g.values.len()).filter(|&i| g.values[i] > 0.0).collect();
        let mut neg: Vec<usize> = (0..g.values.len()).filter(|&i| g.values[i] <= 0.0).collect();
        neg.sort_by(|&a, &b| err(b).partial_cmp(&err(a)).unwrap().then(a.cmp(&b)));
        let take = if pos.is_empty() {
            neg.len()
        } else {
            ((gamma * pos.len() as f64).ceil() as usize).min(neg.len())
        };
        let sel: Vec<usize> = pos.iter().copied().chain(neg[..take].iter().copied()).collect();
        let loss = if sel.is_empty() {
            0.0
        } else {
            sel.iter().map(|&i| err(i)).sum::<f64>() / sel.len() as f64
        };
        per.push(loss);
    }
    let total = per.iter().zip(lambdas).map(|(l, w)| l * w).sum();
    (total, per)
}

// ---------------------------------------------------------------------------
// Inputs.

/// Random 16x16 prediction/target pair with ties in the errors.
pub fn loss_case(seed: u64, sparse: f64) -> (ProbabilityStack<f64>, ProbabilityStack<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(16, 16).unwrap();
    let s = pmtext::make_schedule::<f64>(3, 4).unwrap();
    let mut gt = ProbabilityStack::zeros(grid, &s);
    let mut pred = gt.clone();
    for (g, p) in gt.maps_mut().iter_mut().zip(pred.maps_mut()) {
        for i in 0..grid.len() {
            if rng.random::<f64>() < sparse * 0.3 {
                g.values[i] = rng.random_range(0.01..=1.0);
            }
            // quantized so equal errors occur
            p.values[i] = (rng.random_range(0..=8) as f64) / 8.0;
        }
    }
    let lambdas = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
    (pred, gt, lambdas)
}

/// Random polygons that may overlap: a non-overlapping scene plus star-shaped
/// extras and, sometimes, a rectangle with edges through pixel centers.
pub fn label_scene(seed: u64) -> (Grid, Vec<TextPolygon64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(rng.random_range(40..=128), rng.random_range(40..=128)).unwrap();
    let count = rng.random_range(1..=3);
    let spec = SceneSpec::new(count, ShapeFamily::Mixed).with_min_area(30);
    let mut polys: Vec<TextPolygon64> = pmtext::random_scene(grid, &spec, seed).unwrap_or_default();
    for _ in 0..rng.random_range(0..=2) {
        polys.push(star(&mut rng, grid));
    }
    if rng.random_bool(0.5) {
        let x0 = rng.random_range(0..grid.width / 2) as f64 + 0.5;
        let y0 = rng.random_range(0..grid.height / 2) as f64 + 0.5;
        let x1 = x0 + rng.random_range(3..20) as f64;
        let y1 = y0 + rng.random_range(3..20) as f64;
        polys.push(TextPolygon64::from_xy(&[(x0, y0), (x1, y0), (x1, y1), (x0, y1)]).unwrap());
    }
    (grid, polys)
}

pub fn star(rng: &mut ChaCha8Rng, grid: Grid) -> TextPolygon64 {
    let cx = rng.random_range(0.0..grid.width as f64);
    let cy = rng.random_range(0.0..grid.height as f64);
    let k = rng.random_range(3..12);
    let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    loop {
        let pts: Vec<(f64, f64)> = angles
            .iter()
            .map(|&a| {
                let r = rng.random_range(2.0..25.0);
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        if let Ok(p) = TextPolygon64::from_xy(&pts) {
            return p;
        }
    }
}

/// A solid random blob: union of discs and bars, largest 4-connected
/// component, holes filled.
pub fn blob(seed: u64, grid: Grid) -> InstanceMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![false; grid.len()];
    let (w, h) = (grid.width as f64, grid.height as f64);
    for _ in 0..rng.random_range(1..6) {
        let (cx, cy) = (rng.random_range(0.2 * w..0.8 * w), rng.random_range(0.2 * h..0.8 * h));
        if rng.random_bool(0.7) {
            let r = rng.random_range(2.0..0.25 * w.min(h));
            for i in 0..grid.len() {
                let p = center(grid, i);
                if (p.x - cx).powi(2) + (p.y - cy).powi(2) <= r * r {
                    bits[i] = true;
                }
            }
        } else {
            let (len, th, ang) = (
                rng.random_range(6.0..0.5 * w),
                rng.random_range(2.0..7.0),
                rng.random_range(0.0..3.2f64),
            );
            let (s, c) = ang.sin_cos();
            for i in 0..grid.len() {
                let p = center(grid, i);
                let (dx, dy) = (p.x - cx, p.y - cy);
                if (dx * c + dy * s).abs() <= len / 2.0 && (-dx * s + dy * c).abs() <= th / 2.0 {
                    bits[i] = true;
                }
            }
        }
    }
    if !bits.iter().any(|&b| b) {
        bits[grid.index(grid.width / 2, grid.height / 2)] = true;
    }
    let main = connected_components(grid, &bits)
        .into_iter()
        .max_by_key(|m| m.area())
        .unwrap();
    let mut solid = main.to_bitmap();
    let outside: Vec<bool> = solid.iter().map(|&b| !b).collect();
    let (bg, _) = flood_components(grid, &outside);
    let mut touches = std::collections::HashSet::new();
    for i in 0..grid.len() {
        let (c, r) = grid.coords(i);
        if bg[i] != 0 && (c == 0 || r == 0 || c + 1 == grid.width || r + 1 == grid.height) {
            touches.insert(bg[i]);
        }
    }
    for i in 0..grid.len() {
        if bg[i] != 0 && !touches.contains(&bg[i]) {
            solid[i] = true;
        }
    }
    InstanceMask::new(grid, (0..grid.len()).filter(|&i| solid[i]).collect(), 1).unwrap()
}

/// Pixel centers re-covered by a polygon: (recovered share, extra share).
pub fn rasterize_back(poly: &TextPolygon64, mask: &InstanceMask) -> (f64, f64) {
    let covered = rasterize_interior(poly, mask.grid());
    let hit = covered.iter().filter(|&&i| mask.contains(i)).count();
    let a = mask.area() as f64;
    (hit as f64 / a, (covered.len() - hit) as f64 / a)
}

// ---------------------------------------------------------------------------
// Closed loop: scene -> oracle stack -> noise -> post-processing -> scoring.

pub const LOOP_GRID: (usize, usize) = (256, 256);
pub const LOOP_INSTANCES: usize = 4;

pub fn loop_scene(seed: u64) -> (Grid, Vec<TextPolygon64>) {
    let grid = Grid::new(LOOP_GRID.0, LOOP_GRID.1).unwrap();
    let spec = SceneSpec::new(LOOP_INSTANCES, ShapeFamily::Mixed);
    (grid, pmtext::random_scene(grid, &spec, seed).unwrap())
}

/// Micro-averaged report over the given scene seeds.
pub fn closed_loop(
    seeds: impl IntoIterator<Item = u64>,
    noise: &pmtext::NoiseSpec,
    cfg: &pmtext::PipelineConfig,
) -> pmtext::MatchReport {
    use rayon::prelude::*;
    use std::collections::BTreeMap;
    let seeds: Vec<u64> = seeds.into_iter().collect();
    let schedule = cfg.schedule::<f64>().unwrap();
    let per: Vec<(String, Vec<pmtext::Detection64>, Vec<TextPolygon64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let (grid, polys) = loop_scene(seed);
            let clean = pmtext::oracle_stack(&polys, grid, &schedule);
            let stack = pmtext::corrupt(&clean, noise, seed ^ 0x5eed);
            let out = pmtext::postprocess(&stack, &schedule, cfg).unwrap();
            let dets = out
                .boundaries
                .into_iter()
                .map(|b| pmtext::Detection {
                    polygon: b.polygon,
                    score: b.score,
                })
                .collect();
            (format!("scene_{seed:05}"), dets, polys)
        })
        .collect();
    let mut dets = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for (k, d, g) in per {
        dets.insert(k.clone(), d);
        gts.insert(k, g);
    }
    pmtext::match_and_score(&dets, &gts, cfg.iou).unwrap()
}
