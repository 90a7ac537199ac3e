//! Detection scoring: polygon IoU and greedy one-to-one matching.
//!
//! Intersection areas of arbitrary simple polygons are computed by
//! decomposing each polygon into a signed triangle fan around its first
//! vertex. The signed fan indicators sum to the polygon's indicator, so the
//! overlap area is the signed sum of pairwise triangle intersections, each of
//! which is a convex clip.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point, TextPolygon};
use crate::scalar::Scalar;

fn cross<T: Scalar>(o: Point<T>, a: Point<T>, b: Point<T>) -> T {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn ring_area<T: Scalar>(pts: &[Point<T>]) -> T {
    let n = pts.len();
    if n < 3 {
        return T::zero();
    }
    let twice: T = (0..n)
        .map(|i| {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice * T::half()
}

/// Sutherland-Hodgman clip of a convex subject by a convex clipper with
/// positive orientation.
fn clip_convex<T: Scalar>(subject: &[Point<T>], clipper: &[Point<T>]) -> Vec<Point<T>> {
    let mut out = subject.to_vec();
    let m = clipper.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let a = clipper[i];
        let b = clipper[(i + 1) % m];
        let input = std::mem::take(&mut out);
        let n = input.len();
        for k in 0..n {
            let p = input[k];
            let q = input[(k + 1) % n];
            let sp = cross(a, b, p);
            let sq = cross(a, b, q);
            let p_in = sp >= T::zero();
            let q_in = sq >= T::zero();
            if p_in {
                out.push(p);
            }
            if p_in != q_in {
                let t = sp / (sp - sq);
                out.push(Point::new(p.x + (q.x - p.x) * t, p.y + (q.y - p.y) * t));
            }
        }
    }
    out
}

/// Fan triangles `(v0, v_i, v_i+1)` oriented positively, with the sign of
/// their original orientation.
fn fan<T: Scalar>(poly: &TextPolygon<T>) -> Vec<([Point<T>; 3], T)> {
    let v = poly.vertices();
    (1..v.len() - 1)
        .filter_map(|i| {
            let tri = [v[0], v[i], v[i + 1]];
            let s = cross(tri[0], tri[1], tri[2]);
            if s > T::zero() {
                Some((tri, T::one()))
            } else if s < T::zero() {
                Some(([tri[0], tri[2], tri[1]], -T::one()))
            } else {
                None
            }
        })
        .collect()
}

/// Area of `a ∩ b` for simple polygons of either orientation.
pub fn intersection_area<T: Scalar>(a: &TextPolygon<T>, b: &TextPolygon<T>) -> T {
    let (alo, ahi) = a.bounds();
    let (blo, bhi) = b.bounds();
    if alo.x >= bhi.x || blo.x >= ahi.x || alo.y >= bhi.y || blo.y >= ahi.y {
        return T::zero();
    }
    let fa = fan(a);
    let fb = fan(b);
    let mut total = T::zero();
    for (ta, sa) in &fa {
        for (tb, sb) in &fb {
            let piece = clip_convex(ta, tb);
            let area = ring_area(&piece);
            if area != T::zero() {
                total = total + *sa * *sb * area;
            }
        }
    }
    let sign = a.signed_area().signum() * b.signed_area().signum();
    (total * sign).max(T::zero())
}

/// Intersection over union of two polygons, in `[0, 1]`.
pub fn polygon_iou<T: Scalar>(a: &TextPolygon<T>, b: &TextPolygon<T>) -> Result<T> {
    let area_a = a.area();
    let area_b = b.area();
    if area_a == T::zero() || area_b == T::zero() {
        return Err(Error::DegeneratePolygon("zero-area polygon in IoU".into()));
    }
    let inter = intersection_area(a, b).min(area_a).min(area_b);
    let union = area_a + area_b - inter;
    Ok((inter / union).max(T::zero()).min(T::one()))
}

/// A scored detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub polygon: TextPolygon<T>,
    pub score: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatchReport {
    /// Per-image counts keyed by image name, in key order.
    pub per_image: Vec<(String, Counts)>,
    pub totals: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub iou_threshold: f64,
}

impl MatchReport {
    /// Micro-averaged scores from summed counts; a zero denominator gives 0.
    pub fn from_counts(per_image: Vec<(String, Counts)>, iou_threshold: f64) -> Self {
        let totals = per_image.iter().fold(Counts::default(), |acc, (_, c)| acc + *c);
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(totals.tp, totals.tp + totals.fp);
        let recall = ratio(totals.tp, totals.tp + totals.fn_);
        let f_measure = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            per_image,
            totals,
            precision,
            recall,
            f_measure,
            iou_threshold,
        }
    }

    /// Fixed-width summary table.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<24} {:>6} {:>6} {:>6}\n", "image", "tp", "fp", "fn");
        for (k, c) in &self.per_image {
            s.push_str(&format!("{:<24} {:>6} {:>6} {:>6}\n", k, c.tp, c.fp, c.fn_));
        }
        s.push_str(&format!(
            "{:<24} {:>6} {:>6} {:>6}\n",
            "total", self.totals.tp, self.totals.fp, self.totals.fn_
        ));
        s.push_str(&format!(
            "IoU >= {:.2}   P = {:.4}   R = {:.4}   F = {:.4}\n",
            self.iou_threshold, self.precision, self.recall, self.f_measure
        ));
        s
    }
}

/// Greedy matching for one image.
///
/// Detections are visited by descending score (equal scores by input
/// index). Each takes the unmatched non-ignore ground truth with the
/// highest IoU at or above the threshold; failing that, a detection that
/// overlaps an ignore region at the threshold is dropped without counting;
/// anything else is a false positive. Unmatched non-ignore ground truths are
/// false negatives.
pub fn match_image<T: Scalar>(dets: &[Detection<T>], gts: &[TextPolygon<T>], iou_th: T) -> Result<Counts> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; gts.len()];
    let mut counts = Counts::default();
    for &d in &order {
        let det = &dets[d].polygon;
        let mut best: Option<(usize, T)> = None;
        let mut hits_ignore = false;
        for (g, gt) in gts.iter().enumerate() {
            if !gt.ignore && taken[g] {
                continue;
            }
            let iou = polygon_iou(det, gt)?;
            if iou < iou_th {
                continue;
            }
            if gt.ignore {
                hits_ignore = true;
            } else if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, _)) => {
                taken[g] = true;
                counts.tp += 1;
            }
            None if hits_ignore => {}
            None => counts.fp += 1,
        }
    }
    counts.fn_ = gts.iter().zip(&taken).filter(|(g, &t)| !g.ignore && !t).count();
    Ok(counts)
}

/// Matches every image and aggregates micro-averaged precision, recall and
/// F-measure. Both maps must carry exactly the same image keys.
pub fn match_and_score<T: Scalar>(
    dets: &BTreeMap<String, Vec<Detection<T>>>,
    gts: &BTreeMap<String, Vec<TextPolygon<T>>>,
    iou_th: T,
) -> Result<MatchReport> {
    if let Some(k) = dets.keys().find(|k| !gts.contains_key(*k)) {
        return Err(Error::MissingImageKey(k.clone(), "ground truth"));
    }
    if let Some(k) = gts.keys().find(|k| !dets.contains_key(*k)) {
        return Err(Error::MissingImageKey(k.clone(), "detections"));
    }
    let per_image = gts
        .par_iter()
        .map(|(k, g)| Ok((k.clone(), match_image(&dets[k], g, iou_th)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchReport::from_counts(per_image, iou_th.to_f64_lossy()))
}
