//! Candidate instances from a predicted stack: binarisation, connected
//! components and region growth (progressive scale expansion or
//! marker-based watershed).
//!
//! Layers are ordered from the smallest alpha to the largest. After
//! thresholding at a fixed level the smallest-alpha map is the most shrunken,
//! so it provides the seeds, and the largest-alpha map bounds the growth.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::mask::InstanceMask;
use crate::probmap::ProbabilityStack;
use crate::scalar::Scalar;

/// Region-growth algorithm used to turn seeds into instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthAlgorithm {
    Pse,
    Watershed,
}

impl std::str::FromStr for GrowthAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pse" => Ok(Self::Pse),
            "watershed" => Ok(Self::Watershed),
            other => Err(Error::InvalidConfig(format!("unknown growth algorithm {other:?}"))),
        }
    }
}

impl std::fmt::Display for GrowthAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pse => "pse",
            Self::Watershed => "watershed",
        })
    }
}

/// One binary layer per probability map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarizedStack {
    grid: Grid,
    layers: Vec<Vec<bool>>,
}

impl BinarizedStack {
    pub fn new(grid: Grid, layers: Vec<Vec<bool>>) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(|l| l.len() != grid.len()) {
            return Err(Error::ShapeMismatch("binary layers must match the grid".into()));
        }
        Ok(Self { grid, layers })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn last(&self) -> &[bool] {
        self.layers.last().expect("non-empty")
    }

    /// Fraction of seed-layer pixels that are not in the final layer; zero
    /// for well-nested predictions.
    pub fn nesting_violation(&self) -> f64 {
        let first = &self.layers[0];
        let last = self.last();
        let seeds = first.iter().filter(|&&b| b).count();
        if seeds == 0 {
            return 0.0;
        }
        let outside = first.iter().zip(last).filter(|(&a, &b)| a && !b).count();
        outside as f64 / seeds as f64
    }
}

/// Thresholds every map at `value >= th_b`.
pub fn binarize_stack<T: Scalar>(stack: &ProbabilityStack<T>, th_b: T) -> Result<BinarizedStack> {
    if !(th_b > T::zero() && th_b < T::one()) {
        return Err(Error::InvalidConfig(format!(
            "binary threshold must be in (0, 1), got {th_b}"
        )));
    }
    let layers = stack
        .maps()
        .par_iter()
        .map(|m| m.values.iter().map(|&v| v >= th_b).collect())
        .collect();
    Ok(BinarizedStack {
        grid: stack.grid(),
        layers,
    })
}

/// Minimal disjoint-set forest over provisional labels.
struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let ra = self.find(a);
        let rb = self.find(b);
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// 4-connected labelling of a binary layer (two-pass, union-find).
/// Returns the per-pixel label (0 = background) and the component count.
/// Labels are numbered from 1 in order of each component's first row-major pixel.
pub fn label_components(grid: Grid, layer: &[bool]) -> (Vec<u32>, u32) {
    let w = grid.width;
    let mut labels = vec![0u32; grid.len()];
    let mut uf = UnionFind::new();
    for idx in 0..grid.len() {
        if !layer[idx] {
            continue;
        }
        let col = idx % w;
        let up = if idx >= w { labels[idx - w] } else { 0 };
        let left = if col > 0 { labels[idx - 1] } else { 0 };
        labels[idx] = match (up, left) {
            (0, 0) => uf.make(),
            (u, 0) => u,
            (0, l) => l,
            (u, l) if u == l => u,
            (u, l) => uf.union(u, l),
        };
    }
    let mut remap = vec![0u32; uf.parent.len()];
    let mut next = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = uf.find(*l) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        *l = remap[root];
    }
    (labels, next)
}

fn masks_from_labels(grid: Grid, labels: &[u32], count: u32) -> Vec<InstanceMask> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); count as usize];
    for (idx, &l) in labels.iter().enumerate() {
        if l != 0 {
            buckets[l as usize - 1].push(idx);
        }
    }
    buckets
        .into_iter()
        .enumerate()
        .filter(|(_, px)| !px.is_empty())
        .map(|(i, px)| InstanceMask::from_sorted_unchecked(grid, px, i as u32 + 1))
        .collect()
}

/// Connected components of one binary layer as masks, ordered by their
/// smallest row-major pixel index.
pub fn connected_components(grid: Grid, layer: &[bool]) -> Vec<InstanceMask> {
    let (labels, count) = label_components(grid, layer);
    masks_from_labels(grid, &labels, count)
}

/// Progressive scale expansion.
///
/// Seeds are the components of the first layer. For each later layer, every
/// instance grows breadth-first into unclaimed pixels of that layer through a
/// single shared FIFO queue. The queue is seeded label by label, each label's
/// pixels in row-major order, so the first instance to reach a pixel claims
/// it and the outcome is fully determined by the input.
pub fn progressive_scale_expansion(bstack: &BinarizedStack) -> Vec<InstanceMask> {
    let (labels, count) = label_components(bstack.grid, &bstack.layers[0]);
    expand_seeds(bstack, labels, count)
}

/// Expansion stage of [`progressive_scale_expansion`], starting from a
/// labelling of the first layer as returned by [`label_components`].
///
/// # Panics
/// If `labels` does not cover the grid.
pub fn expand_seeds(bstack: &BinarizedStack, mut labels: Vec<u32>, count: u32) -> Vec<InstanceMask> {
    let grid = bstack.grid;
    assert_eq!(labels.len(), grid.len(), "seed labels must cover the grid");
    if count == 0 {
        return Vec::new();
    }
    let w = grid.width;
    let h = grid.height;
    let mut queue: Vec<usize> = Vec::with_capacity(grid.len() / 4);
    let mut bucket_len = vec![0usize; count as usize + 1];
    for layer in &bstack.layers[1..] {
        // Only claimed pixels with an unclaimed in-layer neighbour can expand;
        // skipping the rest leaves the claim order unchanged.
        let frontier = |idx: usize, labels: &[u32]| {
            let (c, r) = (idx % w, idx / w);
            (r > 0 && labels[idx - w] == 0 && layer[idx - w])
                || (c > 0 && labels[idx - 1] == 0 && layer[idx - 1])
                || (c + 1 < w && labels[idx + 1] == 0 && layer[idx + 1])
                || (r + 1 < h && labels[idx + w] == 0 && layer[idx + w])
        };
        bucket_len.iter_mut().for_each(|b| *b = 0);
        for idx in 0..grid.len() {
            let l = labels[idx];
            if l != 0 && frontier(idx, &labels) {
                bucket_len[l as usize] += 1;
            }
        }
        let mut offsets = vec![0usize; count as usize + 1];
        let mut acc = 0;
        for l in 1..=count as usize {
            offsets[l] = acc;
            acc += bucket_len[l];
        }
        queue.clear();
        queue.resize(acc, 0);
        for idx in 0..grid.len() {
            let l = labels[idx];
            if l != 0 && frontier(idx, &labels) {
                queue[offsets[l as usize]] = idx;
                offsets[l as usize] += 1;
            }
        }
        let mut head = 0;
        while head < queue.len() {
            let idx = queue[head];
            head += 1;
            let l = labels[idx];
            let (c, r) = (idx % w, idx / w);
            let claim = |n: usize, labels: &mut [u32], queue: &mut Vec<usize>| {
                if labels[n] == 0 && layer[n] {
                    labels[n] = l;
                    queue.push(n);
                }
            };
            if r > 0 {
                claim(idx - w, &mut labels, &mut queue);
            }
            if c > 0 {
                claim(idx - 1, &mut labels, &mut queue);
            }
            if c + 1 < w {
                claim(idx + 1, &mut labels, &mut queue);
            }
            if r + 1 < h {
                claim(idx + w, &mut labels, &mut queue);
            }
        }
    }
    masks_from_labels(grid, &labels, count)
}

#[derive(Clone, Copy)]
struct FloodKey<T> {
    level: T,
    idx: usize,
}

impl<T: Scalar> PartialEq for FloodKey<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for FloodKey<T> {}

impl<T: Scalar> PartialOrd for FloodKey<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for FloodKey<T> {
    // reversed: BinaryHeap pops the lowest level, then the lowest index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .level
            .partial_cmp(&self.level)
            .unwrap_or(Ordering::Equal)
            .then(other.idx.cmp(&self.idx))
    }
}

/// Flooding relief used by [`watershed_aggregate`]: one minus the mean over the stack's maps.
pub fn watershed_topography<T: Scalar>(stack: &ProbabilityStack<T>) -> Vec<T> {
    let n = T::from_usize_lossy(stack.len());
    let grid = stack.grid();
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let s: T = stack.maps().iter().map(|m| m.values[i]).sum();
            T::one() - s / n
        })
        .collect()
}

/// Marker-based watershed.
///
/// Markers are the components of the first layer; flooding is confined to
/// the last layer and proceeds in ascending topography (ties by row-major
/// index). A pixel takes the label of the region that first queued it, so
/// ridge pixels are never left unassigned.
pub fn watershed_aggregate<T: Scalar>(
    stack: &ProbabilityStack<T>,
    bstack: &BinarizedStack,
) -> Result<Vec<InstanceMask>> {
    let (labels, count) = label_components(bstack.grid, &bstack.layers[0]);
    flood_markers(stack, bstack, labels, count)
}

/// Flooding stage of [`watershed_aggregate`], starting from a labelling of
/// the first layer.
pub fn flood_markers<T: Scalar>(
    stack: &ProbabilityStack<T>,
    bstack: &BinarizedStack,
    mut labels: Vec<u32>,
    count: u32,
) -> Result<Vec<InstanceMask>> {
    let grid = bstack.grid;
    if stack.grid() != grid || labels.len() != grid.len() {
        return Err(Error::ShapeMismatch(
            "stack, labels and binary layers differ in size".into(),
        ));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let topo = watershed_topography(stack);
    let support = bstack.last();
    let mut queued = vec![false; grid.len()];
    let mut pending = vec![0u32; grid.len()];
    let mut heap = BinaryHeap::new();
    for idx in 0..grid.len() {
        if labels[idx] == 0 {
            continue;
        }
        for n in grid.neighbors4(idx) {
            if labels[n] == 0 && support[n] && !queued[n] {
                queued[n] = true;
                pending[n] = labels[idx];
                heap.push(FloodKey { level: topo[n], idx: n });
            }
        }
    }
    while let Some(FloodKey { idx, .. }) = heap.pop() {
        let l = pending[idx];
        labels[idx] = l;
        for n in grid.neighbors4(idx) {
            if labels[n] == 0 && support[n] && !queued[n] {
                queued[n] = true;
                pending[n] = l;
                heap.push(FloodKey { level: topo[n], idx: n });
            }
        }
    }
    Ok(masks_from_labels(grid, &labels, count))
}

/// Binarise and grow with the chosen algorithm.
pub fn reconstruct<T: Scalar>(
    stack: &ProbabilityStack<T>,
    th_b: T,
    algorithm: GrowthAlgorithm,
) -> Result<Vec<InstanceMask>> {
    let bstack = binarize_stack(stack, th_b)?;
    match algorithm {
        GrowthAlgorithm::Pse => Ok(progressive_scale_expansion(&bstack)),
        GrowthAlgorithm::Watershed => watershed_aggregate(stack, &bstack),
    }
}
