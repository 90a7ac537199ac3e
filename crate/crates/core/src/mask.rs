use crate::error::{Error, Result};
use crate::geometry::Grid;

/// One candidate text instance: a non-empty, 4-connected set of pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMask {
    grid: Grid,
    /// Sorted row-major pixel indices.
    pixels: Vec<usize>,
    pub label: u32,
}

impl InstanceMask {
    /// Validates that `pixels` is non-empty, on the grid and 4-connected.
    pub fn new(grid: Grid, mut pixels: Vec<usize>, label: u32) -> Result<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        if pixels.is_empty() {
            return Err(Error::EmptyInstance);
        }
        if *pixels.last().unwrap() >= grid.len() {
            return Err(Error::ShapeMismatch("mask pixel outside grid".into()));
        }
        let mask = Self { grid, pixels, label };
        if !mask.is_connected() {
            return Err(Error::DisconnectedMask);
        }
        Ok(mask)
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_sorted_unchecked(grid: Grid, pixels: Vec<usize>, label: u32) -> Self {
        debug_assert!(!pixels.is_empty());
        debug_assert!(pixels.windows(2).all(|w| w[0] < w[1]));
        Self { grid, pixels, label }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.pixels.binary_search(&idx).is_ok()
    }

    /// Inclusive `(col_min, row_min, col_max, row_max)`.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        let (mut c0, mut r0) = self.grid.coords(self.pixels[0]);
        let (mut c1, mut r1) = (c0, r0);
        for &p in &self.pixels[1..] {
            let (c, r) = self.grid.coords(p);
            c0 = c0.min(c);
            c1 = c1.max(c);
            r0 = r0.min(r);
            r1 = r1.max(r);
        }
        (c0, r0, c1, r1)
    }

    pub fn to_bitmap(&self) -> Vec<bool> {
        let mut bits = vec![false; self.grid.len()];
        for &p in &self.pixels {
            bits[p] = true;
        }
        bits
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.pixels.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(k) = stack.pop() {
            for n in self.grid.neighbors4(self.pixels[k]) {
                if let Ok(j) = self.pixels.binary_search(&n) {
                    if !seen[j] {
                        seen[j] = true;
                        count += 1;
                        stack.push(j);
                    }
                }
            }
        }
        count == self.pixels.len()
    }
}
