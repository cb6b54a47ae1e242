//! Dense occupancy grids, distance transforms and iso-surface extraction.

mod dump;
mod edt;
mod mc;
mod voxelize;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Aabb;

pub use dump::{read_grid_dump, write_grid_dump, GRID_MAGIC};
pub use edt::{dilate, distance_transform, DistanceGrid};
pub use mc::marching_cubes;
pub use voxelize::{voxelize, Fill, Voxelization};

pub const DEFAULT_RESOLUTION: usize = 512;
pub const MIN_RESOLUTION: usize = 8;

/// Cubic grid layout: `resolution` isotropic cells per axis over `domain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    resolution: usize,
    domain: Aabb,
    cell_size: f64,
}

impl GridConfig {
    /// Builds a grid over `domain`, expanded about its center to a cube.
    pub fn new(resolution: usize, domain: Aabb) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return Err(Error::InvalidArgument(format!(
                "grid resolution {resolution} is below {MIN_RESOLUTION}"
            )));
        }
        let e = domain.extent();
        let side = e[0].max(e[1]).max(e[2]);
        if !(side > 0.0) || !side.is_finite() || domain.is_empty() {
            return Err(Error::Degenerate("grid domain has no extent".into()));
        }
        let c = domain.center();
        let h = 0.5 * side;
        let domain = Aabb::new([c.x - h, c.y - h, c.z - h], [c.x + h, c.y + h, c.z + h]);
        Ok(Self {
            resolution,
            domain,
            cell_size: side / resolution as f64,
        })
    }

    /// Cube around `bounds` leaving `margin` meters plus `pad_cells` cells free on every side.
    pub fn fit(bounds: &Aabb, resolution: usize, margin: f64, pad_cells: f64) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::EmptyInput("nothing to fit a grid around".into()));
        }
        let frac = 1.0 - 2.0 * pad_cells / resolution as f64;
        if frac <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "{pad_cells} padding cells do not fit in {resolution} cells"
            )));
        }
        let e = bounds.extent();
        let side = (e[0].max(e[1]).max(e[2]) + 2.0 * margin) / frac;
        let c = bounds.center();
        let h = 0.5 * side;
        Self::new(
            resolution,
            Aabb::new([c.x - h, c.y - h, c.z - h], [c.x + h, c.y + h, c.z + h]),
        )
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn domain(&self) -> &Aabb {
        &self.domain
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        let h = self.cell_size;
        Point3::new(
            self.domain.min[0] + (i as f64 + 0.5) * h,
            self.domain.min[1] + (j as f64 + 0.5) * h,
            self.domain.min[2] + (k as f64 + 0.5) * h,
        )
    }

    /// Continuous cell coordinate of `p` along each axis (cell `i` spans `[i, i+1)`).
    pub fn to_cell_coords(&self, p: &Point3<f64>) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.domain.min[a]) / self.cell_size)
    }

    pub fn cell_of(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let c = self.to_cell_coords(p);
        let n = self.resolution as f64;
        if c.iter().all(|&v| v >= 0.0 && v < n) {
            Some(c.map(|v| v as usize))
        } else {
            None
        }
    }
}

/// Dense binary grid. Rows along x are stored as padded `u64` words, so
/// each `(j, k)` row starts on a word boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    config: GridConfig,
    words: Vec<u64>,
    words_per_row: usize,
    count: usize,
}

impl OccupancyGrid {
    pub fn empty(config: GridConfig) -> Self {
        let n = config.resolution;
        let wpr = n.div_ceil(64);
        Self {
            config,
            words: vec![0; wpr * n * n],
            words_per_row: wpr,
            count: 0,
        }
    }

    /// Grid with cell `(i, j, k)` set iff `f(i, j, k)`; evaluated in parallel over z-slices.
    pub fn from_fn(config: GridConfig, f: impl Fn(usize, usize, usize) -> bool + Sync) -> Self {
        let mut g = Self::empty(config);
        let n = config.resolution;
        let wpr = g.words_per_row;
        g.words.par_chunks_mut(wpr * n).enumerate().for_each(|(k, slice)| {
            for j in 0..n {
                let row = &mut slice[j * wpr..(j + 1) * wpr];
                for i in 0..n {
                    if f(i, j, k) {
                        row[i / 64] |= 1 << (i % 64);
                    }
                }
            }
        });
        g.recount();
        g
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn resolution(&self) -> usize {
        self.config.resolution
    }

    pub fn cell_size(&self) -> f64 {
        self.config.cell_size
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub(crate) fn row_index(&self, j: usize, k: usize) -> usize {
        (k * self.config.resolution + j) * self.words_per_row
    }

    pub fn row(&self, j: usize, k: usize) -> &[u64] {
        let r = self.row_index(j, k);
        &self.words[r..r + self.words_per_row]
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    /// Mutable access to the raw words; callers must call [`recount`](Self::recount) afterwards.
    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.words
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        let w = self.words[self.row_index(j, k) + i / 64];
        (w >> (i % 64)) & 1 == 1
    }

    /// Like [`get`](Self::get), with everything outside the domain empty.
    pub fn get_signed(&self, i: isize, j: isize, k: isize) -> bool {
        let n = self.config.resolution as isize;
        if i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n {
            return false;
        }
        self.get(i as usize, j as usize, k as usize)
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: bool) {
        let idx = self.row_index(j, k) + i / 64;
        let bit = 1u64 << (i % 64);
        let was = self.words[idx] & bit != 0;
        if value && !was {
            self.words[idx] |= bit;
            self.count += 1;
        } else if !value && was {
            self.words[idx] &= !bit;
            self.count -= 1;
        }
    }

    pub fn recount(&mut self) {
        self.count = self.words.par_iter().map(|w| w.count_ones() as usize).sum();
    }

    pub fn iter_occupied(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let n = self.config.resolution;
        let wpr = self.words_per_row;
        self.words.iter().enumerate().flat_map(move |(wi, &w)| {
            let row = wi / wpr;
            let base = (wi % wpr) * 64;
            let (j, k) = (row % n, row / n);
            BitIter(w).map(move |b| [base + b, j, k])
        })
    }

    /// Inclusive index bounds of the occupied cells.
    pub fn occupied_index_bounds(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let n = self.config.resolution;
        let wpr = self.words_per_row;
        for (r, row) in self.words.chunks(wpr).enumerate() {
            let (j, k) = (r % n, r / n);
            let first = row.iter().position(|&w| w != 0);
            let Some(f) = first else { continue };
            let l = row.iter().rposition(|&w| w != 0).unwrap();
            let i0 = f * 64 + row[f].trailing_zeros() as usize;
            let i1 = l * 64 + 63 - row[l].leading_zeros() as usize;
            lo = [lo[0].min(i0), lo[1].min(j), lo[2].min(k)];
            hi = [hi[0].max(i1), hi[1].max(j), hi[2].max(k)];
        }
        (lo[0] != usize::MAX).then_some((lo, hi))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(Error::InvalidArgument("grids have different layouts".into()));
        }
        Ok(())
    }

    fn combine(&self, other: &Self, op: impl Fn(u64, u64) -> u64 + Sync) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.words
            .par_iter_mut()
            .zip(other.words.par_iter())
            .for_each(|(a, &b)| *a = op(*a, b));
        out.recount();
        Ok(out)
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.combine(other, |a, b| a & !b)
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.config == other.config && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Number of cells occupied in both grids.
    pub fn overlap_count(&self, other: &Self) -> Result<usize> {
        self.check_same(other)?;
        Ok(self
            .words
            .par_iter()
            .zip(other.words.par_iter())
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }
}

/// Iterates the set bit positions of a word.
pub struct BitIter(pub u64);

impl Iterator for BitIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }
}

/// Sets bits `[lo, hi)` of a padded row.
pub(crate) fn fill_bits(row: &mut [u64], lo: usize, hi: usize) {
    if lo >= hi {
        return;
    }
    let (w0, w1) = (lo / 64, (hi - 1) / 64);
    for (w, word) in row.iter_mut().enumerate().take(w1 + 1).skip(w0) {
        let a = if w == w0 { lo % 64 } else { 0 };
        let b = if w == w1 { (hi - 1) % 64 + 1 } else { 64 };
        let mask = if b - a == 64 { u64::MAX } else { ((1u64 << (b - a)) - 1) << a };
        *word |= mask;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize) -> GridConfig {
        GridConfig::new(n, Aabb::new([0.0; 3], [1.0; 3])).unwrap()
    }

    #[test]
    fn config_is_cubic_and_validated() {
        let c = GridConfig::new(16, Aabb::new([0.0, 0.0, 0.0], [2.0, 1.0, 0.5])).unwrap();
        assert_eq!(c.domain().extent(), [2.0, 2.0, 2.0]);
        assert_eq!(c.domain().center(), Point3::new(1.0, 0.5, 0.25));
        assert_eq!(c.cell_size(), 0.125);
        assert!(GridConfig::new(4, Aabb::new([0.0; 3], [1.0; 3])).is_err());
        assert!(GridConfig::new(16, Aabb::new([0.0; 3], [0.0; 3])).is_err());
        let p = c.cell_center(0, 0, 0);
        assert_eq!(p, Point3::new(0.0625, -0.4375, -0.6875));
        assert_eq!(c.cell_of(&p), Some([0, 0, 0]));
    }

    #[test]
    fn fit_leaves_padding() {
        let b = Aabb::new([0.0; 3], [1.0, 0.5, 0.25]);
        let c = GridConfig::fit(&b, 64, 0.1, 2.0).unwrap();
        let free = b.min[0] - c.domain().min[0];
        assert!((free - (0.1 + 2.0 * c.cell_size())).abs() < 1e-12);
    }

    #[test]
    fn set_get_count_and_bounds() {
        let mut g = OccupancyGrid::empty(cfg(70));
        g.set(69, 3, 5, true);
        g.set(0, 60, 2, true);
        g.set(0, 60, 2, true);
        assert_eq!(g.count(), 2);
        assert!(g.get(69, 3, 5) && !g.get(68, 3, 5));
        assert_eq!(g.occupied_index_bounds(), Some(([0, 3, 2], [69, 60, 5])));
        let cells: Vec<_> = g.iter_occupied().collect();
        assert_eq!(cells, vec![[0, 60, 2], [69, 3, 5]]);
        g.set(69, 3, 5, false);
        assert_eq!(g.count(), 1);
        assert!(!g.get_signed(-1, 0, 0) && !g.get_signed(70, 0, 0));
    }

    #[test]
    fn set_algebra() {
        let a = OccupancyGrid::from_fn(cfg(8), |i, _, _| i < 4);
        let b = OccupancyGrid::from_fn(cfg(8), |_, j, _| j < 2);
        assert_eq!(a.count(), 256);
        assert_eq!(a.intersection(&b).unwrap().count(), 64);
        assert_eq!(a.union(&b).unwrap().count(), 256 + 128 - 64);
        assert_eq!(a.difference(&b).unwrap().count(), 192);
        assert!(a.intersection(&b).unwrap().is_subset_of(&a));
        assert_eq!(a.overlap_count(&b).unwrap(), 64);
    }

    #[test]
    fn fill_bits_spans_words() {
        let mut row = vec![0u64; 3];
        fill_bits(&mut row, 60, 130);
        let set: Vec<usize> = (0..192).filter(|&i| row[i / 64] >> (i % 64) & 1 == 1).collect();
        assert_eq!(set, (60..130).collect::<Vec<_>>());
        let mut row = vec![0u64; 1];
        fill_bits(&mut row, 0, 64);
        assert_eq!(row[0], u64::MAX);
    }
}
