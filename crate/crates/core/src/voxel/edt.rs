//! Exact Euclidean distance transform (separable lower-envelope method).

use rayon::prelude::*;

use super::{GridConfig, OccupancyGrid};
use crate::error::{Error, Result};

const INF: u32 = u32::MAX;

/// Distance from every cell center to the nearest occupied cell center of a
/// source grid. Stored as squared distances in cell units, which are exact.
#[derive(Debug, Clone)]
pub struct DistanceGrid {
    config: GridConfig,
    sq: Vec<u32>,
}

impl DistanceGrid {
    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.config.resolution();
        (k * n + j) * n + i
    }

    /// Squared distance in cell units.
    pub fn sq_cells(&self, i: usize, j: usize, k: usize) -> u32 {
        self.sq[self.index(i, j, k)]
    }

    /// Distance in meters.
    pub fn distance(&self, i: usize, j: usize, k: usize) -> f64 {
        (self.sq_cells(i, j, k) as f64).sqrt() * self.config.cell_size()
    }

    /// Squared cell-unit distances, x fastest.
    pub fn sq_values(&self) -> &[u32] {
        &self.sq
    }
}

pub fn distance_transform(source: &OccupancyGrid) -> Result<DistanceGrid> {
    if source.is_empty() {
        return Err(Error::EmptyInput("distance transform of an empty grid".into()));
    }
    let n = source.resolution();
    Ok(DistanceGrid {
        config: *source.config(),
        sq: edt_box(source, [0; 3], [n; 3]),
    })
}

/// Cells within `radius` (meters, center-to-center) of an occupied cell.
pub fn dilate(source: &OccupancyGrid, radius: f64) -> OccupancyGrid {
    let radius = radius.max(0.0);
    let Some((lo, hi)) = source.occupied_index_bounds() else {
        return source.clone();
    };
    let rc = radius / source.cell_size();
    let limit = (rc * rc + 1e-9).floor() as u32;
    if limit == 0 {
        return source.clone();
    }
    let n = source.resolution();
    let reach = rc.ceil() as usize;
    let b0 = lo.map(|v| v.saturating_sub(reach));
    let b1 = hi.map(|v| (v + reach + 1).min(n));
    let sq = edt_box(source, b0, b1);
    let (nx, ny) = (b1[0] - b0[0], b1[1] - b0[1]);
    let mut out = OccupancyGrid::empty(*source.config());
    let wpr = out.words_per_row();
    out.words_mut()
        .par_chunks_mut(wpr * n)
        .enumerate()
        .filter(|(k, _)| *k >= b0[2] && *k < b1[2])
        .for_each(|(k, slice)| {
            for j in b0[1]..b1[1] {
                let src = &sq[((k - b0[2]) * ny + (j - b0[1])) * nx..][..nx];
                let row = &mut slice[j * wpr..(j + 1) * wpr];
                for (di, &d) in src.iter().enumerate() {
                    if d <= limit {
                        let i = b0[0] + di;
                        row[i / 64] |= 1 << (i % 64);
                    }
                }
            }
        });
    out.recount();
    out
}

struct SyncPtr(*mut u32);
unsafe impl Sync for SyncPtr {}
unsafe impl Send for SyncPtr {}

/// Squared EDT restricted to the index box `[lo, hi)`. Every occupied cell
/// of `source` must lie in the box.
fn edt_box(source: &OccupancyGrid, lo: [usize; 3], hi: [usize; 3]) -> Vec<u32> {
    let (nx, ny, nz) = (hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]);
    let mut f = vec![INF; nx * ny * nz];

    // x pass straight from the bit rows
    f.par_chunks_mut(nx).enumerate().for_each_init(
        || Scratch::new(nx),
        |s, (r, row)| {
            let (j, k) = (lo[1] + r % ny, lo[2] + r / ny);
            let bits = source.row(j, k);
            if bits.iter().all(|&w| w == 0) {
                return;
            }
            for (di, v) in s.input.iter_mut().enumerate() {
                let i = lo[0] + di;
                *v = if (bits[i / 64] >> (i % 64)) & 1 == 1 { 0 } else { INF };
            }
            s.run(row);
        },
    );

    // y pass, one z-slice at a time
    f.par_chunks_mut(nx * ny).for_each_init(
        || Scratch::new(ny),
        |s, slice| {
            for i in 0..nx {
                for j in 0..ny {
                    s.input[j] = slice[j * nx + i];
                }
                let mut col = std::mem::take(&mut s.output);
                s.run_into(&mut col);
                for j in 0..ny {
                    slice[j * nx + i] = col[j];
                }
                s.output = col;
            }
        },
    );

    // z pass over strided columns; each (i, j) column is touched by exactly one task
    let ptr = SyncPtr(f.as_mut_ptr());
    let stride = nx * ny;
    (0..ny).into_par_iter().for_each_init(
        || Scratch::new(nz),
        |s, j| {
            let p = &ptr;
            for i in 0..nx {
                let base = j * nx + i;
                for k in 0..nz {
                    // SAFETY: indices base + k * stride are unique to this (i, j)
                    s.input[k] = unsafe { *p.0.add(base + k * stride) };
                }
                let mut col = std::mem::take(&mut s.output);
                s.run_into(&mut col);
                for (k, &v) in col.iter().enumerate() {
                    unsafe { *p.0.add(base + k * stride) = v };
                }
                s.output = col;
            }
        },
    );
    f
}

struct Scratch {
    input: Vec<u32>,
    output: Vec<u32>,
    v: Vec<usize>,
    /// Left boundary of each envelope parabola as a fraction `num / den`.
    z: Vec<(i64, i64)>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            input: vec![INF; n],
            output: vec![INF; n],
            v: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
        }
    }

    fn run(&mut self, out: &mut [u32]) {
        let mut o = std::mem::take(&mut self.output);
        self.run_into(&mut o);
        out.copy_from_slice(&o);
        self.output = o;
    }

    /// 1D squared distance of `input` into `out`, exact in integers.
    fn run_into(&mut self, out: &mut Vec<u32>) {
        let f = &self.input;
        let n = f.len();
        out.resize(n, INF);
        self.v.clear();
        self.z.clear();
        for q in 0..n {
            if f[q] == INF {
                continue;
            }
            let fq = f[q] as i64 + (q * q) as i64;
            let mut s = (i64::MIN, 1);
            while let Some(&p) = self.v.last() {
                let fp = f[p] as i64 + (p * p) as i64;
                s = (fq - fp, 2 * (q - p) as i64);
                let zk = *self.z.last().unwrap();
                // keep p while its region starts strictly before s
                if zk.0 == i64::MIN || s.0 * zk.1 > zk.0 * s.1 {
                    break;
                }
                self.v.pop();
                self.z.pop();
                s = (i64::MIN, 1);
            }
            self.z.push(if self.v.is_empty() { (i64::MIN, 1) } else { s });
            self.v.push(q);
        }
        if self.v.is_empty() {
            out.fill(INF);
            return;
        }
        let mut k = 0;
        for (x, o) in out.iter_mut().enumerate() {
            while k + 1 < self.v.len() {
                let (num, den) = self.z[k + 1];
                if num <= x as i64 * den {
                    k += 1;
                } else {
                    break;
                }
            }
            let p = self.v[k];
            let d = x.abs_diff(p) as u64;
            *o = (d * d + f[p] as u64) as u32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Aabb;
    use proptest::prelude::*;

    fn cfg(n: usize) -> GridConfig {
        GridConfig::new(n, Aabb::new([0.0; 3], [n as f64 * 0.5; 3])).unwrap()
    }

    fn brute(g: &OccupancyGrid) -> Vec<u32> {
        let n = g.resolution();
        let sites: Vec<[usize; 3]> = g.iter_occupied().collect();
        let mut out = vec![INF; n * n * n];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    out[(k * n + j) * n + i] = sites
                        .iter()
                        .map(|s| {
                            let d = [i.abs_diff(s[0]), j.abs_diff(s[1]), k.abs_diff(s[2])];
                            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as u32
                        })
                        .min()
                        .unwrap();
                }
            }
        }
        out
    }

    #[test]
    fn single_cell_and_plane() {
        let mut g = OccupancyGrid::empty(cfg(16));
        g.set(5, 6, 7, true);
        let d = distance_transform(&g).unwrap();
        assert_eq!(d.distance(5, 6, 7), 0.0);
        assert_eq!(d.distance(6, 6, 7), 0.5);
        assert_eq!(d.sq_cells(8, 2, 7), 25);

        let plane = OccupancyGrid::from_fn(cfg(16), |_, _, k| k == 0);
        let d = distance_transform(&plane).unwrap();
        for k in 0..16 {
            assert_eq!(d.distance(3, 9, k), k as f64 * 0.5);
        }
        assert!(distance_transform(&OccupancyGrid::empty(cfg(8))).is_err());
    }

    #[test]
    fn sparse_32_matches_brute_force() {
        let g = OccupancyGrid::from_fn(cfg(32), |i, j, k| (i * 7919 + j * 104729 + k * 1299709) % 211 == 0);
        assert!(g.count() > 50);
        assert_eq!(distance_transform(&g).unwrap().sq_values(), brute(&g).as_slice());
    }

    #[test]
    fn ball_dilation_matches_brute_force() {
        let mut g = OccupancyGrid::empty(cfg(16));
        g.set(8, 8, 8, true);
        let r = 2.5 * g.cell_size();
        let d = dilate(&g, r);
        let expect = OccupancyGrid::from_fn(cfg(16), |i, j, k| {
            let e = [i as f64 - 8.0, j as f64 - 8.0, k as f64 - 8.0];
            e[0] * e[0] + e[1] * e[1] + e[2] * e[2] <= 6.25
        });
        assert_eq!(d, expect);
        assert_eq!(dilate(&g, 0.0), g);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn edt_matches_brute_force(
            n in 8usize..14,
            seed in any::<u64>(),
            density in 1u64..60,
        ) {
            let g = OccupancyGrid::from_fn(cfg(n), |i, j, k| {
                let h = (seed ^ ((i * 73856093) ^ (j * 19349663) ^ (k * 83492791)) as u64)
                    .wrapping_mul(0x9E3779B97F4A7C15);
                (h >> 32) % 100 < density
            });
            prop_assume!(!g.is_empty());
            let d = distance_transform(&g).unwrap();
            let b = brute(&g);
            prop_assert_eq!(d.sq_values(), b.as_slice());
        }

        #[test]
        fn dilation_is_monotone_and_thresholds_edt(
            seed in any::<u64>(),
            r1 in 0.0f64..4.0,
            dr in 0.0f64..3.0,
        ) {
            let g = OccupancyGrid::from_fn(cfg(12), |i, j, k| {
                let h = (seed ^ ((i * 73856093) ^ (j * 19349663) ^ (k * 83492791)) as u64)
                    .wrapping_mul(0x9E3779B97F4A7C15);
                (h >> 32) % 100 < 3
            });
            prop_assume!(!g.is_empty());
            let h = g.cell_size();
            let a = dilate(&g, r1 * h);
            let b = dilate(&g, (r1 + dr) * h);
            prop_assert!(g.is_subset_of(&a));
            prop_assert!(a.is_subset_of(&b));
            let d = distance_transform(&g).unwrap();
            let expect = OccupancyGrid::from_fn(cfg(12), |i, j, k| {
                (d.sq_cells(i, j, k) as f64) <= r1 * r1 + 1e-9
            });
            prop_assert_eq!(a, expect);
        }
    }
}
