//! Clearance specification: sweep the moving part out along the assembly
//! axis and erode every cell that comes within `c` of the static part.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::axis::Role;
use crate::contact::rotation_between;
use crate::error::{Error, Result};
use crate::mesh::{min_surface_distance, Aabb, RigidTransform, TriangleMesh};
use crate::voxel::{dilate, distance_transform, marching_cubes, voxelize, BitIter, Fill, GridConfig, OccupancyGrid};

/// Mesh-level tolerance, in cells.
pub const TOLERANCE_CELLS: f64 = 2.0;
/// Erosion may remove at most this fraction of the moving part.
pub const MAX_EROSION_FRACTION: f64 = 0.5;
/// Empty cells kept around the pair when the grid is fitted automatically.
pub const PAIR_PAD_CELLS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearanceSpec {
    /// Clearance in meters.
    pub c: f64,
    pub resolution: usize,
    /// Explicit grid in the axis-aligned pair frame; fitted around the pair when absent.
    pub grid: Option<GridConfig>,
    pub erode_target: Role,
    /// Cells per sweep increment.
    pub step: usize,
}

impl ClearanceSpec {
    pub fn new(c: f64, resolution: usize) -> Result<Self> {
        let s = Self {
            c,
            resolution,
            grid: None,
            erode_target: Role::Plug,
            step: 1,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_grid(mut self, grid: GridConfig) -> Self {
        self.resolution = grid.resolution();
        self.grid = Some(grid);
        self
    }

    pub fn with_target(mut self, target: Role) -> Self {
        self.erode_target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("clearance must be >= 0, got {}", self.c)));
        }
        if self.step == 0 {
            return Err(Error::InvalidArgument("sweep step must be at least one cell".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Repaired,
    Generated,
    External,
}

/// Plug and receptacle, each in its own frame. `assembled_transform` places
/// the plug in the receptacle frame; `axis` is the plug's disassembly direction there.
#[derive(Debug, Clone)]
pub struct AssemblyPair {
    pub plug: TriangleMesh,
    pub receptacle: TriangleMesh,
    pub assembled_transform: RigidTransform,
    pub axis: Vector3<f64>,
    pub provenance: Provenance,
    pub uid: String,
}

impl AssemblyPair {
    pub fn new(
        plug: TriangleMesh,
        receptacle: TriangleMesh,
        assembled_transform: RigidTransform,
        axis: Vector3<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if plug.is_empty() || receptacle.is_empty() {
            return Err(Error::EmptyInput("assembly pairs need two nonempty meshes".into()));
        }
        let n = axis.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument("disassembly axis must be nonzero".into()));
        }
        assembled_transform.validate()?;
        let mut pair = Self {
            plug,
            receptacle,
            assembled_transform,
            axis: axis / n,
            provenance,
            uid: String::new(),
        };
        pair.uid = pair.content_hash();
        Ok(pair)
    }

    /// First 12 hex digits of a SHA-256 over the geometry and pose.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for m in [&self.plug, &self.receptacle] {
            for v in m.vertices() {
                for c in v.iter() {
                    h.update(c.to_le_bytes());
                }
            }
            for t in m.triangles() {
                for i in t {
                    h.update(i.to_le_bytes());
                }
            }
        }
        let t = &self.assembled_transform;
        for v in t.rotation.iter().chain(t.translation.iter()).chain(std::iter::once(&t.scale)) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())[..12].to_string()
    }

    pub fn plug_assembled(&self) -> TriangleMesh {
        self.plug.transformed(&self.assembled_transform)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSample {
    /// Plug travel along the axis, meters.
    pub offset: f64,
    /// Smallest plug-to-receptacle cell-center distance at that offset, meters.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    pub cells_removed: u64,
    pub volume_removed: f64,
    pub min_clearance_measured: f64,
    pub separation_travel: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gap_profile: Vec<GapSample>,
}

/// Offset, in cells, after which a part moving up (or down) no longer shares
/// any z-layer with the static part.
pub fn separation_cells(moving: &OccupancyGrid, fixed: &OccupancyGrid, up: bool) -> usize {
    let (Some((mlo, mhi)), Some((slo, shi))) = (moving.occupied_index_bounds(), fixed.occupied_index_bounds()) else {
        return 0;
    };
    let k = if up {
        shi[2] as isize - mlo[2] as isize + 1
    } else {
        mhi[2] as isize - slo[2] as isize + 1
    };
    k.max(0) as usize
}

#[derive(Debug, Clone)]
pub struct SweepErosion {
    pub eroded: OccupancyGrid,
    pub removed: usize,
    /// Largest offset visited, in cells.
    pub travel_cells: usize,
}

/// Grid-level erosion: drops every moving cell that lies within `c` of a fixed
/// cell center at some offset `0, step, 2·step, ...` until separation.
pub fn sweep_erode(moving: &OccupancyGrid, fixed: &OccupancyGrid, c: f64, step: usize, up: bool) -> Result<SweepErosion> {
    if moving.config() != fixed.config() {
        return Err(Error::InvalidArgument("sweep grids have different layouts".into()));
    }
    if step == 0 {
        return Err(Error::InvalidArgument("sweep step must be at least one cell".into()));
    }
    let k = separation_cells(moving, fixed, up);
    let travel = k.div_ceil(step) * step;
    let d = dilate(fixed, c);
    let eroded = erode_columns(moving, &d, travel, step, up);
    Ok(SweepErosion {
        removed: moving.count() - eroded.count(),
        eroded,
        travel_cells: travel,
    })
}

/// For each column, removes moving cells whose stride-`step` successors (or
/// predecessors) within `travel` cells hit `d`.
fn erode_columns(moving: &OccupancyGrid, d: &OccupancyGrid, travel: usize, step: usize, up: bool) -> OccupancyGrid {
    let n = moving.resolution();
    let wpr = moving.words_per_row();
    let Some((lo, hi)) = moving.occupied_index_bounds() else {
        return moving.clone();
    };
    let masks: Vec<(usize, Vec<u64>)> = (lo[1]..=hi[1])
        .into_par_iter()
        .map(|j| {
            const NONE: usize = usize::MAX;
            // nearest d hit per residue class of k modulo step
            let mut near = vec![NONE; step * n];
            let mut mask = vec![0u64; n * wpr];
            let mut visit = |k: usize| {
                let r = k % step;
                let nr = &mut near[r * n..(r + 1) * n];
                for (w, &word) in d.row(j, k).iter().enumerate() {
                    for b in BitIter(word) {
                        nr[w * 64 + b] = k;
                    }
                }
                for (w, &word) in moving.row(j, k).iter().enumerate() {
                    for b in BitIter(word) {
                        let q = nr[w * 64 + b];
                        if q != NONE && q.abs_diff(k) <= travel {
                            mask[k * wpr + w] |= 1 << b;
                        }
                    }
                }
            };
            if up {
                (0..n).rev().for_each(&mut visit);
            } else {
                (0..n).for_each(&mut visit);
            }
            (j, mask)
        })
        .collect();
    let mut out = moving.clone();
    {
        let words = out.words_mut();
        for (j, mask) in masks {
            for k in 0..n {
                let base = (k * n + j) * wpr;
                for w in 0..wpr {
                    words[base + w] &= !mask[k * wpr + w];
                }
            }
        }
    }
    out.recount();
    out
}

/// The pair in a frame where the plug leaves along +z, plug placed in its assembled pose.
struct AlignedPair {
    plug: TriangleMesh,
    receptacle: TriangleMesh,
    /// Receptacle frame to aligned frame.
    rotation: RigidTransform,
}

fn align_pair(pair: &AssemblyPair) -> AlignedPair {
    let rotation = RigidTransform::rotation(rotation_between(&pair.axis, &Vector3::z()));
    AlignedPair {
        plug: pair.plug_assembled().transformed(&rotation),
        receptacle: pair.receptacle.transformed(&rotation),
        rotation,
    }
}

/// Grid fitted around the axis-aligned pair with `margin` meters to spare.
pub fn pair_grid(pair: &AssemblyPair, resolution: usize, margin: f64) -> Result<GridConfig> {
    let a = align_pair(pair);
    fit_grid(&a, resolution, margin)
}

fn fit_grid(a: &AlignedPair, resolution: usize, margin: f64) -> Result<GridConfig> {
    let b: Aabb = a.plug.bounds().union(&a.receptacle.bounds());
    GridConfig::fit(&b, resolution, margin, PAIR_PAD_CELLS)
}

fn spec_grid(a: &AlignedPair, spec: &ClearanceSpec) -> Result<GridConfig> {
    match spec.grid {
        Some(g) => Ok(g),
        None => fit_grid(a, spec.resolution, spec.c),
    }
}

/// Erodes the chosen part of `pair` so that no cell of it comes within `c` of
/// the other part while the plug is withdrawn along the axis.
pub fn specify_clearance(pair: &AssemblyPair, spec: &ClearanceSpec) -> Result<(AssemblyPair, RepairReport)> {
    spec.validate()?;
    let a = align_pair(pair);
    let config = spec_grid(&a, spec)?;
    let h = config.cell_size();
    let plug_moves = spec.erode_target == Role::Plug;
    let (m_mesh, s_mesh) = if plug_moves { (&a.plug, &a.receptacle) } else { (&a.receptacle, &a.plug) };
    // moving cells by center so a reconstructed part re-voxelizes to the same cells
    let m = voxelize(m_mesh, &config, Fill::Interior)?.grid;
    let s = voxelize(s_mesh, &config, Fill::Solid)?.grid;
    if m.is_empty() {
        return Err(Error::Degenerate("moving part covers no cell centers at this resolution".into()));
    }
    let sweep = sweep_erode(&m, &s, spec.c, spec.step, plug_moves)?;
    let fraction = sweep.removed as f64 / m.count() as f64;
    if fraction > MAX_EROSION_FRACTION {
        return Err(Error::DegenerateRepair { fraction });
    }

    let mut out = pair.clone();
    let m_final = if sweep.removed > 0 {
        let back = a.rotation.inverse();
        let mesh = marching_cubes(&sweep.eroded)?;
        if plug_moves {
            out.plug = mesh
                .transformed(&back)
                .transformed(&pair.assembled_transform.inverse());
        } else {
            out.receptacle = mesh.transformed(&back);
        }
        mesh
    } else {
        m_mesh.clone()
    };
    out.provenance = Provenance::Repaired;
    let min_clearance = min_surface_distance(&m_final, s_mesh, &RigidTransform::identity());
    let report = RepairReport {
        cells_removed: sweep.removed as u64,
        volume_removed: sweep.removed as f64 * h.powi(3),
        min_clearance_measured: min_clearance,
        separation_travel: sweep.travel_cells as f64 * h,
        passed: min_clearance >= spec.c - TOLERANCE_CELLS * h,
        gap_profile: Vec::new(),
    };
    Ok((out, report))
}

/// Withdraws the plug cell by cell and records the smallest plug-to-receptacle
/// cell-center distance at every offset. `config` is in the axis-aligned frame.
pub fn sweep_collision_check(pair: &AssemblyPair, c_check: f64, config: &GridConfig) -> Result<(bool, Vec<GapSample>)> {
    let a = align_pair(pair);
    let p = voxelize(&a.plug, config, Fill::Interior)?.grid;
    let s = voxelize(&a.receptacle, config, Fill::Solid)?.grid;
    let profile = gap_profile(&p, &s)?;
    let passed = profile.iter().all(|g| g.gap >= c_check);
    Ok((passed, profile))
}

fn gap_profile(p: &OccupancyGrid, s: &OccupancyGrid) -> Result<Vec<GapSample>> {
    let n = p.resolution();
    let h = p.cell_size();
    let k = separation_cells(p, s, true);
    let Some((lo, hi)) = p.occupied_index_bounds() else {
        return Ok((0..=k).map(|o| GapSample { offset: o as f64 * h, gap: f64::INFINITY }).collect());
    };
    let dist = distance_transform(s)?;
    // only boundary cells can be nearest, unless the receptacle sits inside the plug
    let boundary: Vec<[usize; 3]> = p
        .iter_occupied()
        .filter(|&[i, j, k]| {
            let (i, j, k) = (i as isize, j as isize, k as isize);
            [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                .iter()
                .any(|d| !p.get_signed(i + d.0, j + d.1, k + d.2))
        })
        .collect();
    let sq = dist.sq_values();
    let samples = (0..=k)
        .into_par_iter()
        .map(|o| {
            let mut best = u32::MAX;
            for &[i, j, kk] in &boundary {
                if kk + o < n {
                    best = best.min(sq[((kk + o) * n + j) * n + i]);
                }
            }
            if best > 0 && overlaps_shifted(p, s, lo, hi, o) {
                best = 0;
            }
            let gap = if best == u32::MAX { f64::INFINITY } else { (best as f64).sqrt() * h };
            GapSample { offset: o as f64 * h, gap }
        })
        .collect();
    Ok(samples)
}

fn overlaps_shifted(p: &OccupancyGrid, s: &OccupancyGrid, lo: [usize; 3], hi: [usize; 3], o: usize) -> bool {
    let n = p.resolution();
    (lo[2]..=hi[2]).filter(|k| k + o < n).any(|k| {
        (lo[1]..=hi[1]).any(|j| p.row(j, k).iter().zip(s.row(j, k + o)).any(|(a, b)| a & b != 0))
    })
}

/// Checks the assembled clearance and the withdrawal sweep against `c − 2·cell`.
pub fn verify_pair(pair: &AssemblyPair, spec: &ClearanceSpec) -> Result<RepairReport> {
    spec.validate()?;
    let a = align_pair(pair);
    let config = spec_grid(&a, spec)?;
    let h = config.cell_size();
    let c_check = spec.c - TOLERANCE_CELLS * h;
    let min_clearance = min_surface_distance(&a.plug, &a.receptacle, &RigidTransform::identity());
    let p = voxelize(&a.plug, &config, Fill::Interior)?.grid;
    let s = voxelize(&a.receptacle, &config, Fill::Solid)?.grid;
    let profile = gap_profile(&p, &s)?;
    let sweep_ok = profile.iter().all(|g| g.gap >= c_check);
    Ok(RepairReport {
        cells_removed: 0,
        volume_removed: 0.0,
        min_clearance_measured: min_clearance,
        separation_travel: profile.len().saturating_sub(1) as f64 * h,
        passed: sweep_ok && min_clearance >= c_check,
        gap_profile: profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{self, Profile};
    use proptest::prelude::*;

    const MM: f64 = 1e-3;

    fn random_grid(cfg: GridConfig, seed: u64, density: u64, zlo: usize, zhi: usize) -> OccupancyGrid {
        OccupancyGrid::from_fn(cfg, |i, j, k| {
            let h = (seed ^ ((i * 73856093) ^ (j * 19349663) ^ (k * 83492791)) as u64)
                .wrapping_mul(0x9E3779B97F4A7C15);
            (zlo..zhi).contains(&k) && (h >> 32) % 100 < density
        })
    }

    /// Per-cell brute force: the minimum over every visited offset of the
    /// distance to every fixed cell center.
    fn oracle_removed(m: &OccupancyGrid, s: &OccupancyGrid, c: f64, step: usize, up: bool) -> OccupancyGrid {
        let k = separation_cells(m, s, up);
        let travel = k.div_ceil(step) * step;
        let h = m.cell_size();
        let fixed: Vec<[usize; 3]> = s.iter_occupied().collect();
        OccupancyGrid::from_fn(*m.config(), |i, j, kk| {
            if !m.get(i, j, kk) {
                return false;
            }
            (0..=travel).step_by(step).any(|o| {
                let z = if up { kk as f64 + o as f64 } else { kk as f64 - o as f64 };
                fixed.iter().any(|f| {
                    let d = [i as f64 - f[0] as f64, j as f64 - f[1] as f64, z - f[2] as f64];
                    ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) * h * h).sqrt() <= c + 1e-9 * h
                })
            })
        })
    }

    fn cfg(n: usize) -> GridConfig {
        GridConfig::new(n, Aabb::new([0.0; 3], [n as f64; 3])).unwrap()
    }

    #[test]
    fn erosion_matches_oracle_small() {
        let g = cfg(16);
        let m = random_grid(g, 7, 30, 0, 10);
        let s = random_grid(g, 11, 10, 4, 14);
        for (c, step, up) in [(1.0, 1, true), (1.5, 2, true), (2.2, 1, false), (0.0, 3, false)] {
            let e = sweep_erode(&m, &s, c, step, up).unwrap();
            let removed = m.difference(&e.eroded).unwrap();
            assert_eq!(removed, oracle_removed(&m, &s, c, step, up), "c={c} step={step} up={up}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn erosion_oracle_and_monotone_in_c(seed in any::<u64>(), c1 in 0.0f64..3.0, dc in 0.0f64..2.0, up in any::<bool>()) {
            let g = cfg(12);
            let m = random_grid(g, seed, 25, 0, 8);
            let s = random_grid(g, seed.rotate_left(17), 6, 3, 12);
            prop_assume!(!m.is_empty() && !s.is_empty());
            let a = sweep_erode(&m, &s, c1, 1, up).unwrap();
            let b = sweep_erode(&m, &s, c1 + dc, 1, up).unwrap();
            prop_assert!(a.eroded.is_subset_of(&m));
            prop_assert_eq!(a.removed, m.count() - a.eroded.count());
            prop_assert!(b.eroded.is_subset_of(&a.eroded));
            prop_assert_eq!(m.difference(&a.eroded).unwrap(), oracle_removed(&m, &s, c1, 1, up));
            // a second pass finds nothing left to remove
            let again = sweep_erode(&a.eroded, &s, c1, 1, up).unwrap();
            prop_assert_eq!(again.removed, 0);
        }
    }

    /// Receptacle block with a 15 mm blind bore, and a plug held 2 mm above its floor.
    fn bore_pair(plug_r: f64, bore_r: f64) -> AssemblyPair {
        let rec = primitives::hole_block(15.0 * MM, 20.0 * MM, &[(Profile::Circle { radius: bore_r }, 15.0 * MM)], 96);
        let plug = primitives::cylinder(plug_r, 25.0 * MM, 96);
        let place = RigidTransform::translation(Vector3::new(0.0, 0.0, 7.0 * MM));
        AssemblyPair::new(plug, rec, place, Vector3::z(), Provenance::External).unwrap()
    }

    #[test]
    fn already_clear_pair_passes_through() {
        let pair = bore_pair(7.0 * MM, 9.0 * MM);
        let spec = ClearanceSpec::new(0.5 * MM, 64).unwrap();
        let (out, rep) = specify_clearance(&pair, &spec).unwrap();
        assert_eq!(rep.cells_removed, 0);
        assert_eq!(out.plug, pair.plug);
        assert_eq!(out.receptacle, pair.receptacle);
        assert!(rep.passed);
        assert!((rep.min_clearance_measured - 2.0 * MM).abs() < 0.05 * MM);
    }

    #[test]
    fn interpenetrating_pair_is_repaired() {
        let pair = bore_pair(9.4 * MM, 9.0 * MM);
        let c = 0.2 * MM;
        let config = pair_grid(&pair, 64, c).unwrap();
        let spec = ClearanceSpec::new(c, 64).unwrap().with_grid(config);
        let h = config.cell_size();
        let (raw_ok, raw_profile) = sweep_collision_check(&pair, 0.0, &config).unwrap();
        assert!(raw_profile[0].gap == 0.0);
        assert!(raw_ok, "gap 0 still meets a zero threshold");
        assert!(!sweep_collision_check(&pair, 1e-9, &config).unwrap().0);

        let (out, rep) = specify_clearance(&pair, &spec).unwrap();
        assert!(rep.cells_removed > 0);
        assert!((rep.volume_removed - rep.cells_removed as f64 * h.powi(3)).abs() < 1e-18);
        assert!(rep.passed, "{rep:?}");
        assert!(rep.min_clearance_measured >= c - 2.0 * h);
        assert!(out.plug.is_watertight() && out.plug.is_edge_manifold());
        let (ok, profile) = sweep_collision_check(&out, c - 2.0 * h, &config).unwrap();
        assert!(ok);
        // erosion can only shorten the way out
        assert!(profile.len() as f64 <= (rep.separation_travel / h).round() + 1.0);
        assert!(verify_pair(&out, &spec).unwrap().passed);

        // idempotent on the same grid
        let (again, rep2) = specify_clearance(&out, &spec).unwrap();
        assert_eq!(rep2.cells_removed, 0);
        assert_eq!(again.plug, out.plug);
    }

    #[test]
    fn eroding_the_receptacle_widens_the_bore() {
        let pair = bore_pair(9.4 * MM, 9.0 * MM);
        let c = 0.3 * MM;
        let config = pair_grid(&pair, 48, c).unwrap();
        let spec = ClearanceSpec::new(c, 48).unwrap().with_grid(config).with_target(Role::Receptacle);
        let (out, rep) = specify_clearance(&pair, &spec).unwrap();
        assert!(rep.cells_removed > 0 && rep.passed, "{rep:?}");
        assert_eq!(out.plug, pair.plug);
        assert!(out.receptacle.is_watertight());
        assert!(verify_pair(&out, &spec).unwrap().passed);
    }

    #[test]
    fn self_pair_and_sideways_exit_fail() {
        let block = primitives::box_mesh([-0.01; 3], [0.01; 3]);
        let same = AssemblyPair::new(block.clone(), block, RigidTransform::identity(), Vector3::z(), Provenance::External).unwrap();
        let spec = ClearanceSpec::new(2.0 * MM, 32).unwrap();
        let rep = verify_pair(&same, &spec).unwrap();
        assert_eq!(rep.gap_profile[0].gap, 0.0);
        assert!(!rep.passed);
        assert_eq!(rep.min_clearance_measured, 0.0);

        // clean when assembled, but pulled out sideways it runs into the bore wall
        let seated = bore_pair(7.0 * MM, 9.0 * MM);
        let sideways = AssemblyPair::new(seated.plug, seated.receptacle, seated.assembled_transform, Vector3::x(), Provenance::External).unwrap();
        let spec = ClearanceSpec::new(1.0 * MM, 128).unwrap();
        let rep = verify_pair(&sideways, &spec).unwrap();
        assert!((rep.min_clearance_measured - 2.0 * MM).abs() < 0.05 * MM);
        assert!(rep.gap_profile[0].gap >= 1.5 * MM);
        assert!(!rep.passed);
        let hit = rep.gap_profile.iter().find(|g| g.gap == 0.0).unwrap();
        // the 2 mm radial gap closes after about 2 mm of travel
        assert!((hit.offset - 2.0 * MM).abs() < 0.6 * MM, "{hit:?}");
        assert!(verify_pair(&bore_pair(7.0 * MM, 9.0 * MM), &spec).unwrap().passed);
    }

    #[test]
    fn degenerate_repair_is_rejected() {
        // plug swallowed by a solid block
        let rec = primitives::box_mesh([-0.02; 3], [0.02; 3]);
        let plug = primitives::box_mesh([-0.005; 3], [0.005; 3]);
        let pair = AssemblyPair::new(plug, rec, RigidTransform::identity(), Vector3::z(), Provenance::External).unwrap();
        let spec = ClearanceSpec::new(0.5 * MM, 32).unwrap();
        assert!(matches!(specify_clearance(&pair, &spec), Err(Error::DegenerateRepair { .. })));
        assert!(ClearanceSpec::new(-1.0, 32).is_err());
    }

    #[test]
    fn lateral_axis_is_rotated_to_z() {
        let up = bore_pair(9.4 * MM, 9.0 * MM);
        let turn = RigidTransform::rotation(rotation_between(&Vector3::z(), &Vector3::x()));
        let side = AssemblyPair::new(
            up.plug.clone(),
            up.receptacle.transformed(&turn),
            up.assembled_transform.then(&turn),
            Vector3::x(),
            Provenance::External,
        )
        .unwrap();
        let spec = ClearanceSpec::new(0.2 * MM, 48).unwrap();
        let (_, a) = specify_clearance(&up, &spec).unwrap();
        let (out, b) = specify_clearance(&side, &spec).unwrap();
        assert!(b.passed);
        assert!((a.cells_removed as f64 - b.cells_removed as f64).abs() <= 0.02 * a.cells_removed as f64);
        let d = min_surface_distance(&out.plug.transformed(&out.assembled_transform), &out.receptacle, &RigidTransform::identity());
        assert!((d - b.min_clearance_measured).abs() < 1e-9);
    }
}
