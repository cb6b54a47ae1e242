//! Marching cubes on the 0.5 iso-level of a binary grid.
//!
//! The case table is derived at first use instead of being transcribed:
//! every cube face contributes iso-segments (ambiguous faces always separate
//! the two occupied corners, so neighbouring cubes agree), the segments are
//! chained into loops, and each loop is oriented so its normal points from
//! occupied towards empty corners.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::OccupancyGrid;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Edge `e` joins corner `EDGES[e].0` to `EDGES[e].0 | 1 << EDGES[e].1`.
/// Corner bits are `x | y << 1 | z << 2`.
fn edges() -> [(u8, u8); 12] {
    let mut out = [(0, 0); 12];
    let mut n = 0;
    for axis in 0..3u8 {
        for a in 0..8u8 {
            if a & (1 << axis) == 0 {
                out[n] = (a, axis);
                n += 1;
            }
        }
    }
    out
}

struct Loop {
    edges: Vec<u8>,
    /// Triangulate around an added center vertex; needed when the loop runs
    /// through both segments of an ambiguous face, where a plain fan could
    /// put a diagonal on the shared face.
    centered: bool,
}

fn case_table() -> &'static Vec<Vec<Loop>> {
    static TABLE: OnceLock<Vec<Vec<Loop>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(|m| build_case(m as u8)).collect())
}

fn corner_pos(c: u8) -> Vector3<f64> {
    Vector3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

fn build_case(m: u8) -> Vec<Loop> {
    let edges = edges();
    let edge_of = |a: u8, b: u8| -> u8 {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let axis = (hi ^ lo).trailing_zeros() as u8;
        edges.iter().position(|&(c, ax)| c == lo && ax == axis).unwrap() as u8
    };
    let occ = |c: u8| (m >> c) & 1 == 1;

    let mut nbrs: Vec<Vec<u8>> = vec![Vec::new(); 12];
    let mut ambiguous: Vec<[u8; 4]> = Vec::new();
    for axis in 0..3u8 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2u8 {
            let c: Vec<u8> = [(0, 0), (1, 0), (1, 1), (0, 1)]
                .iter()
                .map(|&(du, dv)| (side << axis) | (du << u) | (dv << v))
                .collect();
            let fe: Vec<u8> = (0..4).map(|i| edge_of(c[i], c[(i + 1) % 4])).collect();
            let cut: Vec<usize> = (0..4).filter(|&i| occ(c[i]) != occ(c[(i + 1) % 4])).collect();
            let mut link = |a: u8, b: u8| {
                nbrs[a as usize].push(b);
                nbrs[b as usize].push(a);
            };
            match cut.len() {
                0 => {}
                2 => link(fe[cut[0]], fe[cut[1]]),
                4 => {
                    for i in 0..4 {
                        if occ(c[i]) {
                            link(fe[(i + 3) % 4], fe[i]);
                        }
                    }
                    ambiguous.push([fe[0], fe[1], fe[2], fe[3]]);
                }
                _ => unreachable!(),
            }
        }
    }

    let mid = |e: u8| {
        let (a, ax) = edges[e as usize];
        let mut p = corner_pos(a);
        p[ax as usize] += 0.5;
        p
    };
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12u8 {
        if seen[start as usize] || nbrs[start as usize].is_empty() {
            continue;
        }
        let mut lp = vec![start];
        seen[start as usize] = true;
        let mut prev = start;
        let mut cur = nbrs[start as usize][0];
        while cur != start {
            lp.push(cur);
            seen[cur as usize] = true;
            let nb = &nbrs[cur as usize];
            let next = if nb[0] == prev { nb[1] } else { nb[0] };
            prev = cur;
            cur = next;
        }
        let mut normal = Vector3::zeros();
        let mut outward = Vector3::zeros();
        for (i, &e) in lp.iter().enumerate() {
            let (p, q) = (mid(e), mid(lp[(i + 1) % lp.len()]));
            normal += p.cross(&q);
            let (a, ax) = edges[e as usize];
            let mut d = Vector3::zeros();
            d[ax as usize] = if occ(a) { 1.0 } else { -1.0 };
            outward += d;
        }
        if normal.dot(&outward) < 0.0 {
            lp.reverse();
        }
        let centered = ambiguous.iter().any(|f| f.iter().all(|e| lp.contains(e)));
        loops.push(Loop { edges: lp, centered });
    }
    loops
}

/// Watertight, outward-oriented surface of the occupied cells.
///
/// Vertices sit halfway between neighbouring cell centers, so the surface
/// stays within half a cell of the occupancy boundary. The grid is treated
/// as surrounded by one layer of empty cells.
pub fn marching_cubes(grid: &OccupancyGrid) -> Result<TriangleMesh> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("marching cubes on an empty grid".into()));
    }
    let table = case_table();
    let edges = edges();
    let n = grid.resolution();
    let wpr = grid.words_per_row();
    let zero = vec![0u64; wpr];
    let row = |j: isize, k: isize| -> &[u64] {
        if j < 0 || k < 0 || j >= n as isize || k >= n as isize {
            &zero
        } else {
            grid.row(j as usize, k as usize)
        }
    };
    let bit = |r: &[u64], i: isize| -> u8 {
        if i < 0 || i >= n as isize {
            0
        } else {
            ((r[i as usize / 64] >> (i as usize % 64)) & 1) as u8
        }
    };
    let np = (n + 2) as u64;
    // lattice point (cell index + 1) and axis packed into one key
    let key = |p: [isize; 3], axis: u8| -> u64 {
        (((p[2] + 1) as u64 * np + (p[1] + 1) as u64) * np + (p[0] + 1) as u64) * 3 + axis as u64
    };
    const EXTRA: u64 = 1 << 63;

    struct Slab {
        tris: Vec<[u64; 3]>,
        extras: Vec<Vector3<f64>>,
    }
    let slabs: Vec<Slab> = (-1..n as isize)
        .into_par_iter()
        .map(|k| {
            let mut slab = Slab {
                tris: Vec::new(),
                extras: Vec::new(),
            };
            let mut cubes = Vec::new();
            for j in -1..n as isize {
                let rows = [row(j, k), row(j + 1, k), row(j, k + 1), row(j + 1, k + 1)];
                cubes.clear();
                if rows.iter().all(|r| r.iter().all(|&w| w == 0)) {
                    continue;
                }
                if rows.iter().any(|r| bit(r, 0) == 1) {
                    cubes.push(-1isize);
                }
                for w in 0..wpr {
                    let any = rows[0][w] | rows[1][w] | rows[2][w] | rows[3][w];
                    let all = rows[0][w] & rows[1][w] & rows[2][w] & rows[3][w];
                    let (any_next, all_next) = if w + 1 < wpr {
                        (
                            rows[0][w + 1] | rows[1][w + 1] | rows[2][w + 1] | rows[3][w + 1],
                            rows[0][w + 1] & rows[1][w + 1] & rows[2][w + 1] & rows[3][w + 1],
                        )
                    } else {
                        (0, 0)
                    };
                    let any2 = (any >> 1) | (any_next << 63);
                    let all2 = (all >> 1) | (all_next << 63);
                    let mut mixed = (any | any2) & !(all & all2);
                    while mixed != 0 {
                        let b = mixed.trailing_zeros() as usize;
                        mixed &= mixed - 1;
                        let i = w * 64 + b;
                        if i < n {
                            cubes.push(i as isize);
                        }
                    }
                }
                for &i in &cubes {
                    let mut case = 0u8;
                    for c in 0..8u8 {
                        let r = rows[((c >> 1) & 1) as usize + 2 * ((c >> 2) & 1) as usize];
                        case |= bit(r, i + (c & 1) as isize) << c;
                    }
                    for lp in &table[case as usize] {
                        let ids: Vec<u64> = lp
                            .edges
                            .iter()
                            .map(|&e| {
                                let (a, ax) = edges[e as usize];
                                let p = [
                                    i + (a & 1) as isize,
                                    j + ((a >> 1) & 1) as isize,
                                    k + ((a >> 2) & 1) as isize,
                                ];
                                key(p, ax)
                            })
                            .collect();
                        if lp.centered {
                            let mut c = Vector3::zeros();
                            for &e in &lp.edges {
                                let (a, ax) = edges[e as usize];
                                let mut p = corner_pos(a);
                                p[ax as usize] += 0.5;
                                c += p;
                            }
                            c /= lp.edges.len() as f64;
                            let center = EXTRA | slab.extras.len() as u64;
                            slab.extras.push(c + Vector3::new(i as f64, j as f64, k as f64));
                            for t in 0..ids.len() {
                                slab.tris.push([center, ids[t], ids[(t + 1) % ids.len()]]);
                            }
                        } else {
                            for t in 1..ids.len() - 1 {
                                slab.tris.push([ids[0], ids[t], ids[t + 1]]);
                            }
                        }
                    }
                }
            }
            slab
        })
        .collect();

    let h = grid.cell_size();
    let origin = grid.config().domain().min;
    // lattice coordinates are cell indices; cell centers sit at +0.5
    let world = |p: Vector3<f64>| {
        Point3::new(
            origin[0] + (p.x + 0.5) * h,
            origin[1] + (p.y + 0.5) * h,
            origin[2] + (p.z + 0.5) * h,
        )
    };
    let mut index: HashMap<u64, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for slab in slabs {
        let base = vertices.len();
        let extra_ids: Vec<u32> = slab
            .extras
            .iter()
            .enumerate()
            .map(|(e, p)| {
                vertices.push(world(*p));
                (base + e) as u32
            })
            .collect();
        for t in slab.tris {
            triangles.push(t.map(|key| {
                if key & EXTRA != 0 {
                    return extra_ids[(key & !EXTRA) as usize];
                }
                *index.entry(key).or_insert_with(|| {
                    let axis = (key % 3) as usize;
                    let mut l = key / 3;
                    let x = (l % np) as f64 - 1.0;
                    l /= np;
                    let y = (l % np) as f64 - 1.0;
                    let z = (l / np) as f64 - 1.0;
                    let mut p = Vector3::new(x, y, z);
                    p[axis] += 0.5;
                    vertices.push(world(p));
                    (vertices.len() - 1) as u32
                })
            }));
        }
    }
    TriangleMesh::new(vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Aabb;
    use crate::voxel::GridConfig;
    use proptest::prelude::*;

    fn cfg(n: usize) -> GridConfig {
        GridConfig::new(n, Aabb::new([0.0; 3], [n as f64; 3])).unwrap()
    }

    #[test]
    fn table_loops_are_closed() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        assert_eq!(t[1][0].edges.len(), 3);
        for case in t {
            for lp in case {
                assert!(lp.edges.len() >= 3);
            }
        }
    }

    #[test]
    fn single_cell_is_an_octahedron() {
        let mut g = OccupancyGrid::empty(cfg(8));
        g.set(3, 4, 5, true);
        let m = marching_cubes(&g).unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.vertices().len(), 6);
        assert_eq!(m.triangles().len(), 8);
        let v = m.signed_volume();
        assert!((v - 1.0 / 6.0).abs() < 1e-12);
        assert!((1.0 / 8.0..=8.0).contains(&v));
        let e = edge_uses(&m).len() as i64;
        assert_eq!(6 - e + 8, 2);
    }

    #[test]
    fn block_volume_and_components() {
        let g = OccupancyGrid::from_fn(cfg(40), |i, j, k| (4..36).contains(&i) && (4..36).contains(&j) && (4..36).contains(&k));
        let m = marching_cubes(&g).unwrap();
        assert!(m.is_watertight());
        let v = m.signed_volume();
        assert!((v - 32f64.powi(3)).abs() / 32f64.powi(3) < 0.05);

        let two = OccupancyGrid::from_fn(cfg(16), |i, j, k| {
            (j < 8 && k < 8) && (i < 4 || (8..12).contains(&i))
        });
        let m = marching_cubes(&two).unwrap();
        assert_eq!(m.connected_components(), 2);
        assert!(marching_cubes(&OccupancyGrid::empty(cfg(8))).is_err());
    }

    #[test]
    fn touching_boundary_is_closed() {
        let g = OccupancyGrid::from_fn(cfg(64), |i, j, _| i < 64 && j > 60);
        let m = marching_cubes(&g).unwrap();
        assert!(m.is_watertight());
        assert!(m.signed_volume() > 0.0);
    }

    /// Edge count of each triangle side; a 2-manifold closed mesh has all 2.
    fn edge_uses(m: &TriangleMesh) -> HashMap<(u32, u32), u32> {
        let mut uses = HashMap::new();
        for t in m.triangles() {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *uses.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        uses
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn random_grids_give_manifold_surfaces(seed in any::<u64>(), density in 5u64..95) {
            let n = 8;
            let g = OccupancyGrid::from_fn(cfg(n), |i, j, k| {
                let h = (seed ^ ((i * 73856093) ^ (j * 19349663) ^ (k * 83492791)) as u64)
                    .wrapping_mul(0x9E3779B97F4A7C15);
                (h >> 32) % 100 < density
            });
            prop_assume!(!g.is_empty());
            let m = marching_cubes(&g).unwrap();
            prop_assert!(edge_uses(&m).values().all(|&u| u == 2));
            prop_assert!(m.is_watertight());
            // enclosed volume within half a shell of the occupied volume
            let boundary_faces = g.iter_occupied().map(|[i, j, k]| {
                let (i, j, k) = (i as isize, j as isize, k as isize);
                [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                    .iter()
                    .filter(|d| !g.get_signed(i + d.0, j + d.1, k + d.2))
                    .count()
            }).sum::<usize>();
            let diff = (m.signed_volume() - g.count() as f64).abs();
            prop_assert!(diff < 0.5 * boundary_faces as f64, "{} vs {}", diff, boundary_faces);
        }

        #[test]
        fn interior_voxelization_recovers_grid(seed in any::<u64>(), density in 5u64..95) {
            let g = OccupancyGrid::from_fn(cfg(10), |i, j, k| {
                let h = (seed ^ ((i * 73856093) ^ (j * 19349663) ^ (k * 83492791)) as u64)
                    .wrapping_mul(0x9E3779B97F4A7C15);
                (h >> 32) % 100 < density
            });
            prop_assume!(!g.is_empty());
            let m = marching_cubes(&g).unwrap();
            let back = crate::voxel::voxelize(&m, g.config(), crate::voxel::Fill::Interior).unwrap().grid;
            prop_assert_eq!(back, g);
        }
    }
}
