//! Contact-surface extraction: align the assembly axis with −z, sweep a voxel
//! block down onto the asset and keep the faces that touch what survives.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

use crate::axis::Role;
use crate::error::{Error, Result};
use crate::mesh::{convex_hull, RigidTransform, TriangleMesh};
use crate::voxel::{voxelize, Fill, GridConfig, OccupancyGrid};

/// Contact band as a multiple of the cell size.
pub const CONTACT_BAND_CELLS: f64 = 1.5;
/// Patches facing within this angle of +z can be top surfaces.
pub const TOP_NORMAL_DEG: f64 = 30.0;
/// Height tolerance for top surfaces, in cells.
pub const TOP_HEIGHT_CELLS: f64 = 2.0;
/// Cells of empty space kept around an asset when gridding it for extraction.
pub const EXTRACT_PAD_CELLS: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct ContactSurfaceSet {
    /// Source asset in the aligned frame, with patch labels.
    pub mesh: TriangleMesh,
    pub face_ids: BTreeSet<u32>,
    /// Sorted triangle indices into `mesh`.
    pub contact_triangles: Vec<usize>,
    pub free_region: OccupancyGrid,
    pub axis: Vector3<f64>,
}

impl ContactSurfaceSet {
    pub fn is_empty(&self) -> bool {
        self.contact_triangles.is_empty()
    }

    pub fn patch_count(&self) -> usize {
        self.face_ids.len()
    }

    pub fn contact_area(&self) -> f64 {
        self.contact_triangles.iter().map(|&t| self.mesh.triangle_area(t)).sum()
    }

    pub fn contact_mesh(&self) -> TriangleMesh {
        self.mesh.submesh(&self.contact_triangles)
    }

    fn retain_patches(mut self, keep: impl Fn(u32) -> bool) -> Self {
        let labels = self.mesh.patches().expect("contact sets carry patch labels").to_vec();
        self.face_ids.retain(|&p| keep(p));
        self.contact_triangles.retain(|&t| self.face_ids.contains(&labels[t]));
        self
    }
}

/// Rotation taking unit vector `from` onto unit vector `to`. Antiparallel
/// inputs rotate 180° about whichever of x or y is more orthogonal.
pub(crate) fn rotation_between(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let v = from.cross(to);
    let c = from.dot(to);
    if c < -1.0 + 1e-12 {
        let pick = if from.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = (pick - from * from.dot(&pick)).normalize();
        return 2.0 * u * u.transpose() - Matrix3::identity();
    }
    let vx = v.cross_matrix();
    Matrix3::identity() + vx + vx * vx / (1.0 + c)
}

/// Rotates `mesh` so `axis` points along −z. The transform maps original to aligned coordinates.
pub fn align_to_axis(mesh: &TriangleMesh, axis: &Vector3<f64>) -> Result<(TriangleMesh, RigidTransform)> {
    let n = axis.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidArgument("assembly axis must be nonzero".into()));
    }
    let r = rotation_between(&(axis / n), &-Vector3::z());
    let t = RigidTransform::rotation(r);
    Ok((mesh.transformed(&t), t))
}

/// Highest occupied layer per column, `-1` where the column is empty. Indexed `j * n + i`.
pub(crate) fn column_tops(grid: &OccupancyGrid) -> Vec<i32> {
    let n = grid.resolution();
    let mut tops = vec![-1i32; n * n];
    tops.par_chunks_mut(n).enumerate().for_each(|(j, out)| {
        for k in (0..n).rev() {
            let row = grid.row(j, k);
            if row.iter().all(|&w| w == 0) {
                continue;
            }
            for (i, t) in out.iter_mut().enumerate() {
                if *t < 0 && (row[i / 64] >> (i % 64)) & 1 == 1 {
                    *t = k as i32;
                }
            }
        }
    });
    tops
}

/// Cells a full block lowered onto the asset keeps, stopping once its top
/// layer sits one layer above the asset's highest cell. For receptacles the
/// block is clipped to the convex hull, widened one layer upwards so the
/// layer resting on the rim survives.
pub fn descent_sweep(asset: &OccupancyGrid, role: Role, hull: Option<&OccupancyGrid>) -> Result<OccupancyGrid> {
    let Some((_, hi)) = asset.occupied_index_bounds() else {
        return Err(Error::EmptyInput("descent sweep over an empty asset grid".into()));
    };
    let hull = match (role, hull) {
        (Role::Receptacle, None) => {
            return Err(Error::InvalidArgument("receptacle sweep needs the convex-hull grid".into()))
        }
        (Role::Receptacle, Some(h)) => {
            if h.config() != asset.config() {
                return Err(Error::InvalidArgument("hull grid layout differs from the asset grid".into()));
            }
            Some(h)
        }
        (Role::Plug, _) => None,
    };
    let n = asset.resolution();
    let k_cap = (hi[2] + 1).min(n - 1);
    let tops = column_tops(asset);
    let mut out = OccupancyGrid::empty(*asset.config());
    let wpr = out.words_per_row();
    out.words_mut()
        .par_chunks_mut(wpr * n)
        .enumerate()
        .filter(|(k, _)| *k <= k_cap)
        .for_each(|(k, slab)| {
            for j in 0..n {
                let row = &mut slab[j * wpr..(j + 1) * wpr];
                let top = &tops[j * n..(j + 1) * n];
                for (i, &t) in top.iter().enumerate() {
                    if (k as i32) > t {
                        row[i / 64] |= 1 << (i % 64);
                    }
                }
                if let Some(h) = hull {
                    let cur = h.row(j, k);
                    let below = if k > 0 { Some(h.row(j, k - 1)) } else { None };
                    for (w, word) in row.iter_mut().enumerate() {
                        *word &= cur[w] | below.map_or(0, |b| b[w]);
                    }
                }
            }
        });
    out.recount();
    Ok(out)
}

/// Contact classification with every sample point required inside the band.
pub fn classify_contact_faces(mesh: &TriangleMesh, free_region: &OccupancyGrid, delta: f64) -> ContactSurfaceSet {
    classify_contact_faces_with(mesh, free_region, delta, 1.0)
}

/// A patch is contact when at least `fraction` of its sample points (its
/// vertices and triangle centroids) lie within `delta` of the free region.
pub fn classify_contact_faces_with(
    mesh: &TriangleMesh,
    free_region: &OccupancyGrid,
    delta: f64,
    fraction: f64,
) -> ContactSurfaceSet {
    let mesh = mesh.with_computed_patches();
    let labels = mesh.patches().expect("patches computed").to_vec();
    let mut set = ContactSurfaceSet {
        face_ids: BTreeSet::new(),
        contact_triangles: Vec::new(),
        free_region: free_region.clone(),
        axis: -Vector3::z(),
        mesh,
    };
    if free_region.is_empty() || set.mesh.is_empty() {
        return set;
    }
    let mesh = &set.mesh;
    let vert_near: Vec<bool> = mesh
        .vertices()
        .par_iter()
        .map(|p| near_free(free_region, p, delta))
        .collect();
    let cent_near: Vec<bool> = (0..mesh.triangles().len())
        .into_par_iter()
        .map(|t| near_free(free_region, &mesh.centroid(t), delta))
        .collect();

    // (near, total) per patch over unique vertices plus centroids
    let mut tally: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    let mut seen: BTreeSet<(u32, u32)> = BTreeSet::new();
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let e = tally.entry(labels[t]).or_default();
        e.0 += cent_near[t] as usize;
        e.1 += 1;
        for &v in tri {
            if seen.insert((labels[t], v)) {
                e.0 += vert_near[v as usize] as usize;
                e.1 += 1;
            }
        }
    }
    let fraction = fraction.clamp(0.0, 1.0);
    set.face_ids = tally
        .into_iter()
        .filter(|&(_, (near, total))| if fraction >= 1.0 { near == total } else { near as f64 >= fraction * total as f64 })
        .map(|(p, _)| p)
        .collect();
    set.contact_triangles = (0..labels.len()).filter(|&t| set.face_ids.contains(&labels[t])).collect();
    set
}

/// Whether `p` lies within `delta` of some free cell, taking cells as closed cubes.
fn near_free(grid: &OccupancyGrid, p: &Point3<f64>, delta: f64) -> bool {
    let cfg = grid.config();
    let c = cfg.to_cell_coords(p);
    let r = delta / cfg.cell_size() * (1.0 + 1e-9);
    let r2 = r * r;
    let n = cfg.resolution() as isize;
    // cell i spans [i, i + 1]
    let range = |a: usize| {
        let lo = ((c[a] - r - 1.0).ceil() as isize).max(0);
        let hi = ((c[a] + r).floor() as isize).min(n - 1);
        lo..=hi
    };
    let gap = |i: isize, x: f64| (x - i as f64 - 1.0).max(i as f64 - x).max(0.0);
    for k in range(2) {
        let dz = gap(k, c[2]);
        for j in range(1) {
            let dy = gap(j, c[1]);
            let rem = r2 - dz * dz - dy * dy;
            if rem < 0.0 {
                continue;
            }
            let row = grid.row(j as usize, k as usize);
            for i in range(0) {
                let dx = gap(i, c[0]);
                if dx * dx <= rem && (row[i as usize / 64] >> (i as usize % 64)) & 1 == 1 {
                    return true;
                }
            }
        }
    }
    false
}

/// Drops the upward-facing patches that sit on the asset's top surface, so only
/// the orifice faces leading into the receptacle remain.
pub fn strip_receptacle_top(set: ContactSurfaceSet, mesh: &TriangleMesh) -> ContactSurfaceSet {
    let labels = set.mesh.patches().expect("contact sets carry patch labels");
    let top = mesh.bounds().max[2];
    let tol = TOP_HEIGHT_CELLS * set.free_region.cell_size();
    let cos_max = TOP_NORMAL_DEG.to_radians().cos();
    // area-weighted normal and height per contact patch
    let mut acc: BTreeMap<u32, (Vector3<f64>, f64, f64)> = BTreeMap::new();
    for &t in &set.contact_triangles {
        let a = set.mesh.triangle_area(t);
        let e = acc.entry(labels[t]).or_insert((Vector3::zeros(), 0.0, 0.0));
        e.0 += set.mesh.face_normal_raw(t);
        e.1 += a * set.mesh.centroid(t).z;
        e.2 += a;
    }
    let drop: BTreeSet<u32> = acc
        .into_iter()
        .filter(|(_, (nrm, hz, area))| {
            let len = nrm.norm();
            *area > 0.0 && len > 0.0 && nrm.z / len >= cos_max && (hz / area - top).abs() <= tol
        })
        .map(|(p, _)| p)
        .collect();
    set.retain_patches(|p| !drop.contains(&p))
}

/// Scales the contact triangles into the unit box with their lowest point at
/// z = −1 and their xy extent centered. The transform maps aligned to canonical coordinates.
pub fn canonicalize_for_completion(set: &ContactSurfaceSet) -> Result<(TriangleMesh, RigidTransform)> {
    if set.is_empty() {
        return Err(Error::EmptyInput("no contact triangles to canonicalize".into()));
    }
    let contact = set.contact_mesh();
    let b = contact.bounds();
    let longest = b.extent().into_iter().fold(0.0, f64::max);
    if !(longest > 0.0) {
        return Err(Error::Degenerate("contact surface has zero extent".into()));
    }
    let s = 2.0 / longest;
    let c = b.center();
    let t = RigidTransform::new(
        Matrix3::identity(),
        Vector3::new(-c.x * s, -c.y * s, -1.0 - b.min[2] * s),
        s,
    )?;
    Ok((contact.transformed(&t), t))
}

/// Everything derived while extracting contacts from one asset.
#[derive(Debug, Clone)]
pub struct ContactExtraction {
    /// Original-to-aligned transform.
    pub alignment: RigidTransform,
    pub asset_grid: OccupancyGrid,
    pub hull_grid: Option<OccupancyGrid>,
    pub set: ContactSurfaceSet,
}

/// Grid used to voxelize an aligned asset for the descent sweep.
pub fn extraction_grid(aligned: &TriangleMesh, resolution: usize) -> Result<GridConfig> {
    GridConfig::fit(&aligned.bounds(), resolution, 0.0, EXTRACT_PAD_CELLS)
}

/// Align, voxelize, sweep and classify in one go. Receptacle tops are stripped.
pub fn extract_contacts(
    mesh: &TriangleMesh,
    axis: &Vector3<f64>,
    role: Role,
    resolution: usize,
) -> Result<ContactExtraction> {
    let (aligned, alignment) = align_to_axis(mesh, axis)?;
    let config = extraction_grid(&aligned, resolution)?;
    let asset_grid = voxelize(&aligned, &config, Fill::Solid)?.grid;
    let hull_grid = match role {
        Role::Receptacle => Some(voxelize(&convex_hull(&aligned)?, &config, Fill::Solid)?.grid),
        Role::Plug => None,
    };
    let free = descent_sweep(&asset_grid, role, hull_grid.as_ref())?;
    let mut set = classify_contact_faces(&aligned, &free, CONTACT_BAND_CELLS * config.cell_size());
    if role == Role::Receptacle {
        set = strip_receptacle_top(set, &aligned);
    }
    set.axis = alignment.apply_vector(axis).normalize();
    Ok(ContactExtraction {
        alignment,
        asset_grid,
        hull_grid,
        set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{self, Profile};
    use crate::mesh::Aabb;
    use proptest::prelude::*;

    /// Literal descent: a full block whose bottom starts above the asset is
    /// lowered one layer at a time until its top layer is one above the
    /// asset top, deleting every block cell that ever overlaps the asset.
    fn stepping_oracle(asset: &OccupancyGrid, hull: Option<&OccupancyGrid>) -> OccupancyGrid {
        let n = asset.resolution() as isize;
        let k_top = asset.occupied_index_bounds().unwrap().1[2] as isize;
        let stop = (k_top + 1).min(n - 1);
        // block cells identified by their height relative to the block top
        let mut alive = vec![true; (n * n * n) as usize];
        let idx = |i: isize, j: isize, d: isize| ((d * n + j) * n + i) as usize;
        let mut top = k_top + 1 + n; // block bottom starts at k_top + 2
        loop {
            for d in 0..n {
                let k = top - d;
                if !(0..n).contains(&k) {
                    continue;
                }
                for j in 0..n {
                    for i in 0..n {
                        if asset.get(i as usize, j as usize, k as usize) {
                            alive[idx(i, j, d)] = false;
                        }
                    }
                }
            }
            if top == stop {
                break;
            }
            top -= 1;
        }
        OccupancyGrid::from_fn(*asset.config(), |i, j, k| {
            let (i, j, k) = (i as isize, j as isize, k as isize);
            let d = top - k;
            if !(0..n).contains(&d) || !alive[idx(i, j, d)] {
                return false;
            }
            match hull {
                Some(h) => h.get(i as usize, j as usize, k as usize) || (k > 0 && h.get(i as usize, j as usize, k as usize - 1)),
                None => true,
            }
        })
    }

    /// Brute-force point-to-grid test used as the classification oracle.
    /// Clamps `p` into every free cube and measures.
    fn brute_near(grid: &OccupancyGrid, p: &Point3<f64>, delta: f64) -> bool {
        let half = 0.5 * grid.cell_size();
        grid.iter_occupied().any(|[i, j, k]| {
            let c = grid.config().cell_center(i, j, k);
            let q = Point3::from((p - c).map(|d| d.clamp(-half, half)) + c.coords);
            (q - p).norm() <= delta * (1.0 + 1e-9)
        })
    }

    fn grid_for(mesh: &TriangleMesh, n: usize, domain: Aabb) -> (GridConfig, OccupancyGrid) {
        let cfg = GridConfig::new(n, domain).unwrap();
        let g = voxelize(mesh, &cfg, Fill::Solid).unwrap().grid;
        (cfg, g)
    }

    fn pocket() -> TriangleMesh {
        primitives::pocket_block(0.5, 0.5, 0.25, 0.25)
    }

    /// Unit domain: every pocket face lies on a cell plane at 16³ and finer.
    fn pocket_domain() -> Aabb {
        Aabb::new([-1.0; 3], [1.0; 3])
    }

    fn patch_normals(set: &ContactSurfaceSet) -> Vec<Vector3<f64>> {
        let labels = set.mesh.patches().unwrap();
        set.face_ids
            .iter()
            .map(|&p| {
                let t = (0..labels.len()).find(|&t| labels[t] == p).unwrap();
                set.mesh.face_normal(t)
            })
            .collect()
    }

    #[test]
    fn align_fixpoint_and_round_trip() {
        let m = primitives::box_mesh([0.0, 1.0, 2.0], [1.0, 3.0, 2.5]);
        let (a, t) = align_to_axis(&m, &-Vector3::z()).unwrap();
        assert!(t.is_identity(0.0));
        assert_eq!(a, m);

        let (a, t) = align_to_axis(&m, &Vector3::x()).unwrap();
        assert!((t.apply_vector(&Vector3::x()) + Vector3::z()).norm() < 1e-12);
        let back = a.transformed(&t.inverse());
        for (p, q) in back.vertices().iter().zip(m.vertices()) {
            assert!((p - q).norm() < 1e-9);
        }

        let d = Vector3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        let (_, t) = align_to_axis(&m, &d).unwrap();
        assert!((t.apply_vector(&d) + Vector3::z()).norm() < 1e-9);
        assert!(t.validate().is_ok());

        let (_, t) = align_to_axis(&m, &Vector3::z()).unwrap();
        assert!((t.apply_vector(&Vector3::z()) + Vector3::z()).norm() < 1e-12);
        assert!(align_to_axis(&m, &Vector3::zeros()).is_err());
    }

    #[test]
    fn sweep_matches_stepping_oracle() {
        let plate = primitives::box_mesh([-0.8, -0.6, -0.1], [0.6, 0.8, 0.1]);
        let (_, g) = grid_for(&plate, 32, Aabb::new([-1.0; 3], [1.0; 3]));
        assert_eq!(descent_sweep(&g, Role::Plug, None).unwrap(), stepping_oracle(&g, None));

        let cyl = primitives::cylinder(0.3, 0.6, 24);
        let (_, g) = grid_for(&cyl, 32, Aabb::new([-0.5, -0.5, -0.2], [0.5, 0.5, 0.8]));
        assert_eq!(descent_sweep(&g, Role::Plug, None).unwrap(), stepping_oracle(&g, None));

        let m = pocket();
        let (cfg, g) = grid_for(&m, 32, pocket_domain());
        let hull = voxelize(&convex_hull(&m).unwrap(), &cfg, Fill::Solid).unwrap().grid;
        let free = descent_sweep(&g, Role::Receptacle, Some(&hull)).unwrap();
        assert_eq!(free, stepping_oracle(&g, Some(&hull)));
        assert!(descent_sweep(&g, Role::Receptacle, None).is_err());
        assert!(descent_sweep(&OccupancyGrid::empty(cfg), Role::Plug, None).is_err());
    }

    #[test]
    fn sweep_shapes() {
        // plate spanning the domain laterally: one layer above it survives
        let plate = primitives::box_mesh([-1.0, -1.0, -0.1], [1.0, 1.0, 0.1]);
        let (_, g) = grid_for(&plate, 32, Aabb::new([-1.0; 3], [1.0; 3]));
        let free = descent_sweep(&g, Role::Plug, None).unwrap();
        let k_top = g.occupied_index_bounds().unwrap().1[2];
        assert_eq!(free, OccupancyGrid::from_fn(*g.config(), |_, _, k| k == k_top + 1));

        // pocket cavity is free, block sides are not
        let m = pocket();
        let (cfg, g) = grid_for(&m, 32, pocket_domain());
        let hull = voxelize(&convex_hull(&m).unwrap(), &cfg, Fill::Solid).unwrap().grid;
        let free = descent_sweep(&g, Role::Receptacle, Some(&hull)).unwrap();
        let cav = cfg.cell_of(&Point3::new(0.0, 0.0, 0.375)).unwrap();
        assert!(free.get(cav[0], cav[1], cav[2]));
        let out = cfg.cell_of(&Point3::new(0.7, 0.0, 0.25)).unwrap();
        assert!(!free.get(out[0], out[1], out[2]));
        assert_eq!(free.overlap_count(&g).unwrap(), 0);

        // cylinder plug: nothing under its footprint below the top
        let cyl = primitives::cylinder(0.3, 0.6, 24);
        let (cfg, g) = grid_for(&cyl, 32, Aabb::new([-0.5, -0.5, -0.2], [0.5, 0.5, 0.8]));
        let free = descent_sweep(&g, Role::Plug, None).unwrap();
        let c = cfg.cell_of(&Point3::new(0.0, 0.0, -0.1)).unwrap();
        assert!(!free.get(c[0], c[1], c[2]));
        let side = cfg.cell_of(&Point3::new(0.45, 0.0, 0.3)).unwrap();
        assert!(free.get(side[0], side[1], side[2]));
    }

    #[test]
    fn pocket_contacts_then_strip_top() {
        let m = pocket();
        let (cfg, g) = grid_for(&m, 64, pocket_domain());
        let hull = voxelize(&convex_hull(&m).unwrap(), &cfg, Fill::Solid).unwrap().grid;
        let free = descent_sweep(&g, Role::Receptacle, Some(&hull)).unwrap();
        let delta = CONTACT_BAND_CELLS * cfg.cell_size();
        let set = classify_contact_faces(&m, &free, delta);

        // oracle: recompute patch membership by brute force
        let labels = set.mesh.patches().unwrap().to_vec();
        let mut expect = BTreeSet::new();
        let patches: BTreeSet<u32> = labels.iter().copied().collect();
        for p in patches {
            let tris: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == p).collect();
            let ok = tris.iter().all(|&t| {
                brute_near(&free, &set.mesh.centroid(t), delta)
                    && set.mesh.triangle(t).iter().all(|v| brute_near(&free, v, delta))
            });
            if ok {
                expect.insert(p);
            }
        }
        assert_eq!(set.face_ids, expect);
        // walls, bottom and the rim top
        assert_eq!(set.patch_count(), 6);
        let stripped = strip_receptacle_top(set, &m);
        assert_eq!(stripped.patch_count(), 5);
        let normals = patch_normals(&stripped);
        assert_eq!(normals.iter().filter(|n| n.z > 0.99).count(), 1);
        assert_eq!(normals.iter().filter(|n| n.z.abs() < 1e-9).count(), 4);
        for &t in &stripped.contact_triangles {
            assert!(stripped.mesh.centroid(t).z < 0.5 - 1e-9);
        }
    }

    #[test]
    fn flush_pocket_and_plate() {
        // walls flush with the block sides: no top surface to strip
        let tube = primitives::pocket_block(0.5, 0.5, 0.5 - 1e-3, 0.25);
        let set = ContactSurfaceSet {
            mesh: tube.with_computed_patches(),
            face_ids: BTreeSet::new(),
            contact_triangles: Vec::new(),
            free_region: OccupancyGrid::empty(GridConfig::new(16, pocket_domain()).unwrap()),
            axis: -Vector3::z(),
        };
        assert!(classify_contact_faces(&tube, &set.free_region, 0.1).is_empty());

        let plate = primitives::box_mesh([-1.0, -1.0, -0.1], [1.0, 1.0, 0.1]);
        let (cfg, g) = grid_for(&plate, 64, Aabb::new([-1.0; 3], [1.0; 3]));
        let free = descent_sweep(&g, Role::Plug, None).unwrap();
        let set = classify_contact_faces(&plate, &free, CONTACT_BAND_CELLS * cfg.cell_size());
        assert_eq!(set.patch_count(), 1);
        assert!(patch_normals(&set)[0].z > 0.99);
    }

    #[test]
    fn counterbore_keeps_bores_and_shoulder() {
        let m = primitives::hole_block(
            0.5,
            0.5,
            &[(Profile::Circle { radius: 0.3 }, 0.125), (Profile::Circle { radius: 0.15 }, 0.375)],
            32,
        );
        let (cfg, g) = grid_for(&m, 64, pocket_domain());
        let hull = voxelize(&convex_hull(&m).unwrap(), &cfg, Fill::Solid).unwrap().grid;
        let free = descent_sweep(&g, Role::Receptacle, Some(&hull)).unwrap();
        let set = classify_contact_faces(&m, &free, CONTACT_BAND_CELLS * cfg.cell_size());
        let ex = ContactExtraction {
            alignment: RigidTransform::identity(),
            asset_grid: g,
            hull_grid: Some(hull),
            set: strip_receptacle_top(set, &m),
        };
        let n = patch_normals(&ex.set);
        let ups: Vec<f64> = ex
            .set
            .face_ids
            .iter()
            .map(|&p| {
                let labels = ex.set.mesh.patches().unwrap();
                let t = (0..labels.len()).find(|&t| labels[t] == p).unwrap();
                ex.set.mesh.centroid(t).z
            })
            .collect();
        // shoulder at 0.375 and floor at 0.125 face up; top rim at 0.5 is gone
        assert!(ups.iter().zip(&n).all(|(z, nn)| nn.z < 0.99 || *z < 0.45));
        assert!(ups.iter().zip(&n).any(|(z, nn)| nn.z > 0.99 && (z - 0.375).abs() < 1e-9));
        assert!(ups.iter().zip(&n).any(|(z, nn)| nn.z > 0.99 && (z - 0.125).abs() < 1e-9));
        // curved bore walls: every contact triangle below the rim
        let side_area: f64 = ex
            .set
            .contact_triangles
            .iter()
            .filter(|&&t| ex.set.mesh.face_normal(t).z.abs() < 1e-6)
            .map(|&t| ex.set.mesh.triangle_area(t))
            .sum();
        let expect = 2.0 * std::f64::consts::PI * (0.3 * 0.125 + 0.15 * 0.25);
        assert!((side_area - expect).abs() < 0.1 * expect, "{side_area} vs {expect}");
    }

    #[test]
    fn canonical_contact_mesh() {
        let ex = extract_contacts(&pocket(), &-Vector3::z(), Role::Receptacle, 64).unwrap();
        let (c, t) = canonicalize_for_completion(&ex.set).unwrap();
        let b = c.bounds();
        assert!((b.min[2] + 1.0).abs() < 1e-9);
        assert!((b.min[0] + b.max[0]).abs() < 1e-9 && (b.min[1] + b.max[1]).abs() < 1e-9);
        assert!(b.max.iter().all(|&v| v <= 1.0 + 1e-9));
        let back = c.transformed(&t.inverse());
        let orig = ex.set.contact_mesh();
        for (p, q) in back.vertices().iter().zip(orig.vertices()) {
            assert!((p - q).norm() < 1e-9);
        }

        // single face
        let one = ex.set.clone().retain_patches({
            let first = *ex.set.face_ids.iter().next().unwrap();
            move |p| p == first
        });
        let (c, _) = canonicalize_for_completion(&one).unwrap();
        assert!((c.bounds().min[2] + 1.0).abs() < 1e-9);
        assert_eq!(c.with_computed_patches().patches().unwrap().iter().collect::<BTreeSet<_>>().len(), 1);

        let none = ex.set.clone().retain_patches(|_| false);
        assert!(canonicalize_for_completion(&none).is_err());
    }

    /// Every free cell connects to the top layer through free cells with non-decreasing z.
    fn reachable_from_top(free: &OccupancyGrid) -> bool {
        let Some((_, hi)) = free.occupied_index_bounds() else {
            return true;
        };
        let n = free.resolution();
        let mut ok = OccupancyGrid::empty(*free.config());
        for k in (0..=hi[2]).rev() {
            // seed from the layer above, then spread within the layer
            let mut stack = Vec::new();
            for j in 0..n {
                for i in 0..n {
                    if free.get(i, j, k) && (k == hi[2] || ok.get(i, j, k + 1)) {
                        ok.set(i, j, k, true);
                        stack.push([i, j]);
                    }
                }
            }
            while let Some([i, j]) = stack.pop() {
                for (di, dj) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                    let (a, b) = (i as isize + di, j as isize + dj);
                    if a < 0 || b < 0 || a >= n as isize || b >= n as isize {
                        continue;
                    }
                    let (a, b) = (a as usize, b as usize);
                    if free.get(a, b, k) && !ok.get(a, b, k) {
                        ok.set(a, b, k, true);
                        stack.push([a, b]);
                    }
                }
            }
        }
        ok.count() == free.count()
    }

    fn random_asset(seed: u64, n: usize) -> OccupancyGrid {
        let cfg = GridConfig::new(n, Aabb::new([0.0; 3], [1.0; 3])).unwrap();
        OccupancyGrid::from_fn(cfg, |i, j, k| {
            let h = (seed ^ ((i * 73856093) ^ (j * 19349663) ^ (k * 83492791)) as u64)
                .wrapping_mul(0x9E3779B97F4A7C15);
            k < n - 3 && (h >> 40) % 100 < 8
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn sweep_disjoint_reachable_and_oracle_equal(seed in any::<u64>(), n in 8usize..20, masked in any::<bool>()) {
            let g = random_asset(seed, n);
            prop_assume!(!g.is_empty());
            let hull = OccupancyGrid::from_fn(*g.config(), |i, j, _| i > 1 && j > 1 && i + 2 < n && j + 2 < n);
            let (role, h) = if masked { (Role::Receptacle, Some(&hull)) } else { (Role::Plug, None) };
            let free = descent_sweep(&g, role, h).unwrap();
            prop_assert_eq!(free.overlap_count(&g).unwrap(), 0);
            prop_assert!(reachable_from_top(&free));
            prop_assert_eq!(&free, &stepping_oracle(&g, h));
        }

        #[test]
        fn classification_is_monotone_in_delta(d1 in 0.0f64..3.0, dd in 0.0f64..2.0, shift in 0.0f64..1.0) {
            let m = primitives::pocket_block(0.5, 0.5, 0.2 + 0.05 * shift, 0.25);
            let (cfg, g) = grid_for(&m, 24, pocket_domain());
            let hull = voxelize(&convex_hull(&m).unwrap(), &cfg, Fill::Solid).unwrap().grid;
            let free = descent_sweep(&g, Role::Receptacle, Some(&hull)).unwrap();
            let h = cfg.cell_size();
            let a = classify_contact_faces(&m, &free, d1 * h);
            let b = classify_contact_faces(&m, &free, (d1 + dd) * h);
            prop_assert!(a.face_ids.is_subset(&b.face_ids));
            for &t in &a.contact_triangles {
                for v in a.mesh.triangle(t) {
                    prop_assert!(brute_near(&free, &v, d1 * h));
                }
            }
        }
    }

    #[test]
    fn classification_is_deterministic() {
        let a = extract_contacts(&pocket(), &Vector3::x(), Role::Receptacle, 32).unwrap();
        let b = extract_contacts(&pocket(), &Vector3::x(), Role::Receptacle, 32).unwrap();
        assert_eq!(a.set.face_ids, b.set.face_ids);
        assert_eq!(a.set.contact_triangles, b.set.contact_triangles);
        assert_eq!(a.set.free_region, b.set.free_region);
    }
}
