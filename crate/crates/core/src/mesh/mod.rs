//! Triangle meshes: the asset representation used throughout the pipeline.
//!
//! Meshes are immutable once built. Coordinates are in meters.

mod bvh;
mod distance;
mod hull;
pub mod io;
mod patches;
pub mod primitives;

use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bvh::{Bvh, RayHit};
pub use distance::{min_surface_distance, point_triangle_distance_sq, triangle_triangle_distance};
pub use hull::convex_hull;
pub use io::{load_mesh, save_mesh, MeshFormat};
pub use patches::DIHEDRAL_THRESHOLD_DEG;

/// Triangles with an area below this (m²) are dropped during cleanup.
pub const DEGENERATE_AREA: f64 = 1e-12;
/// Vertices closer than this (m) are welded during cleanup.
pub const WELD_TOLERANCE: f64 = 1e-9;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = out.min[a].min(other.min[a]);
            out.max[a] = out.max[a].max(other.max[a]);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.min[a] > self.max[a])
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb {
            min: [self.min[0] - pad, self.min[1] - pad, self.min[2] - pad],
            max: [self.max[0] + pad, self.max[1] + pad, self.max[2] + pad],
        }
    }

    pub fn contains_box(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] - tol && other.max[a] <= self.max[a] + tol)
    }

    /// Squared distance between two boxes (0 when they overlap).
    pub fn distance_sq(&self, other: &Aabb) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let gap = (other.min[a] - self.max[a]).max(self.min[a] - other.max[a]);
            if gap > 0.0 {
                d += gap * gap;
            }
        }
        d
    }
}

/// Similarity transform `p' = scale * R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
            scale,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn rotation(r: Matrix3<f64>) -> Self {
        Self {
            rotation: r,
            ..Self::identity()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "transform scale must be positive, got {}",
                self.scale
            )));
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        if err > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (deviation {err:e})"
            )));
        }
        Ok(())
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords * self.scale + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let s = 1.0 / self.scale;
        Self {
            rotation: rt,
            translation: -(rt * self.translation) * s,
            scale: s,
        }
    }

    /// `self.then(other)` applies `self` first, then `other`.
    pub fn then(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation * other.scale + other.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.rotation - Matrix3::identity()).abs().max() <= tol
            && self.translation.abs().max() <= tol
            && (self.scale - 1.0).abs() <= tol
    }
}

/// Triangle soup with shared vertices and optional per-triangle patch labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    patches: Option<Vec<u32>>,
}

impl TriangleMesh {
    /// Builds a mesh after checking that every index is in range.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!(
                "triangle {t:?} references a vertex outside 0..{n}"
            )));
        }
        if vertices.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite vertex coordinate".into()));
        }
        Ok(Self {
            vertices,
            triangles,
            patches: None,
        })
    }

    pub fn with_patches(mut self, patches: Vec<u32>) -> Result<Self> {
        if patches.len() != self.triangles.len() {
            return Err(Error::InvalidArgument(format!(
                "{} patch labels for {} triangles",
                patches.len(),
                self.triangles.len()
            )));
        }
        self.patches = Some(patches);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn patches(&self) -> Option<&[u32]> {
        self.patches.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Non-normalized face normal (length = 2 × area).
    pub fn face_normal_raw(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, t: usize) -> Vector3<f64> {
        let n = self.face_normal_raw(t);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            n
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.face_normal_raw(t).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn centroid(&self, t: usize) -> Point3<f64> {
        let [a, b, c] = self.triangle(t);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Enclosed volume by the divergence theorem; positive for outward orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (
                    self.vertices[a as usize].coords,
                    self.vertices[b as usize].coords,
                    self.vertices[c as usize].coords,
                );
                a.dot(&b.cross(&c))
            })
            .sum::<f64>()
            / 6.0
    }

    fn edge_counts(&self) -> HashMap<(u32, u32), (u32, i32)> {
        // (count, orientation balance) per undirected edge
        let mut edges: HashMap<(u32, u32), (u32, i32)> = HashMap::with_capacity(self.triangles.len() * 2);
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let (key, sign) = if a < b { ((a, b), 1) } else { ((b, a), -1) };
                let e = edges.entry(key).or_insert((0, 0));
                e.0 += 1;
                e.1 += sign;
            }
        }
        edges
    }

    /// True iff every edge borders exactly two triangles.
    pub fn is_edge_manifold(&self) -> bool {
        !self.is_empty() && self.edge_counts().values().all(|&(n, _)| n == 2)
    }

    /// Closed, 2-manifold and consistently oriented.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.edge_counts().values().all(|&(n, bal)| n == 2 && bal == 0)
    }

    /// Number of edge-connected triangle components.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(p: &mut [u32], mut x: u32) -> u32 {
            while p[x as usize] != x {
                p[x as usize] = p[p[x as usize] as usize];
                x = p[x as usize];
            }
            x
        }
        for t in &self.triangles {
            for k in 1..3 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
                if a != b {
                    parent[a as usize] = b;
                }
            }
        }
        let mut roots: Vec<u32> = self
            .triangles
            .iter()
            .map(|t| find(&mut parent, t[0]))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| t.apply_point(p)).collect(),
            triangles: self.triangles.clone(),
            patches: self.patches.clone(),
        }
    }

    /// Same mesh with every triangle's winding reversed.
    pub fn flipped(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            patches: self.patches.clone(),
        }
    }

    /// Welds vertices within [`WELD_TOLERANCE`], drops degenerate triangles and
    /// unreferenced vertices. Patch labels follow their triangles.
    pub fn cleaned(&self) -> TriangleMesh {
        let remap = weld_map(&self.vertices, WELD_TOLERANCE);
        let mut used = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(self.triangles.len());
        let mut patches = self.patches.as_ref().map(|_| Vec::new());
        for (ti, tri) in self.triangles.iter().enumerate() {
            let w = tri.map(|i| remap[i as usize]);
            if w[0] == w[1] || w[1] == w[2] || w[0] == w[2] {
                continue;
            }
            let [a, b, c] = w.map(|i| self.vertices[i as usize]);
            if 0.5 * (b - a).cross(&(c - a)).norm() < DEGENERATE_AREA {
                continue;
            }
            let mapped = w.map(|i| {
                let slot = &mut used[i as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.vertices[i as usize]);
                }
                *slot
            });
            triangles.push(mapped);
            if let (Some(out), Some(src)) = (patches.as_mut(), self.patches.as_ref()) {
                out.push(src[ti]);
            }
        }
        TriangleMesh {
            vertices,
            triangles,
            patches,
        }
    }

    /// Sub-mesh made of the given triangles, with compacted vertices.
    pub fn submesh(&self, triangle_ids: &[usize]) -> TriangleMesh {
        let mut used = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(triangle_ids.len());
        for &t in triangle_ids {
            triangles.push(self.triangles[t].map(|i| {
                let slot = &mut used[i as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.vertices[i as usize]);
                }
                *slot
            }));
        }
        let patches = self
            .patches
            .as_ref()
            .map(|p| triangle_ids.iter().map(|&t| p[t]).collect());
        TriangleMesh {
            vertices,
            triangles,
            patches,
        }
    }

    /// Returns a copy with patch labels assigned by normal-based region growing,
    /// unless labels are already present.
    pub fn with_computed_patches(&self) -> TriangleMesh {
        if self.patches.is_some() {
            return self.clone();
        }
        let labels = patches::region_grow(self, DIHEDRAL_THRESHOLD_DEG);
        TriangleMesh {
            patches: Some(labels),
            ..self.clone()
        }
    }

    /// Per-vertex unit normals averaged from incident faces (area weighted).
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut n = vec![Vector3::zeros(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let fnr = self.face_normal_raw(t);
            for &i in tri {
                n[i as usize] += fnr;
            }
        }
        for v in &mut n {
            let len = v.norm();
            if len > 0.0 {
                *v /= len;
            }
        }
        n
    }
}

/// Maps each vertex to the lowest-index vertex within `tol` of it.
fn weld_map(vertices: &[Point3<f64>], tol: f64) -> Vec<u32> {
    let key = |p: &Point3<f64>| -> [i64; 3] { [0, 1, 2].map(|a| (p[a] / tol).floor() as i64) };
    let mut buckets: HashMap<[i64; 3], Vec<u32>> = HashMap::with_capacity(vertices.len());
    let mut remap = vec![0u32; vertices.len()];
    let tol_sq = tol * tol;
    for (i, p) in vertices.iter().enumerate() {
        let k = key(p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in list {
                            if (vertices[j as usize] - p).norm_squared() <= tol_sq {
                                found = Some(j);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        match found {
            Some(j) => remap[i] = j,
            None => {
                remap[i] = i as u32;
                buckets.entry(k).or_default().push(i as u32);
            }
        }
    }
    remap
}

/// Uniformly rescales and centers a mesh so its longest extent spans [-1, 1].
///
/// Returns the normalized mesh and the transform mapping normalized
/// coordinates back to the original frame.
pub fn normalize_to_unit_box(mesh: &TriangleMesh) -> Result<(TriangleMesh, RigidTransform)> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("cannot normalize an empty mesh".into()));
    }
    let b = mesh.bounds();
    let longest = b.extent().into_iter().fold(0.0, f64::max);
    if !(longest > 0.0) {
        return Err(Error::Degenerate("mesh has zero extent".into()));
    }
    let s = 2.0 / longest;
    let c = b.center().coords;
    let forward = RigidTransform {
        rotation: Matrix3::identity(),
        translation: -c * s,
        scale: s,
    };
    Ok((mesh.transformed(&forward), forward.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn normalize_cube_0_4() {
        let cube = primitives::box_mesh([0.0; 3], [4.0; 3]);
        let (n, back) = normalize_to_unit_box(&cube).unwrap();
        let b = n.bounds();
        for a in 0..3 {
            assert!((b.min[a] + 1.0).abs() < 1e-12 && (b.max[a] - 1.0).abs() < 1e-12);
        }
        let fwd = back.inverse();
        assert!((fwd.scale - 0.5).abs() < 1e-12);
        assert!((fwd.translation - Vector3::new(-1.0, -1.0, -1.0)).norm() < 1e-12);
        let restored = n.transformed(&back);
        for (p, q) in restored.vertices().iter().zip(cube.vertices()) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn normalize_fixpoint_and_plate() {
        let cube = primitives::box_mesh([-1.0; 3], [1.0; 3]);
        let (_, t) = normalize_to_unit_box(&cube).unwrap();
        assert!(t.is_identity(1e-9));

        let plate = primitives::box_mesh([0.0, 0.0, 0.0], [4.0, 4.0, 0.4]);
        let (n, _) = normalize_to_unit_box(&plate).unwrap();
        let e = n.bounds().extent();
        assert!((e[0] - 2.0).abs() < 1e-12);
        assert!((e[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let empty = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(normalize_to_unit_box(&empty), Err(Error::EmptyInput(_))));
        let p = Point3::new(1.0, 1.0, 1.0);
        let point = TriangleMesh::new(vec![p, p, p], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(normalize_to_unit_box(&point), Err(Error::Degenerate(_))));
    }

    #[test]
    fn transform_inverse_and_compose() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let t = RigidTransform::new(r, Vector3::new(1.0, -2.0, 0.5), 2.5).unwrap();
        let p = Point3::new(0.3, 0.7, -0.2);
        let back = t.inverse().apply_point(&t.apply_point(&p));
        assert!((back - p).norm() < 1e-12);
        let u = RigidTransform::translation(Vector3::new(0.0, 0.0, 1.0));
        let composed = t.then(&u).apply_point(&p);
        assert!((composed - u.apply_point(&t.apply_point(&p))).norm() < 1e-12);
        assert!(RigidTransform::new(Matrix3::identity() * 2.0, Vector3::zeros(), 1.0).is_err());
        assert!(RigidTransform::new(Matrix3::identity(), Vector3::zeros(), 0.0).is_err());
    }

    #[test]
    fn cleanup_welds_and_drops_degenerates() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(1.0, 0.0, 0.0);
        let c = Point3::new(0.0, 1.0, 0.0);
        let b2 = Point3::new(1.0 + 1e-10, 0.0, 0.0);
        let mesh = TriangleMesh::new(vec![a, b, c, b2], vec![[0, 1, 2], [0, 3, 2], [0, 1, 3]]).unwrap();
        let cleaned = mesh.cleaned();
        assert_eq!(cleaned.vertices().len(), 3);
        // the third triangle collapses after welding b and b2
        assert_eq!(cleaned.triangles().len(), 2);
    }

    #[test]
    fn index_out_of_range_rejected() {
        assert!(TriangleMesh::new(vec![Point3::origin()], vec![[0, 0, 1]]).is_err());
    }

    #[test]
    fn cube_properties() {
        let cube = primitives::box_mesh([0.0; 3], [1.0; 3]);
        assert!(cube.is_watertight());
        assert!((cube.signed_volume() - 1.0).abs() < 1e-12);
        assert!((cube.surface_area() - 6.0).abs() < 1e-12);
        assert_eq!(cube.connected_components(), 1);
    }
}
