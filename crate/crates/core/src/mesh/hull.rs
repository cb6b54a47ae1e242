//! Incremental 3D convex hull with conflict lists.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};

use super::TriangleMesh;
use crate::error::{Error, Result};

struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(pts: &[Point3<f64>], v: [usize; 3]) -> Self {
        let n = (pts[v[1]] - pts[v[0]]).cross(&(pts[v[2]] - pts[v[0]]));
        let len = n.norm();
        let normal = if len > 0.0 { n / len } else { n };
        Face {
            v,
            normal,
            offset: normal.dot(&pts[v[0]].coords),
            outside: Vec::new(),
            alive: true,
        }
    }

    fn dist(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }
}

/// Convex hull of the mesh's vertices as a closed, outward-oriented mesh.
pub fn convex_hull(mesh: &TriangleMesh) -> Result<TriangleMesh> {
    hull_of_points(mesh.vertices())
}

pub(crate) fn hull_of_points(pts: &[Point3<f64>]) -> Result<TriangleMesh> {
    if pts.len() < 4 {
        return Err(Error::Degenerate("convex hull needs at least 4 points".into()));
    }
    let b = super::Aabb::from_points(pts.iter());
    let scale = b.extent().iter().fold(0.0f64, |m, &e| m.max(e));
    if !(scale > 0.0) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let eps = 1e-11 * scale;

    // initial simplex
    let i0 = (0..pts.len()).min_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x)).unwrap();
    let i1 = (0..pts.len())
        .max_by(|&a, &b| (pts[a] - pts[i0]).norm_squared().total_cmp(&(pts[b] - pts[i0]).norm_squared()))
        .unwrap();
    let d01 = (pts[i1] - pts[i0]).normalize();
    let line_dist = |p: &Point3<f64>| {
        let v = p - pts[i0];
        (v - d01 * v.dot(&d01)).norm()
    };
    let i2 = (0..pts.len()).max_by(|&a, &b| line_dist(&pts[a]).total_cmp(&line_dist(&pts[b]))).unwrap();
    if line_dist(&pts[i2]) <= eps {
        return Err(Error::Degenerate("points are collinear".into()));
    }
    let n = (pts[i1] - pts[i0]).cross(&(pts[i2] - pts[i0])).normalize();
    let plane_dist = |p: &Point3<f64>| n.dot(&(p - pts[i0]));
    let i3 = (0..pts.len())
        .max_by(|&a, &b| plane_dist(&pts[a]).abs().total_cmp(&plane_dist(&pts[b]).abs()))
        .unwrap();
    if plane_dist(&pts[i3]).abs() <= eps {
        return Err(Error::Degenerate("points are coplanar".into()));
    }

    let mut faces: Vec<Face> = Vec::new();
    let simplex = if plane_dist(&pts[i3]) < 0.0 {
        [[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]]
    } else {
        [[i0, i2, i1], [i0, i1, i3], [i1, i2, i3], [i2, i0, i3]]
    };
    for v in simplex {
        faces.push(Face::new(pts, v));
    }
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            edges.insert((f.v[k], f.v[(k + 1) % 3]), fi);
        }
    }
    let used = [i0, i1, i2, i3];
    for (pi, p) in pts.iter().enumerate() {
        if used.contains(&pi) {
            continue;
        }
        if let Some(f) = faces.iter_mut().find(|f| f.dist(p) > eps) {
            f.outside.push(pi);
        }
    }

    let mut work: Vec<usize> = (0..faces.len()).collect();
    while let Some(fi) = work.pop() {
        if !faces[fi].alive || faces[fi].outside.is_empty() {
            continue;
        }
        let eye = *faces[fi]
            .outside
            .iter()
            .max_by(|&&a, &&b| faces[fi].dist(&pts[a]).total_cmp(&faces[fi].dist(&pts[b])))
            .unwrap();
        let ep = pts[eye];

        // visible region by flood fill
        let mut visible = vec![fi];
        let mut is_visible: HashMap<usize, bool> = HashMap::new();
        is_visible.insert(fi, true);
        let mut k = 0;
        while k < visible.len() {
            let f = visible[k];
            k += 1;
            for e in 0..3 {
                let (a, b) = (faces[f].v[e], faces[f].v[(e + 1) % 3]);
                let g = edges[&(b, a)];
                if is_visible.contains_key(&g) {
                    continue;
                }
                let vis = faces[g].dist(&ep) > eps;
                is_visible.insert(g, vis);
                if vis {
                    visible.push(g);
                }
            }
        }
        let mut horizon = Vec::new();
        for &f in &visible {
            for e in 0..3 {
                let (a, b) = (faces[f].v[e], faces[f].v[(e + 1) % 3]);
                if !is_visible[&edges[&(b, a)]] {
                    horizon.push((a, b));
                }
            }
        }
        let mut orphans = Vec::new();
        for &f in &visible {
            faces[f].alive = false;
            orphans.append(&mut faces[f].outside);
            for e in 0..3 {
                edges.remove(&(faces[f].v[e], faces[f].v[(e + 1) % 3]));
            }
        }
        let first_new = faces.len();
        for &(a, b) in &horizon {
            let nf = Face::new(pts, [a, b, eye]);
            let id = faces.len();
            for e in 0..3 {
                edges.insert((nf.v[e], nf.v[(e + 1) % 3]), id);
            }
            faces.push(nf);
        }
        for p in orphans {
            if p == eye {
                continue;
            }
            if let Some(f) = faces[first_new..].iter_mut().find(|f| f.dist(&pts[p]) > eps) {
                f.outside.push(p);
            }
        }
        work.extend(first_new..faces.len());
    }

    let mut map = vec![u32::MAX; pts.len()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for f in faces.iter().filter(|f| f.alive) {
        triangles.push(f.v.map(|i| {
            if map[i] == u32::MAX {
                map[i] = vertices.len() as u32;
                vertices.push(pts[i]);
            }
            map[i]
        }));
    }
    TriangleMesh::new(vertices, triangles)
}
