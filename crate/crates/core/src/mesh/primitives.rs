//! Procedural test and demo solids. All outputs are watertight with outward
//! orientation. Solids built from angular loops share the same angular sampling
//! so rings between loops are simple quad strips.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Point3;

use super::TriangleMesh;

/// Cross-section shape sampled on an angular grid around the z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Circle { radius: f64 },
    /// Axis-aligned square with the given half-width.
    Square { half: f64 },
}

impl Profile {
    fn radius_at(&self, theta: f64) -> f64 {
        match *self {
            Profile::Circle { radius } => radius,
            Profile::Square { half } => half / theta.cos().abs().max(theta.sin().abs()),
        }
    }
}

struct Builder {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    segments: usize,
}

impl Builder {
    fn new(segments: usize) -> Self {
        assert!(segments >= 8 && segments % 8 == 0, "segments must be a multiple of 8");
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            segments,
        }
    }

    fn vertex(&mut self, p: Point3<f64>) -> u32 {
        self.vertices.push(p);
        (self.vertices.len() - 1) as u32
    }

    fn ring(&mut self, profile: Profile, z: f64) -> Vec<u32> {
        (0..self.segments)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / self.segments as f64;
                let r = profile.radius_at(th);
                self.vertex(Point3::new(r * th.cos(), r * th.sin(), z))
            })
            .collect()
    }

    /// Side wall between a lower and an upper loop; `outward` selects whether
    /// the normal points away from the z axis.
    fn wall(&mut self, lower: &[u32], upper: &[u32], outward: bool) {
        let n = lower.len();
        for i in 0..n {
            let j = (i + 1) % n;
            let (l0, l1, u0, u1) = (lower[i], lower[j], upper[i], upper[j]);
            if outward {
                self.triangles.push([l0, l1, u1]);
                self.triangles.push([l0, u1, u0]);
            } else {
                self.triangles.push([l0, u1, l1]);
                self.triangles.push([l0, u0, u1]);
            }
        }
    }

    /// Flat annulus between an inner and outer loop at the same height.
    fn annulus(&mut self, inner: &[u32], outer: &[u32], up: bool) {
        let n = inner.len();
        for i in 0..n {
            let j = (i + 1) % n;
            if up {
                self.triangles.push([inner[i], outer[i], outer[j]]);
                self.triangles.push([inner[i], outer[j], inner[j]]);
            } else {
                self.triangles.push([inner[i], outer[j], outer[i]]);
                self.triangles.push([inner[i], inner[j], outer[j]]);
            }
        }
    }

    fn disk(&mut self, ring: &[u32], z: f64, up: bool) {
        let c = self.vertex(Point3::new(0.0, 0.0, z));
        let n = ring.len();
        for i in 0..n {
            let j = (i + 1) % n;
            if up {
                self.triangles.push([c, ring[i], ring[j]]);
            } else {
                self.triangles.push([c, ring[j], ring[i]]);
            }
        }
    }

    fn finish(self) -> TriangleMesh {
        TriangleMesh::new(self.vertices, self.triangles).expect("builder produces valid indices")
    }
}

/// Axis-aligned box with 8 vertices and 12 triangles.
pub fn box_mesh(min: [f64; 3], max: [f64; 3]) -> TriangleMesh {
    let v: Vec<Point3<f64>> = (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            )
        })
        .collect();
    let t = vec![
        [0, 2, 1], [1, 2, 3], // -z
        [4, 5, 6], [5, 7, 6], // +z
        [0, 1, 4], [1, 5, 4], // -y
        [2, 6, 3], [3, 6, 7], // +y
        [0, 4, 2], [2, 4, 6], // -x
        [1, 3, 5], [3, 7, 5], // +x
    ];
    TriangleMesh::new(v, t).expect("valid box")
}

/// Cylinder of the given radius standing on z = 0.
pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
    stacked(&[(Profile::Circle { radius }, height)], segments)
}

/// Stack of prisms with a shared angular sampling, starting at z = 0.
/// Each level is `(profile, height)`.
pub fn stacked(levels: &[(Profile, f64)], segments: usize) -> TriangleMesh {
    assert!(!levels.is_empty());
    let mut b = Builder::new(segments);
    let mut z = 0.0;
    let mut below = b.ring(levels[0].0, z);
    b.disk(&below, z, false);
    for (k, &(profile, h)) in levels.iter().enumerate() {
        let lower = if k == 0 { below.clone() } else { b.ring(profile, z) };
        if k > 0 {
            let prev = levels[k - 1].0;
            let shrinking = profile.radius_at(0.0) < prev.radius_at(0.0);
            if shrinking {
                b.annulus(&lower, &below, true);
            } else {
                b.annulus(&below, &lower, false);
            }
        }
        z += h;
        let upper = b.ring(profile, z);
        b.wall(&lower, &upper, true);
        below = upper;
    }
    b.disk(&below, z, true);
    b.finish()
}

/// Straight prism over a polygon that is star-shaped with respect to the
/// origin, counter-clockwise, spanning `z0..z1`.
pub fn prism(polygon: &[[f64; 2]], z0: f64, z1: f64) -> TriangleMesh {
    let n = polygon.len() as u32;
    let mut v: Vec<Point3<f64>> = Vec::with_capacity(2 * polygon.len() + 2);
    v.extend(polygon.iter().map(|p| Point3::new(p[0], p[1], z0)));
    v.extend(polygon.iter().map(|p| Point3::new(p[0], p[1], z1)));
    v.push(Point3::new(0.0, 0.0, z0));
    v.push(Point3::new(0.0, 0.0, z1));
    let (cb, ct) = (2 * n, 2 * n + 1);
    let mut t = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        t.push([cb, j, i]);
        t.push([ct, n + i, n + j]);
        t.push([i, j, n + j]);
        t.push([i, n + j, n + i]);
    }
    TriangleMesh::new(v, t).expect("valid prism")
}

/// Plus-shaped outline: two bars of half-width `half_width` reaching `arm`
/// from the origin.
pub fn plus_polygon(arm: f64, half_width: f64) -> Vec<[f64; 2]> {
    let (a, w) = (arm, half_width);
    vec![
        [a, -w], [a, w], [w, w], [w, a], [-w, a], [-w, w],
        [-a, w], [-a, -w], [-w, -w], [-w, -a], [w, -a], [w, -w],
    ]
}

/// Square block `[-half, half]² × [0, height]` with a hole cut from the top.
/// Each hole step is `(profile, depth_below_top)` with increasing depths;
/// successive profiles should shrink (counterbore style).
pub fn hole_block(half: f64, height: f64, steps: &[(Profile, f64)], segments: usize) -> TriangleMesh {
    assert!(!steps.is_empty());
    let mut b = Builder::new(segments);
    let outer = Profile::Square { half };
    let bottom = b.ring(outer, 0.0);
    let top = b.ring(outer, height);
    b.wall(&bottom, &top, true);
    b.disk(&bottom, 0.0, false);

    let mut z = height;
    let mut above = b.ring(steps[0].0, z);
    b.annulus(&above, &top, true);
    for (k, &(profile, depth)) in steps.iter().enumerate() {
        let upper = if k == 0 { above.clone() } else { b.ring(profile, z) };
        if k > 0 {
            b.annulus(&upper, &above, true);
        }
        z = height - depth;
        let lower = b.ring(profile, z);
        b.wall(&lower, &upper, false);
        above = lower;
    }
    b.disk(&above, z, true);
    b.finish()
}

/// Square block with a square pocket: `half`-wide block, `pocket_half`-wide
/// pocket of the given depth.
pub fn pocket_block(half: f64, height: f64, pocket_half: f64, depth: f64) -> TriangleMesh {
    hole_block(half, height, &[(Profile::Square { half: pocket_half }, depth)], 8)
}

/// Icosphere centered at the origin.
pub fn sphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Point3<f64>> = [
        [-1.0, g, 0.0], [1.0, g, 0.0], [-1.0, -g, 0.0], [1.0, -g, 0.0],
        [0.0, -1.0, g], [0.0, 1.0, g], [0.0, -1.0, -g], [0.0, 1.0, -g],
        [g, 0.0, -1.0], [g, 0.0, 1.0], [-g, 0.0, -1.0], [-g, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Point3::from(nalgebra::Vector3::from(*p).normalize()))
    .collect();
    let mut t: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, v: &mut Vec<Point3<f64>>| -> u32 {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (v[a as usize].coords + v[b as usize].coords).normalize();
                v.push(Point3::from(m));
                (v.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(t.len() * 4);
        for &[a, b, c] in &t {
            let ab = mid(a, b, &mut v);
            let bc = mid(b, c, &mut v);
            let ca = mid(c, a, &mut v);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        t = next;
    }
    for p in &mut v {
        p.coords *= radius;
    }
    TriangleMesh::new(v, t).expect("valid sphere")
}

/// Cube `[-half, half]³` whose faces are split into `n × n` quads.
pub fn subdivided_cube(half: f64, n: usize) -> TriangleMesh {
    let mut v = Vec::new();
    let mut t = Vec::new();
    // (normal axis, sign)
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
            let base = v.len() as u32;
            for i in 0..=n {
                for j in 0..=n {
                    let mut p = [0.0; 3];
                    p[axis] = sign * half;
                    p[u] = -half + 2.0 * half * i as f64 / n as f64;
                    p[w] = -half + 2.0 * half * j as f64 / n as f64;
                    v.push(Point3::new(p[0], p[1], p[2]));
                }
            }
            let idx = |i: usize, j: usize| base + (i * (n + 1) + j) as u32;
            for i in 0..n {
                for j in 0..n {
                    let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                    // u × w = axis direction, so (a, b, c) faces +axis
                    if sign > 0.0 {
                        t.push([a, b, c]);
                        t.push([a, c, d]);
                    } else {
                        t.push([a, c, b]);
                        t.push([a, d, c]);
                    }
                }
            }
        }
    }
    TriangleMesh::new(v, t).expect("valid cube").cleaned()
}
