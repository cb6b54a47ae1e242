use nalgebra::{Point3, Vector3};

use super::{Aabb, TriangleMesh};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub bounds: Aabb,
    /// Leaf: `[start, start + count)` into `tris`. Inner: children at `left` and `left + 1`.
    pub start: u32,
    pub count: u32,
    pub left: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

/// Bounding-volume hierarchy over the triangles of a mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    pub(crate) nodes: Vec<Node>,
    /// Triangle corners in leaf order.
    pub(crate) tris: Vec<[Point3<f64>; 3]>,
    /// Original triangle index for each entry of `tris`.
    pub(crate) ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: usize,
}

fn tri_bounds(t: &[Point3<f64>; 3]) -> Aabb {
    Aabb::from_points(t.iter())
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Point3<f64>; 3]> = (0..mesh.triangles().len()).map(|t| mesh.triangle(t)).collect();
        Self::from_triangles(tris)
    }

    pub fn from_triangles(tris: Vec<[Point3<f64>; 3]>) -> Self {
        let n = tris.len();
        let centroids: Vec<Point3<f64>> = tris
            .iter()
            .map(|t| Point3::from((t[0].coords + t[1].coords + t[2].coords) / 3.0))
            .collect();
        let boxes: Vec<Aabb> = tris.iter().map(tri_bounds).collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        nodes.push(Node {
            bounds: Aabb::empty(),
            start: 0,
            count: 0,
            left: 0,
        });
        if n > 0 {
            let mut stack = vec![(0usize, 0usize, n)];
            while let Some((ni, lo, hi)) = stack.pop() {
                let mut b = Aabb::empty();
                let mut cb = Aabb::empty();
                for &i in &order[lo..hi] {
                    b = b.union(&boxes[i as usize]);
                    cb.grow(&centroids[i as usize]);
                }
                nodes[ni].bounds = b;
                if hi - lo <= LEAF_SIZE {
                    nodes[ni].start = lo as u32;
                    nodes[ni].count = (hi - lo) as u32;
                    continue;
                }
                let e = cb.extent();
                let axis = (0..3).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap();
                let mid = (lo + hi) / 2;
                order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
                    centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
                });
                let left = nodes.len();
                for _ in 0..2 {
                    nodes.push(Node {
                        bounds: Aabb::empty(),
                        start: 0,
                        count: 0,
                        left: 0,
                    });
                }
                nodes[ni].left = left as u32;
                stack.push((left, lo, mid));
                stack.push((left + 1, mid, hi));
            }
        }
        let sorted = order.iter().map(|&i| tris[i as usize]).collect();
        Bvh {
            nodes,
            tris: sorted,
            ids: order,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Closest intersection of the ray `origin + t * dir` with `t > t_min`.
    pub fn raycast(&self, origin: &Point3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<RayHit> {
        if self.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let t_far = best.map_or(f64::INFINITY, |h| h.t);
            if !ray_box(origin, &inv, &node.bounds, t_min, t_far) {
                continue;
            }
            if node.is_leaf() {
                for k in node.start..node.start + node.count {
                    if let Some(t) = ray_triangle(origin, dir, &self.tris[k as usize]) {
                        if t > t_min && t < best.map_or(f64::INFINITY, |h| h.t) {
                            best = Some(RayHit {
                                t,
                                triangle: self.ids[k as usize] as usize,
                            });
                        }
                    }
                }
            } else {
                stack.push(node.left as usize);
                stack.push(node.left as usize + 1);
            }
        }
        best
    }
}

fn ray_box(o: &Point3<f64>, inv: &Vector3<f64>, b: &Aabb, t0: f64, t1: f64) -> bool {
    let (mut lo, mut hi) = (t0, t1);
    for a in 0..3 {
        let mut ta = (b.min[a] - o[a]) * inv[a];
        let mut tb = (b.max[a] - o[a]) * inv[a];
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        // NaN from 0 * inf: treat the slab as unbounded
        if ta.is_nan() || tb.is_nan() {
            continue;
        }
        lo = lo.max(ta);
        hi = hi.min(tb);
        if lo > hi {
            return false;
        }
    }
    true
}

/// Möller–Trumbore; returns the ray parameter of a hit.
fn ray_triangle(o: &Point3<f64>, d: &Vector3<f64>, t: &[Point3<f64>; 3]) -> Option<f64> {
    let e1 = t[1] - t[0];
    let e2 = t[2] - t[0];
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - t[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}
