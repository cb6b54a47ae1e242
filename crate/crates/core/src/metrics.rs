//! Dataset statistics: curvature-entropy complexity, antipodal grasp
//! difficulty, chamfer similarity, k-NN diversity and greedy selection.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Bvh, TriangleMesh};

pub const DEFAULT_POINTS: usize = 2048;
pub const SIMILARITY_SIGMA: f64 = 0.25;
pub const DEFAULT_K: usize = 10;
pub const COMPLEXITY_BINS: usize = 32;
/// Upper edge of the curvature histogram; larger values land in the last bin.
pub const COMPLEXITY_MAX: f64 = 12.8;
pub const DEFAULT_FRICTION: f64 = 0.5;
pub const DEFAULT_GRASP_CANDIDATES: usize = 512;

fn require_watertight(mesh: &TriangleMesh, what: &str) -> Result<()> {
    if mesh.is_empty() || !mesh.is_watertight() {
        return Err(Error::InvalidArgument(format!("{what} needs a watertight mesh")));
    }
    Ok(())
}

/// Per-vertex |mean curvature| from the cotangent Laplacian with barycentric areas.
fn mean_curvatures(mesh: &TriangleMesh) -> Vec<f64> {
    let v = mesh.vertices();
    let mut lap = vec![Vector3::zeros(); v.len()];
    let mut area = vec![0.0; v.len()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let a3 = mesh.triangle_area(t) / 3.0;
        for c in 0..3 {
            let (i, j, k) = (tri[c] as usize, tri[(c + 1) % 3] as usize, tri[(c + 2) % 3] as usize);
            area[i] += a3;
            let (e1, e2) = (v[j] - v[i], v[k] - v[i]);
            let cross = e1.cross(&e2).norm();
            if cross == 0.0 {
                continue;
            }
            // the angle at i weights the opposite edge jk
            let cot = e1.dot(&e2) / cross;
            lap[j] += cot * (v[k] - v[j]);
            lap[k] += cot * (v[j] - v[k]);
        }
    }
    lap.iter()
        .zip(&area)
        .map(|(l, &a)| if a > 0.0 { l.norm() / (4.0 * a) } else { 0.0 })
        .collect()
}

/// RMS distance of the vertices from their mean.
fn rms_radius(points: &[Point3<f64>]) -> f64 {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n;
    (points.iter().map(|p| (p.coords - c).norm_squared()).sum::<f64>() / n).sqrt()
}

/// Entropy (nats) of the histogram of scale-normalized vertex mean curvatures.
pub fn shape_complexity(mesh: &TriangleMesh) -> Result<f64> {
    require_watertight(mesh, "shape complexity")?;
    let r = rms_radius(mesh.vertices());
    if !(r > 0.0) {
        return Err(Error::Degenerate("mesh has no extent".into()));
    }
    let width = COMPLEXITY_MAX / COMPLEXITY_BINS as f64;
    let mut hist = [0usize; COMPLEXITY_BINS];
    let curv = mean_curvatures(mesh);
    for h in &curv {
        let b = ((h * r / width) as usize).min(COMPLEXITY_BINS - 1);
        hist[b] += 1;
    }
    let n = curv.len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Area-weighted uniform surface samples with their triangle indices.
fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(Point3<f64>, usize)>> {
    let areas: Vec<f64> = (0..mesh.triangles().len()).map(|t| mesh.triangle_area(t)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::Degenerate(format!("cannot sample surface: {e}")))?;
    Ok((0..n)
        .map(|_| {
            let t = pick.sample(rng);
            let [a, b, c] = mesh.triangle(t);
            let s = rng.random::<f64>().sqrt();
            let r = rng.random::<f64>();
            let p = a.coords * (1.0 - s) + b.coords * (s * (1.0 - r)) + c.coords * (s * r);
            (Point3::from(p), t)
        })
        .collect())
}

/// One minus the best antipodal grasp quality over `n_candidates` seeded
/// contacts. Each contact is paired with the surface point straight through
/// the part; a pair counts when both normals lie in the friction cone of the
/// grasp axis, and its quality is the cosine of the worse normal-to-axis angle.
pub fn grasp_difficulty(mesh: &TriangleMesh, friction_coefficient: f64, n_candidates: usize, seed: u64) -> Result<f64> {
    require_watertight(mesh, "grasp difficulty")?;
    if !(friction_coefficient > 0.0) {
        return Err(Error::InvalidArgument("friction coefficient must be positive".into()));
    }
    let cone = friction_coefficient.atan().cos();
    let bvh = Bvh::build(mesh);
    let eps = 1e-9 * bvh.bounds().extent().into_iter().fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = sample_surface(mesh, n_candidates, &mut rng)?;
    let best = samples
        .par_iter()
        .filter_map(|(p, t)| {
            let n = mesh.face_normal(*t);
            let d = -n;
            let hit = bvh.raycast(p, &d, eps)?;
            let nq = mesh.face_normal(hit.triangle);
            // the ray leaves along the inward normal, so the first angle is zero
            let q = d.dot(&nq).min(-d.dot(&n));
            (q >= cone).then_some(q.clamp(0.0, 1.0))
        })
        .reduce(|| 0.0, f64::max);
    Ok(1.0 - best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorOptions {
    pub n_points: usize,
    pub seed: u64,
    pub friction_coefficient: f64,
    pub grasp_candidates: usize,
}

impl Default for DescriptorOptions {
    fn default() -> Self {
        Self {
            n_points: DEFAULT_POINTS,
            seed: 0,
            friction_coefficient: DEFAULT_FRICTION,
            grasp_candidates: DEFAULT_GRASP_CANDIDATES,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AssetDescriptor {
    pub uid: String,
    /// Centered at the origin with unit RMS radius.
    pub sample_points: Vec<Point3<f64>>,
    pub complexity: f64,
    pub grasp_difficulty: f64,
    tree: KdTree,
}

impl AssetDescriptor {
    pub fn new(uid: impl Into<String>, mesh: &TriangleMesh, opts: &DescriptorOptions) -> Result<Self> {
        if opts.n_points == 0 {
            return Err(Error::InvalidArgument("descriptor needs at least one point".into()));
        }
        let complexity = shape_complexity(mesh)?;
        let grasp = grasp_difficulty(mesh, opts.friction_coefficient, opts.grasp_candidates, opts.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let raw: Vec<Point3<f64>> = sample_surface(mesh, opts.n_points, &mut rng)?.into_iter().map(|(p, _)| p).collect();
        let n = raw.len() as f64;
        let c = raw.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n;
        let centered: Vec<Vector3<f64>> = raw.iter().map(|p| p.coords - c).collect();
        let rms = (centered.iter().map(|v| v.norm_squared()).sum::<f64>() / n).sqrt();
        if !(rms > 0.0) {
            return Err(Error::Degenerate("surface samples coincide".into()));
        }
        let sample_points: Vec<Point3<f64>> = centered.iter().map(|v| Point3::from(v / rms)).collect();
        Ok(Self {
            uid: uid.into(),
            tree: KdTree::new(&sample_points),
            sample_points,
            complexity,
            grasp_difficulty: grasp,
        })
    }
}

/// The 24 rotations of the cube, as signed permutation matrices.
pub fn cube_rotations() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in PERMS {
        for signs in 0..8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

fn mean_nn(points: &[Point3<f64>], rot: &Matrix3<f64>, tree: &KdTree) -> f64 {
    points.iter().map(|p| tree.nearest(&(rot * p.coords)).sqrt()).sum::<f64>() / points.len() as f64
}

/// Symmetric mean closest-point distance, minimized over the cube rotations of `a`.
pub fn chamfer(a: &AssetDescriptor, b: &AssetDescriptor) -> f64 {
    let mut best = f64::INFINITY;
    for r in cube_rotations() {
        let d = 0.5 * (mean_nn(&a.sample_points, &r, &b.tree) + mean_nn(&b.sample_points, &r.transpose(), &a.tree));
        best = best.min(d);
        if best == 0.0 {
            break;
        }
    }
    best
}

/// `exp(−chamfer/σ)`, evaluated in a fixed argument order so it is exactly symmetric.
pub fn similarity(a: &AssetDescriptor, b: &AssetDescriptor) -> f64 {
    if a.sample_points.len() != b.sample_points.len() {
        log::warn!("similarity between descriptors with different point counts");
    }
    let key = |d: &AssetDescriptor| (d.uid.clone(), d.sample_points.first().map(|p| [p.x, p.y, p.z]));
    let (x, y) = if key(a).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Greater) { (b, a) } else { (a, b) };
    (-chamfer(x, y) / SIMILARITY_SIGMA).exp()
}

/// Full similarity matrix, computed in parallel over pairs.
pub fn similarity_matrix(descriptors: &[AssetDescriptor]) -> Vec<Vec<f64>> {
    let n = descriptors.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs.par_iter().map(|&(i, j)| similarity(&descriptors[i], &descriptors[j])).collect();
    let mut m = vec![vec![1.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(vals) {
        m[i][j] = v;
        m[j][i] = v;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub per_asset_similarity: BTreeMap<String, f64>,
    pub overall_similarity: f64,
    pub diversity: f64,
}

/// Mean of the `k` largest entries of row `i` restricted to `members`, self excluded.
fn knn_similarity(sim: &[Vec<f64>], members: &[usize], i: usize, k: usize) -> f64 {
    let mut row: Vec<f64> = members.iter().filter(|&&j| j != i).map(|&j| sim[i][j]).collect();
    row.sort_by(|a, b| b.total_cmp(a));
    row.truncate(k);
    row.iter().sum::<f64>() / row.len() as f64
}

fn subset_diversity(sim: &[Vec<f64>], members: &[usize], k: usize) -> f64 {
    let k = k.min(members.len() - 1);
    let mut vals: Vec<f64> = members.iter().map(|&i| knn_similarity(sim, members, i, k)).collect();
    // sum in a fixed order so the value does not depend on insertion order
    vals.sort_by(|a, b| a.total_cmp(b));
    1.0 - vals.iter().sum::<f64>() / vals.len() as f64
}

fn check_unique(descriptors: &[AssetDescriptor]) -> Result<()> {
    let mut uids: Vec<&str> = descriptors.iter().map(|d| d.uid.as_str()).collect();
    uids.sort_unstable();
    if let Some(w) = uids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate uid {}", w[0])));
    }
    Ok(())
}

/// One minus the mean, over assets, of the average similarity to their `k` most similar peers.
pub fn dataset_diversity(descriptors: &[AssetDescriptor], k: usize) -> Result<DiversityReport> {
    if k == 0 || descriptors.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "diversity with k = {k} needs at least {} assets, got {}",
            k + 1,
            descriptors.len()
        )));
    }
    check_unique(descriptors)?;
    let sim = similarity_matrix(descriptors);
    let all: Vec<usize> = (0..descriptors.len()).collect();
    let per: BTreeMap<String, f64> = all
        .iter()
        .map(|&i| (descriptors[i].uid.clone(), knn_similarity(&sim, &all, i, k)))
        .collect();
    let overall = per.values().sum::<f64>() / per.len() as f64;
    Ok(DiversityReport {
        per_asset_similarity: per,
        overall_similarity: overall,
        diversity: 1.0 - overall,
    })
}

/// Greedy diversity-maximizing subset of `n` uids, in selection order.
pub fn greedy_select(descriptors: &[AssetDescriptor], n: usize, k: usize) -> Result<Vec<String>> {
    if n < 2 {
        return Err(Error::InvalidArgument("greedy selection needs n >= 2".into()));
    }
    if n > descriptors.len() {
        return Err(Error::InvalidArgument(format!("cannot select {n} of {} assets", descriptors.len())));
    }
    check_unique(descriptors)?;
    let sim = similarity_matrix(descriptors);
    Ok(greedy_from_matrix(&sim, descriptors, n, k)
        .into_iter()
        .map(|i| descriptors[i].uid.clone())
        .collect())
}

fn greedy_from_matrix(sim: &[Vec<f64>], descriptors: &[AssetDescriptor], n: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..descriptors.len()).collect();
    order.sort_by(|&a, &b| descriptors[a].uid.cmp(&descriptors[b].uid));
    let mut seed = (order[0], order[1]);
    for (x, &i) in order.iter().enumerate() {
        for &j in &order[x + 1..] {
            if sim[i][j] < sim[seed.0][seed.1] {
                seed = (i, j);
            }
        }
    }
    let mut chosen = vec![seed.0, seed.1];
    while chosen.len() < n {
        let mut best: Option<(usize, f64)> = None;
        let left: Vec<usize> = order.iter().copied().filter(|c| !chosen.contains(c)).collect();
        for c in left {
            chosen.push(c);
            let d = subset_diversity(sim, &chosen, k);
            chosen.pop();
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((c, d));
            }
        }
        chosen.push(best.expect("candidates remain").0);
    }
    chosen
}

/// Static 3-d tree over a point set, for nearest-neighbour queries.
#[derive(Debug, Clone)]
struct KdTree {
    /// Points reordered so every range's median is its splitting node.
    pts: Vec<[f64; 3]>,
}

impl KdTree {
    fn new(points: &[Point3<f64>]) -> Self {
        let mut pts: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self::build(&mut pts, 0);
        Self { pts }
    }

    fn build(pts: &mut [[f64; 3]], depth: usize) {
        if pts.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = pts.len() / 2;
        pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
        let (lo, hi) = pts.split_at_mut(mid);
        Self::build(lo, depth + 1);
        Self::build(&mut hi[1..], depth + 1);
    }

    /// Squared distance to the nearest stored point.
    fn nearest(&self, q: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        Self::search(&self.pts, [q.x, q.y, q.z], 0, &mut best);
        best
    }

    fn search(pts: &[[f64; 3]], q: [f64; 3], depth: usize, best: &mut f64) {
        if pts.is_empty() {
            return;
        }
        let mid = pts.len() / 2;
        let p = pts[mid];
        let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
        if d < *best {
            *best = d;
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { (&pts[..mid], &pts[mid + 1..]) } else { (&pts[mid + 1..], &pts[..mid]) };
        Self::search(near, q, depth + 1, best);
        if diff * diff < *best {
            Self::search(far, q, depth + 1, best);
        }
    }
}
