use std::collections::HashMap;

use super::TriangleMesh;

/// Adjacent triangles whose normals differ by at most this angle share a patch.
pub const DIHEDRAL_THRESHOLD_DEG: f64 = 20.0;

/// Groups triangles into logical faces by flood-filling across edges whose
/// dihedral deviation is within `threshold_deg`. Labels are dense and ordered
/// by the lowest triangle index of each region.
pub(crate) fn region_grow(mesh: &TriangleMesh, threshold_deg: f64) -> Vec<u32> {
    let tris = mesh.triangles();
    let mut edge_tris: HashMap<(u32, u32), Vec<u32>> = HashMap::with_capacity(tris.len() * 2);
    for (t, tri) in tris.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            edge_tris
                .entry((a.min(b), a.max(b)))
                .or_default()
                .push(t as u32);
        }
    }
    let normals: Vec<_> = (0..tris.len()).map(|t| mesh.face_normal(t)).collect();
    let cos_thr = threshold_deg.to_radians().cos();

    let mut labels = vec![u32::MAX; tris.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for seed in 0..tris.len() {
        if labels[seed] != u32::MAX {
            continue;
        }
        labels[seed] = next;
        stack.push(seed);
        while let Some(t) = stack.pop() {
            let tri = tris[t];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                for &n in &edge_tris[&(a.min(b), a.max(b))] {
                    let n = n as usize;
                    if labels[n] == u32::MAX && normals[t].dot(&normals[n]) >= cos_thr {
                        labels[n] = next;
                        stack.push(n);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}
