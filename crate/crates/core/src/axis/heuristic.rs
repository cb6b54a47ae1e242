//! Offline axis fallback: try the six axis directions with the descent sweep.

use nalgebra::Vector3;

use super::{parse_axis, AxisReport, AxisSource, Role, AXIS_ORDER};
use crate::contact::{
    align_to_axis, classify_contact_faces, descent_sweep, extraction_grid, CONTACT_BAND_CELLS,
};
use crate::error::{Error, Result};
use crate::mesh::{convex_hull, TriangleMesh};
use crate::voxel::{voxelize, Fill, OccupancyGrid};

/// A sweep leaves a cavity when its hull-clipped free cells below the asset
/// top exceed this fraction of the asset's solid cells.
pub const CAVITY_FRACTION: f64 = 0.01;

struct Sweep {
    aligned: TriangleMesh,
    asset: OccupancyGrid,
    delta: f64,
}

impl Sweep {
    fn new(mesh: &TriangleMesh, direction: &Vector3<f64>, resolution: usize) -> Result<Self> {
        let (aligned, _) = align_to_axis(mesh, direction)?;
        let cfg = extraction_grid(&aligned, resolution)?;
        let asset = voxelize(&aligned, &cfg, Fill::Solid)?.grid;
        Ok(Self {
            delta: CONTACT_BAND_CELLS * cfg.cell_size(),
            aligned,
            asset,
        })
    }

    /// Whether a cavity opens along this direction, and the contact area the
    /// hull-clipped sweep finds.
    fn cavity(&self) -> Result<(bool, f64)> {
        let hull = match convex_hull(&self.aligned) {
            Ok(h) => voxelize(&h, self.asset.config(), Fill::Solid)?.grid,
            Err(Error::Degenerate(_)) => self.asset.clone(),
            Err(e) => return Err(e),
        };
        let free = descent_sweep(&self.asset, Role::Receptacle, Some(&hull))?;
        let k_top = self.asset.occupied_index_bounds().map_or(0, |(_, hi)| hi[2]);
        let n = free.resolution();
        let mut cells = 0usize;
        for k in 0..=k_top {
            for j in 0..n {
                cells += free
                    .row(j, k)
                    .iter()
                    .zip(hull.row(j, k))
                    .map(|(a, b)| (a & b).count_ones() as usize)
                    .sum::<usize>();
            }
        }
        if (cells as f64) <= CAVITY_FRACTION * self.asset.count() as f64 {
            return Ok((false, 0.0));
        }
        Ok((true, classify_contact_faces(&self.aligned, &free, self.delta).contact_area()))
    }

    fn plug_area(&self) -> Result<f64> {
        let free = descent_sweep(&self.asset, Role::Plug, None)?;
        Ok(classify_contact_faces(&self.aligned, &free, self.delta).contact_area())
    }
}

/// Contact area found by sweeping along `direction`, or 0 when the sweep
/// cannot enter a cavity of the asset along it.
pub fn score_axis(mesh: &TriangleMesh, direction: &Vector3<f64>, resolution: usize) -> Result<f64> {
    let (open, area) = Sweep::new(mesh, direction, resolution)?.cavity()?;
    Ok(if open { area } else { 0.0 })
}

/// First index of the maximum, so ties keep the fixed axis order.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Picks the best of the six axis directions. Any direction opening onto a
/// cavity makes the asset a receptacle; otherwise it is a plug and the
/// direction exposing the most contact area wins.
pub fn heuristic_axis(mesh: &TriangleMesh, resolution: usize) -> Result<AxisReport> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("heuristic axis of an empty mesh".into()));
    }
    let dirs: Vec<Vector3<f64>> = AXIS_ORDER.iter().map(|l| parse_axis(l).unwrap()).collect();
    let sweeps = dirs
        .iter()
        .map(|d| Sweep::new(mesh, d, resolution))
        .collect::<Result<Vec<_>>>()?;
    let cavity = sweeps.iter().map(Sweep::cavity).collect::<Result<Vec<_>>>()?;
    let (role, scores) = if cavity.iter().any(|c| c.0) {
        // a cavity without classified area still beats directions without one
        let tiny = f64::MIN_POSITIVE;
        (Role::Receptacle, cavity.iter().map(|&(open, a)| if open { a.max(tiny) } else { 0.0 }).collect())
    } else {
        (Role::Plug, sweeps.iter().map(Sweep::plug_area).collect::<Result<Vec<_>>>()?)
    };
    let best = argmax(&scores);
    let total: f64 = scores.iter().sum();
    let confidence = if total > 0.0 { scores[best] / total } else { 0.0 };
    log::debug!("heuristic axis scores {scores:?} -> {} {role}", AXIS_ORDER[best]);
    AxisReport::new(role, dirs[best], AxisSource::Heuristic, Some(confidence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::{self, Profile};
    use crate::mesh::RigidTransform;
    use nalgebra::{Matrix3, Rotation3};

    fn pocket() -> TriangleMesh {
        primitives::pocket_block(0.5, 0.5, 0.25, 0.25)
    }

    #[test]
    fn pocket_scores() {
        let m = pocket();
        assert!(score_axis(&m, &-Vector3::z(), 32).unwrap() > 0.0);
        assert_eq!(score_axis(&m, &Vector3::x(), 32).unwrap(), 0.0);
        assert_eq!(score_axis(&m, &Vector3::z(), 32).unwrap(), 0.0);

        // relabelling the vertices does not matter
        let nv = m.vertices().len() as u32;
        let perm = |i: u32| (i * 7 + 3) % nv;
        let mut verts = m.vertices().to_vec();
        for (i, v) in m.vertices().iter().enumerate() {
            verts[perm(i as u32) as usize] = *v;
        }
        let tris: Vec<[u32; 3]> = m.triangles().iter().map(|t| t.map(perm)).collect();
        let shuffled = TriangleMesh::new(verts, tris).unwrap();
        assert_eq!(
            score_axis(&m, &-Vector3::z(), 32).unwrap(),
            score_axis(&shuffled, &-Vector3::z(), 32).unwrap()
        );
    }

    #[test]
    fn hole_block_is_receptacle_along_z() {
        let m = primitives::hole_block(0.5, 0.6, &[(Profile::Circle { radius: 0.2 }, 0.4)], 32);
        let r = heuristic_axis(&m, 64).unwrap();
        assert_eq!(r.role, Role::Receptacle);
        assert!(r.axis.z.abs() > 1.0 - 1e-12);
        assert_eq!(r.source, AxisSource::Heuristic);
    }

    #[test]
    fn cylinder_and_sphere_are_plugs() {
        let r = heuristic_axis(&primitives::cylinder(0.3, 0.8, 32), 48).unwrap();
        assert_eq!(r.role, Role::Plug);
        let s = primitives::sphere(0.5, 2);
        let a = heuristic_axis(&s, 32).unwrap();
        let b = heuristic_axis(&s, 32).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.role, Role::Plug);
    }

    #[test]
    fn rotation_consistent_on_pocket() {
        let rot: Matrix3<f64> = *Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2).matrix();
        let rot = rot.map(|v| v.round());
        let m = pocket();
        let base = heuristic_axis(&m, 32).unwrap();
        assert_eq!(base.axis, -Vector3::z());
        let turned = heuristic_axis(&m.transformed(&RigidTransform::rotation(rot)), 32).unwrap();
        assert_eq!(turned.role, Role::Receptacle);
        assert!((turned.axis - rot * base.axis).norm() < 1e-12);
    }

    #[test]
    fn argmax_ties_and_scaling() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0; 6]), 0);
        let s = [0.2, 0.9, 0.5, 0.9, 0.1, 0.0];
        let scaled: Vec<f64> = s.iter().map(|v| v * 7.5).collect();
        assert_eq!(argmax(&s), argmax(&scaled));
    }
}
