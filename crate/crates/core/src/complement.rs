//! Mating-asset generation: a file handoff for external generators and a
//! procedural carver working on the descent free region.
//!
//! Handoff layout: `request.json` (the request without its mesh),
//! `contact.obj` (the canonical contact mesh), and any number of
//! `candidate_<k>.obj` written back by the external generator in the same
//! canonical frame.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::axis::Role;
use crate::clearance::{AssemblyPair, Provenance};
use crate::contact::{align_to_axis, column_tops, ContactSurfaceSet, canonicalize_for_completion};
use crate::error::{Error, Result};
use crate::mesh::{load_mesh, save_mesh, Aabb, MeshFormat, RigidTransform, TriangleMesh};
use crate::voxel::{marching_cubes, voxelize, Fill, GridConfig, OccupancyGrid};

/// Candidates overlapping the original by more than this fraction of its volume are mirrors.
pub const MIRROR_OVERLAP_FRACTION: f64 = 0.25;
/// Grid used to measure candidate overlap.
pub const MIRROR_RESOLUTION: usize = 64;
/// Seeded housing jitter range, as factors on wall thickness and height.
pub const HOUSING_JITTER: (f64, f64) = (0.75, 1.5);
pub const REQUEST_FILE: &str = "request.json";
pub const CONTACT_FILE: &str = "contact.obj";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HousingShape {
    Box,
    CylinderShell,
}

impl std::str::FromStr for HousingShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Self::Box),
            "cylinder_shell" | "cylinder-shell" => Ok(Self::CylinderShell),
            _ => Err(Error::InvalidArgument(format!("unknown housing shape {s:?}"))),
        }
    }
}

/// Housing around the contact footprint. Lengths in meters, in the asset's units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HousingParams {
    pub shape: HousingShape,
    pub wall_thickness: f64,
    /// Measured up from the lowest contact point.
    pub height: f64,
}

impl HousingParams {
    /// Wall and height scaled by independent seeded factors in [`HOUSING_JITTER`].
    pub fn jittered(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi) = HOUSING_JITTER;
        Self {
            shape: self.shape,
            wall_thickness: self.wall_thickness * rng.random_range(lo..=hi),
            height: self.height * rng.random_range(lo..=hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    #[serde(skip)]
    pub contact_mesh: TriangleMesh,
    pub role_to_generate: Role,
    pub seed: u64,
    pub housing_params: HousingParams,
    /// Canonical frame back to the original asset frame.
    pub to_asset: RigidTransform,
}

impl CompletionRequest {
    /// Request for the counterpart of an asset whose contacts are `set`
    /// (aligned by `alignment`, original to aligned).
    pub fn from_contacts(
        set: &ContactSurfaceSet,
        alignment: &RigidTransform,
        asset_role: Role,
        seed: u64,
        housing_params: HousingParams,
    ) -> Result<Self> {
        let (contact_mesh, canonical) = canonicalize_for_completion(set)?;
        let req = Self {
            contact_mesh,
            role_to_generate: asset_role.other(),
            seed,
            housing_params,
            to_asset: canonical.inverse().then(&alignment.inverse()),
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if self.contact_mesh.is_empty() {
            return Err(Error::EmptyInput("completion request without a contact mesh".into()));
        }
        let zmin = self.contact_mesh.bounds().min[2];
        if (zmin + 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("contact mesh must start at z = -1, starts at {zmin}")));
        }
        let h = &self.housing_params;
        if !(h.wall_thickness > 0.0 && h.height > 0.0) {
            return Err(Error::InvalidArgument("housing wall and height must be positive".into()));
        }
        self.to_asset.validate()
    }

    /// Contact mesh in the original asset frame.
    pub fn contact_in_asset(&self) -> TriangleMesh {
        self.contact_mesh.transformed(&self.to_asset)
    }
}

pub fn export_completion_request(req: &CompletionRequest, dir: &Path) -> Result<()> {
    req.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(req)?;
    let path = dir.join(REQUEST_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    save_mesh(&req.contact_mesh, &dir.join(CONTACT_FILE), MeshFormat::Obj)
}

pub fn load_completion_request(dir: &Path) -> Result<CompletionRequest> {
    let path = dir.join(REQUEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut req: CompletionRequest = serde_json::from_str(&text)?;
    req.contact_mesh = load_mesh(&dir.join(CONTACT_FILE), MeshFormat::Obj)?;
    req.validate()?;
    Ok(req)
}

/// Disassembly direction of the plug, given the direction the counterpart
/// travels onto an asset of `asset_role`.
pub fn plug_axis(axis: &Vector3<f64>, asset_role: Role) -> Vector3<f64> {
    match asset_role {
        Role::Plug => *axis,
        Role::Receptacle => -axis,
    }
}

/// Pairs `asset` with a counterpart in the same frame.
pub fn make_pair(asset: &TriangleMesh, asset_role: Role, other: TriangleMesh, axis: &Vector3<f64>, provenance: Provenance) -> Result<AssemblyPair> {
    let (plug, receptacle) = match asset_role {
        Role::Plug => (asset.clone(), other),
        Role::Receptacle => (other, asset.clone()),
    };
    AssemblyPair::new(plug, receptacle, RigidTransform::identity(), plug_axis(axis, asset_role), provenance)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Malformed(String),
    /// Overlap with the original, in percent of its volume.
    Mirror(u32),
}

#[derive(Debug, Clone)]
pub struct ImportOutcome {
    pub accepted: Vec<AssemblyPair>,
    pub rejected: Vec<(PathBuf, Rejection)>,
}

/// Fraction of `original`'s solid cells also covered by `candidate`.
pub fn overlap_fraction(original: &TriangleMesh, candidate: &TriangleMesh, resolution: usize) -> Result<f64> {
    let b = original.bounds().union(&candidate.bounds());
    let config = GridConfig::fit(&b, resolution, 0.0, 1.0)?;
    let a = voxelize(original, &config, Fill::Solid)?.grid;
    let c = voxelize(candidate, &config, Fill::Solid)?.grid;
    if a.is_empty() {
        return Err(Error::Degenerate("original covers no cells".into()));
    }
    Ok(a.overlap_count(&c)? as f64 / a.count() as f64)
}

/// Loads every `candidate_*.obj` in `dir` (sorted by name), maps it into the
/// original frame and screens out mirrors. Unreadable files are skipped.
pub fn import_completion_result(dir: &Path, original: &TriangleMesh, axis: &Vector3<f64>) -> Result<ImportOutcome> {
    let req = load_completion_request(dir)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("candidate_") && n.to_ascii_lowercase().ends_with(".obj"))
        })
        .collect();
    if paths.is_empty() {
        return Err(Error::EmptyInput(format!("no candidate_*.obj in {}", dir.display())));
    }
    paths.sort();
    let asset_role = req.role_to_generate.other();
    let mut out = ImportOutcome {
        accepted: Vec::new(),
        rejected: Vec::new(),
    };
    for path in paths {
        let mesh = match load_mesh(&path, MeshFormat::Obj) {
            Ok(m) if !m.is_empty() => m,
            Ok(_) => {
                log::warn!("skipping {}: no triangles", path.display());
                out.rejected.push((path, Rejection::Malformed("no triangles".into())));
                continue;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                out.rejected.push((path, Rejection::Malformed(e.to_string())));
                continue;
            }
        };
        let placed = mesh.transformed(&req.to_asset);
        let overlap = overlap_fraction(original, &placed, MIRROR_RESOLUTION)?;
        if overlap > MIRROR_OVERLAP_FRACTION {
            log::info!("rejecting {}: overlaps the original by {:.0}%", path.display(), overlap * 100.0);
            out.rejected.push((path, Rejection::Mirror((overlap * 100.0).round() as u32)));
            continue;
        }
        out.accepted.push(make_pair(original, asset_role, placed, axis, Provenance::External)?);
    }
    Ok(out)
}

/// Housing solid in the aligned frame, as a cell-center predicate.
#[derive(Debug, Clone, Copy)]
struct Housing {
    center: [f64; 2],
    half: [f64; 2],
    radius: f64,
    z: [f64; 2],
    shape: HousingShape,
}

impl Housing {
    fn around(footprint: &TriangleMesh, params: &HousingParams) -> Self {
        let b = footprint.bounds();
        let c = b.center();
        let e = b.extent();
        let radius = footprint
            .vertices()
            .iter()
            .map(|v| (v.x - c.x).hypot(v.y - c.y))
            .fold(0.0, f64::max);
        let w = params.wall_thickness;
        Self {
            center: [c.x, c.y],
            half: [0.5 * e[0] + w, 0.5 * e[1] + w],
            radius: radius + w,
            z: [b.min[2], b.min[2] + params.height],
            shape: params.shape,
        }
    }

    fn bounds(&self) -> Aabb {
        let [hx, hy] = match self.shape {
            HousingShape::Box => self.half,
            HousingShape::CylinderShell => [self.radius; 2],
        };
        Aabb::new(
            [self.center[0] - hx, self.center[1] - hy, self.z[0]],
            [self.center[0] + hx, self.center[1] + hy, self.z[1]],
        )
    }

    fn contains(&self, p: &Point3<f64>) -> bool {
        if p.z < self.z[0] || p.z > self.z[1] {
            return false;
        }
        let (dx, dy) = (p.x - self.center[0], p.y - self.center[1]);
        match self.shape {
            HousingShape::Box => dx.abs() <= self.half[0] && dy.abs() <= self.half[1],
            HousingShape::CylinderShell => dx.hypot(dy) <= self.radius,
        }
    }
}

fn aligned_housing(asset: &TriangleMesh, axis: &Vector3<f64>, req: &CompletionRequest) -> Result<(TriangleMesh, RigidTransform, Housing)> {
    req.validate()?;
    let (aligned, alignment) = align_to_axis(asset, axis)?;
    let footprint = req.contact_in_asset().transformed(&alignment);
    Ok((aligned, alignment, Housing::around(&footprint, &req.housing_params)))
}

/// Grid in the aligned frame (axis along −z) covering the asset and its housing.
pub fn complement_grid(asset: &TriangleMesh, axis: &Vector3<f64>, req: &CompletionRequest, resolution: usize) -> Result<GridConfig> {
    let (aligned, _, housing) = aligned_housing(asset, axis, req)?;
    GridConfig::fit(&aligned.bounds().union(&housing.bounds()), resolution, 0.0, 2.0)
}

/// Carves the counterpart of `asset`: every cell above the asset's column
/// tops that lies in the housing. `config` is in the aligned frame (see
/// [`complement_grid`]); the result is in the asset's frame.
pub fn generate_complement(asset: &TriangleMesh, axis: &Vector3<f64>, req: &CompletionRequest, config: &GridConfig) -> Result<TriangleMesh> {
    if asset.is_empty() {
        return Err(Error::EmptyInput("cannot complete an empty asset".into()));
    }
    let (aligned, alignment, housing) = aligned_housing(asset, axis, req)?;
    let solid = voxelize(&aligned, config, Fill::Solid)?.grid;
    let b = carve(&solid, &housing);
    if b.is_empty() {
        return Err(Error::Generation("housing does not meet the free region".into()));
    }
    Ok(marching_cubes(&b)?.transformed(&alignment.inverse()))
}

fn carve(solid: &OccupancyGrid, housing: &Housing) -> OccupancyGrid {
    let n = solid.resolution();
    let tops = column_tops(solid);
    let config = *solid.config();
    OccupancyGrid::from_fn(config, |i, j, k| {
        k as i32 > tops[j * n + i] && housing.contains(&config.cell_center(i, j, k))
    })
}
