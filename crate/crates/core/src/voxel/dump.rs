//! Raw debug dump: `MMGRID01`, u32 resolution, f32 cell size (little endian),
//! then one bit per cell in x-fastest order, least significant bit first.
//! The domain box goes into a JSON file next to it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GridConfig, OccupancyGrid};
use crate::error::{Error, Result};
use crate::mesh::Aabb;

pub const GRID_MAGIC: &[u8; 8] = b"MMGRID01";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    resolution: usize,
    cell_size: f64,
    domain: Aabb,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_grid_dump(grid: &OccupancyGrid, path: &Path) -> Result<()> {
    let n = grid.resolution();
    let mut out = Vec::with_capacity(16 + (n * n * n).div_ceil(8));
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cell_size() as f32).to_le_bytes());
    let mut bits = vec![0u8; (n * n * n).div_ceil(8)];
    for [i, j, k] in grid.iter_occupied() {
        let c = (k * n + j) * n + i;
        bits[c / 8] |= 1 << (c % 8);
    }
    out.extend_from_slice(&bits);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        resolution: n,
        cell_size: grid.cell_size(),
        domain: *grid.config().domain(),
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(sp, e))
}

pub fn read_grid_dump(path: &Path) -> Result<OccupancyGrid> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < 16 || &data[..8] != GRID_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing MMGRID01 header".into(),
        });
    }
    let n = u32::from_le_bytes(data[8..12].try_into().unwrap()) as usize;
    let sp = sidecar_path(path);
    let side: Sidecar =
        serde_json::from_slice(&std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?)?;
    if side.resolution != n {
        return Err(Error::Format {
            offset: 8,
            message: format!("resolution {n} disagrees with sidecar {}", side.resolution),
        });
    }
    let need = 16 + (n * n * n).div_ceil(8);
    if data.len() < need {
        return Err(Error::Format {
            offset: data.len(),
            message: format!("truncated grid dump, expected {need} bytes"),
        });
    }
    // validate, but keep the stored layout bit-for-bit
    GridConfig::new(n, side.domain)?;
    let config = GridConfig {
        resolution: n,
        domain: side.domain,
        cell_size: side.cell_size,
    };
    let bits = &data[16..];
    Ok(OccupancyGrid::from_fn(config, |i, j, k| {
        let c = (k * n + j) * n + i;
        (bits[c / 8] >> (c % 8)) & 1 == 1
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GridConfig::new(12, Aabb::new([-0.1, 0.0, 0.2], [0.5, 0.6, 0.8])).unwrap();
        let g = OccupancyGrid::from_fn(cfg, |i, j, k| (i + 2 * j + 3 * k) % 5 == 0);
        let p = dir.path().join("g.mmgrid");
        write_grid_dump(&g, &p).unwrap();
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..8], b"MMGRID01");
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 12);
        assert_eq!(f32::from_le_bytes(raw[12..16].try_into().unwrap()), 0.05f32);
        assert_eq!(raw.len(), 16 + 1728 / 8);
        assert_eq!(read_grid_dump(&p).unwrap(), g);

        std::fs::write(&p, &raw[..100]).unwrap();
        assert!(matches!(read_grid_dump(&p), Err(Error::Format { .. })));
    }
}
