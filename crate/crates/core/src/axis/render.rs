//! Depth-shaded software rasterizer for the VLM preview image.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

pub const CAMERA_EYE: [f64; 3] = [5.0, 5.0, 0.0];
pub const VERTICAL_FOV_DEG: f64 = 30.0;
const NEAR: f64 = 0.1;

/// 8-bit grayscale image, row-major from the top-left. Background is 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Fraction of non-background pixels.
    pub fn coverage(&self) -> f64 {
        self.pixels.iter().filter(|&&p| p > 0).count() as f64 / self.pixels.len() as f64
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Render(e.to_string()))?;
        w.write_image_data(&self.pixels).map_err(|e| Error::Render(e.to_string()))?;
        w.finish().map_err(|e| Error::Render(e.to_string()))?;
        Ok(out)
    }
}

struct Camera {
    eye: Vector3<f64>,
    right: Vector3<f64>,
    up: Vector3<f64>,
    forward: Vector3<f64>,
    focal: f64,
    size: f64,
}

impl Camera {
    fn new(size: usize) -> Self {
        let eye = Vector3::from(CAMERA_EYE);
        let forward = (-eye).normalize();
        let right = forward.cross(&Vector3::z()).normalize();
        let up = right.cross(&forward);
        let focal = 0.5 * size as f64 / (0.5 * VERTICAL_FOV_DEG.to_radians()).tan();
        Self {
            eye,
            right,
            up,
            forward,
            focal,
            size: size as f64,
        }
    }

    /// Pixel coordinates (x right, y down) and view depth.
    fn project(&self, p: &Point3<f64>) -> Option<[f64; 3]> {
        let d = p.coords - self.eye;
        let z = d.dot(&self.forward);
        if z < NEAR {
            return None;
        }
        let x = 0.5 * self.size + self.focal * d.dot(&self.right) / z;
        let y = 0.5 * self.size - self.focal * d.dot(&self.up) / z;
        Some([x, y, z])
    }
}

/// Renders `mesh` as seen from (5, 5, 0) looking at the origin, +z up, with
/// nearer surfaces brighter. The whole mesh must lie inside the view frustum.
pub fn render_preview(mesh: &TriangleMesh, image_size: usize) -> Result<GrayImage> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("nothing to render".into()));
    }
    if image_size == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let cam = Camera::new(image_size);
    let s = image_size as f64;
    let proj: Vec<[f64; 3]> = mesh
        .vertices()
        .iter()
        .map(|v| {
            cam.project(v)
                .filter(|q| (0.0..=s).contains(&q[0]) && (0.0..=s).contains(&q[1]))
                .ok_or_else(|| Error::Render(format!("vertex {v:?} lies outside the view frustum")))
        })
        .collect::<Result<_>>()?;

    let eye_dist = cam.eye.norm();
    let (near, far) = (eye_dist - 3f64.sqrt(), eye_dist + 3f64.sqrt());
    let mut depth = vec![f64::INFINITY; image_size * image_size];
    for tri in mesh.triangles() {
        let [a, b, c] = tri.map(|i| proj[i as usize]);
        let area = edge(&a, &b, &c);
        if area.abs() < 1e-12 {
            continue;
        }
        let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let x1 = (a[0].max(b[0]).max(c[0]).ceil() as usize).min(image_size);
        let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let y1 = (a[1].max(b[1]).max(c[1]).ceil() as usize).min(image_size);
        for py in y0..y1 {
            for px in x0..x1 {
                let p = [px as f64 + 0.5, py as f64 + 0.5, 0.0];
                let w0 = edge(&b, &c, &p) / area;
                let w1 = edge(&c, &a, &p) / area;
                let w2 = edge(&a, &b, &p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // perspective-correct depth
                let z = 1.0 / (w0 / a[2] + w1 / b[2] + w2 / c[2]);
                let slot = &mut depth[py * image_size + px];
                if z < *slot {
                    *slot = z;
                }
            }
        }
    }
    let pixels = depth
        .iter()
        .map(|&z| {
            if z.is_finite() {
                let t = ((far - z) / (far - near)).clamp(0.0, 1.0);
                (40.0 + 215.0 * t).round() as u8
            } else {
                0
            }
        })
        .collect();
    Ok(GrayImage {
        width: image_size,
        height: image_size,
        pixels,
    })
}

fn edge(a: &[f64; 3], b: &[f64; 3], p: &[f64; 3]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{primitives, RigidTransform};

    #[test]
    fn cube_silhouette_and_determinism() {
        let cube = primitives::box_mesh([-1.0; 3], [1.0; 3]);
        let a = render_preview(&cube, 128).unwrap();
        let b = render_preview(&cube, 128).unwrap();
        assert_eq!(a, b);
        let cov = a.coverage();
        assert!((0.01..=0.5).contains(&cov), "coverage {cov}");
        let small = render_preview(&primitives::box_mesh([-0.5; 3], [0.5; 3]), 128).unwrap();
        assert!((0.01..=0.5).contains(&small.coverage()));
        assert!(small.coverage() < cov);
        let png = a.to_png().unwrap();
        assert_eq!(&png[1..4], b"PNG");
    }

    #[test]
    fn nearer_is_brighter() {
        let cube = primitives::box_mesh([-1.0; 3], [1.0; 3]);
        let img = render_preview(&cube, 64).unwrap();
        // the vertical edge nearest the camera projects to the image center column
        let center = img.pixels[32 * 64 + 32];
        let top_far = img.pixels.iter().copied().filter(|&p| p > 0).min().unwrap();
        assert!(center > top_far);
    }

    #[test]
    fn errors() {
        let cube = primitives::box_mesh([-1.0; 3], [1.0; 3]);
        let far = cube.transformed(&RigidTransform::translation(Vector3::new(0.0, 0.0, 10.0)));
        assert!(matches!(render_preview(&far, 64), Err(Error::Render(_))));
        let empty = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(render_preview(&empty, 64).is_err());
    }
}
