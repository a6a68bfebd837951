//! Z-buffer triangle rasterization into a metric depth image.

use crate::geometry::{CameraIntrinsics, RigidTransform, Vec3};
use crate::mesh::TriangleMesh;
use crate::refine::{BoundingBox, DepthImage};

/// Triangles with any vertex closer than this are skipped.
const NEAR_PLANE: f64 = 1e-3;

/// Renders the nearest surface per pixel; uncovered pixels stay 0.
///
/// Pixel `(x, y)` samples the ray through the point `(x, y)` in image
/// coordinates, so a pixel is covered when its center lies inside (or on the
/// edge of) a projected triangle. Depth is interpolated in `1/z`, which is
/// exact for planar triangles.
pub fn render_depth(
    scene: &[(&TriangleMesh, RigidTransform)],
    cam: &CameraIntrinsics,
) -> DepthImage {
    let mut depth = DepthImage::empty(cam.width, cam.height);
    for (mesh, pose) in scene {
        let verts: Vec<Vec3> = mesh
            .vertices
            .iter()
            .map(|v| pose.transform_point(v))
            .collect();
        for tri in &mesh.triangles {
            rasterize(
                &mut depth,
                cam,
                [verts[tri[0]], verts[tri[1]], verts[tri[2]]],
            );
        }
    }
    depth
}

fn rasterize(depth: &mut DepthImage, cam: &CameraIntrinsics, v: [Vec3; 3]) {
    if v.iter().any(|p| p.z < NEAR_PLANE) {
        return;
    }
    let s: Vec<(f64, f64)> = v
        .iter()
        .map(|p| (cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy))
        .collect();
    let area = edge(s[0], s[1], s[2]);
    if area.abs() < 1e-12 {
        return;
    }
    let min_x = s
        .iter()
        .map(|p| p.0)
        .fold(f64::INFINITY, f64::min)
        .ceil()
        .max(0.0);
    let max_x = s
        .iter()
        .map(|p| p.0)
        .fold(f64::NEG_INFINITY, f64::max)
        .floor()
        .min(cam.width as f64 - 1.0);
    let min_y = s
        .iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min)
        .ceil()
        .max(0.0);
    let max_y = s
        .iter()
        .map(|p| p.1)
        .fold(f64::NEG_INFINITY, f64::max)
        .floor()
        .min(cam.height as f64 - 1.0);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let inv_z = [1.0 / v[0].z, 1.0 / v[1].z, 1.0 / v[2].z];
    for y in min_y as u32..=max_y as u32 {
        for x in min_x as u32..=max_x as u32 {
            let p = (x as f64, y as f64);
            let w0 = edge(s[1], s[2], p) / area;
            let w1 = edge(s[2], s[0], p) / area;
            let w2 = edge(s[0], s[1], p) / area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let z = 1.0 / (w0 * inv_z[0] + w1 * inv_z[1] + w2 * inv_z[2]);
            let current = depth.get(x, y).unwrap_or(0.0);
            if current == 0.0 || z < current {
                depth.set(x, y, z);
            }
        }
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Tight image-space box around the projected mesh, clipped to the image.
pub fn projected_bbox(
    mesh: &TriangleMesh,
    pose: &RigidTransform,
    cam: &CameraIntrinsics,
) -> Option<BoundingBox> {
    let pts = mesh
        .vertices
        .iter()
        .filter_map(|v| cam.project_point(&pose.transform_point(v)))
        .map(|uv| {
            (
                uv.x.clamp(0.0, cam.width as f64),
                uv.y.clamp(0.0, cam.height as f64),
            )
        });
    BoundingBox::enclosing(pts).filter(|b| b.intersects_image(cam.width, cam.height))
}

/// Overwrites the left `coverage` fraction of `bbox` (full height) with `depth`.
pub fn apply_occluder(image: &mut DepthImage, bbox: &BoundingBox, coverage: f64, depth: f64) {
    if coverage <= 0.0 {
        return;
    }
    let x0 = bbox.x.ceil().max(0.0) as u32;
    let x1 = (bbox.x + bbox.w * coverage.min(1.0)).ceil().max(0.0) as u32;
    let y0 = bbox.y.ceil().max(0.0) as u32;
    let y1 = (bbox.y + bbox.h).ceil().max(0.0) as u32;
    for y in y0..y1.min(image.height()) {
        for x in x0..x1.min(image.width()) {
            image.set(x, y, depth);
        }
    }
}
