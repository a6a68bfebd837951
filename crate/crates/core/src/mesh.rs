//! Triangle meshes: Wavefront OBJ subset I/O and deterministic surface sampling.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::Vec3;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh has no triangles")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        if let Some(bad) = triangles.iter().flatten().find(|&&i| i >= vertices.len()) {
            return Err(MeshError::Parse {
                line: 0,
                message: format!("vertex index {bad} out of range"),
            });
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    /// Axis-aligned box spanning `min..max`, outward-facing winding.
    pub fn cuboid(min: Vec3, max: Vec3) -> Self {
        let mut mesh = Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
        };
        mesh.append_cuboid(min, max);
        mesh
    }

    pub fn append_cuboid(&mut self, min: Vec3, max: Vec3) {
        let base = self.vertices.len();
        for i in 0..8 {
            self.vertices.push(Vec3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            ));
        }
        const FACES: [[usize; 4]; 6] = [
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
        ];
        for [a, b, c, d] in FACES {
            self.triangles.push([base + a, base + b, base + c]);
            self.triangles.push([base + a, base + c, base + d]);
        }
    }

    /// Extrudes a convex counter-clockwise xy polygon from z = 0 to `height`.
    pub fn prism(footprint: &[(f64, f64)], height: f64) -> Self {
        let n = footprint.len();
        let mut vertices: Vec<Vec3> = footprint
            .iter()
            .map(|&(x, y)| Vec3::new(x, y, 0.0))
            .collect();
        vertices.extend(footprint.iter().map(|&(x, y)| Vec3::new(x, y, height)));
        let mut triangles = Vec::with_capacity(4 * n - 4);
        for i in 1..n - 1 {
            triangles.push([0, i + 1, i]);
            triangles.push([n, n + i, n + i + 1]);
        }
        for i in 0..n {
            let j = (i + 1) % n;
            triangles.push([i, j, n + j]);
            triangles.push([i, n + j, n + i]);
        }
        Self {
            vertices,
            triangles,
        }
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Dense, deterministic surface samples: a barycentric lattice per
    /// triangle whose pitch is about `spacing` meters. Lattice points sit at
    /// the centroids of the sub-triangles so no sample lands on an edge.
    pub fn sample_surface(&self, spacing: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            if area <= 0.0 {
                continue;
            }
            let n = ((2.0 * area).sqrt() / spacing).ceil().max(1.0) as usize;
            let nf = n as f64;
            for i in 0..n {
                for j in 0..n - i {
                    // upward sub-triangle centroid
                    let (u, v) = ((i as f64 + 1.0 / 3.0) / nf, (j as f64 + 1.0 / 3.0) / nf);
                    out.push(a + (b - a) * u + (c - a) * v);
                    // downward sub-triangle centroid
                    if i + j + 1 < n {
                        let (u, v) = ((i as f64 + 2.0 / 3.0) / nf, (j as f64 + 2.0 / 3.0) / nf);
                        out.push(a + (b - a) * u + (c - a) * v);
                    }
                }
            }
        }
        out
    }

    /// Parses `v` and `f` records; other records are ignored. Polygons are
    /// fan-triangulated, negative (relative) indices are supported.
    pub fn parse_obj(text: &str) -> Result<Self, MeshError> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let err = |message: String| MeshError::Parse { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            let mut fields = content.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let coords: Vec<f64> = fields
                        .take(3)
                        .map(|s| {
                            s.parse::<f64>()
                                .map_err(|e| err(format!("bad coordinate {s:?}: {e}")))
                        })
                        .collect::<Result<_, _>>()?;
                    if coords.len() != 3 || !coords.iter().all(|c| c.is_finite()) {
                        return Err(err("vertex needs three finite coordinates".into()));
                    }
                    vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let mut idx = Vec::new();
                    for tok in fields {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|_| err(format!("bad face index {tok:?}")))?;
                        let resolved = if i > 0 {
                            i - 1
                        } else if i < 0 {
                            vertices.len() as i64 + i
                        } else {
                            return Err(err("face index 0 is invalid".into()));
                        };
                        if resolved < 0 || resolved as usize >= vertices.len() {
                            return Err(err(format!("face index {i} out of range")));
                        }
                        idx.push(resolved as usize);
                    }
                    if idx.len() < 3 {
                        return Err(err("face needs at least three vertices".into()));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for [a, b, c] in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", a + 1, b + 1, c + 1);
        }
        s
    }
}
