//! Triangle meshes: STL IO, procedural indenter primitives and a BVH for
//! nearest-hit ray queries.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

const DEGENERATE_AREA: f64 = 1e-14;

impl TriMesh {
    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn is_degenerate(&self, t: usize) -> bool {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(c - a).norm() < DEGENERATE_AREA
    }

    pub fn degenerate_count(&self) -> usize {
        (0..self.triangles.len()).filter(|&t| self.is_degenerate(t)).count()
    }

    /// Every undirected edge is shared by exactly two faces with opposite
    /// orientation.
    pub fn is_watertight(&self) -> bool {
        let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                if a == b {
                    return false;
                }
                let key = (a.min(b), a.max(b));
                *edges.entry(key).or_insert(0) += if a < b { 1 } else { -1 };
            }
        }
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        !self.triangles.is_empty()
            && edges.values().all(|&v| v == 0)
            && counts.values().all(|&c| c == 2)
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for &v in &self.vertices {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn transformed(&self, f: impl Fn(Vec3) -> Vec3) -> TriMesh {
        TriMesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Signed volume via the divergence theorem (positive for outward winding).
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    // ------------------------------------------------------------ STL

    /// Read binary or ASCII STL; coincident vertices are welded.
    pub fn read_stl(path: &Path) -> Result<TriMesh> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_stl(&bytes)
    }

    pub fn parse_stl(bytes: &[u8]) -> Result<TriMesh> {
        let is_binary = bytes.len() >= 84 && {
            let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
            84 + 50 * n == bytes.len()
        };
        let tris = if is_binary {
            parse_binary(bytes)?
        } else {
            parse_ascii(bytes)?
        };
        Ok(weld(&tris))
    }

    pub fn write_stl_binary(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(84 + 50 * self.triangles.len());
        let mut header = [0u8; 80];
        let tag = b"tactforge binary stl";
        header[..tag.len()].copy_from_slice(tag);
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.triangles.len() as u32).to_le_bytes());
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let n = (b - a).cross(c - a).normalized();
            for v in [n, a, b, c] {
                for x in v.to_array() {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            out.extend_from_slice(&[0, 0]);
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_stl_ascii(&self, path: &Path) -> Result<()> {
        let mut s = Vec::new();
        let io = |e| Error::io(path, e);
        writeln!(s, "solid tactforge").map_err(io)?;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let n = (b - a).cross(c - a).normalized();
            writeln!(s, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z).map_err(io)?;
            writeln!(s, "    outer loop").map_err(io)?;
            for v in [a, b, c] {
                writeln!(s, "      vertex {:e} {:e} {:e}", v.x, v.y, v.z).map_err(io)?;
            }
            writeln!(s, "    endloop\n  endfacet").map_err(io)?;
        }
        writeln!(s, "endsolid tactforge").map_err(io)?;
        std::fs::write(path, s).map_err(io)
    }

    // ------------------------------------------------------------ primitives

    /// Subdivided icosahedron with vertices on a sphere of `radius` at the origin.
    pub fn icosphere(radius: f64, level: u32) -> TriMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
        .collect();
        let mut faces: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..level {
            let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                let key = (a.min(b), a.max(b));
                *mid.entry(key).or_insert_with(|| {
                    let v = ((verts[a as usize] + verts[b as usize]) * 0.5).normalized();
                    verts.push(v);
                    (verts.len() - 1) as u32
                })
            };
            for f in &faces {
                let ab = midpoint(f[0], f[1], &mut verts);
                let bc = midpoint(f[1], f[2], &mut verts);
                let ca = midpoint(f[2], f[0], &mut verts);
                next.push([f[0], ab, ca]);
                next.push([f[1], bc, ab]);
                next.push([f[2], ca, bc]);
                next.push([ab, bc, ca]);
            }
            faces = next;
        }
        TriMesh {
            vertices: verts.into_iter().map(|v| v * radius).collect(),
            triangles: faces,
        }
    }

    /// Axis-aligned box centered at the origin.
    pub fn cuboid(size: Vec3) -> TriMesh {
        let h = size * 0.5;
        let vertices = (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        let quads = [
            [0, 2, 3, 1],
            [4, 5, 7, 6],
            [0, 1, 5, 4],
            [2, 6, 7, 3],
            [0, 4, 6, 2],
            [1, 3, 7, 5],
        ];
        let mut triangles = Vec::new();
        for q in quads {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        }
        TriMesh {
            vertices,
            triangles,
        }
    }

    /// Closed prism along z centered at the origin: regular `sides`-gon of
    /// circumradius `radius` (a cylinder for large `sides`), optionally
    /// tapering to `top_radius` at +z/2 (a cone when it is 0).
    pub fn prism(radius: f64, top_radius: f64, height: f64, sides: usize) -> TriMesh {
        let sides = sides.max(3);
        let mut vertices = Vec::new();
        let h = height * 0.5;
        for k in 0..sides {
            let a = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), -h));
        }
        let apex = top_radius <= 0.0;
        if apex {
            vertices.push(Vec3::new(0.0, 0.0, h));
        } else {
            for k in 0..sides {
                let a = 2.0 * std::f64::consts::PI * k as f64 / sides as f64;
                vertices.push(Vec3::new(top_radius * a.cos(), top_radius * a.sin(), h));
            }
        }
        let bottom_c = vertices.len() as u32;
        vertices.push(Vec3::new(0.0, 0.0, -h));
        let mut triangles = Vec::new();
        let s = sides as u32;
        for k in 0..s {
            let k1 = (k + 1) % s;
            triangles.push([bottom_c, k1, k]);
            if apex {
                triangles.push([k, k1, s]);
            } else {
                triangles.push([k, k1, s + k1]);
                triangles.push([k, s + k1, s + k]);
            }
        }
        if !apex {
            let top_c = vertices.len() as u32;
            vertices.push(Vec3::new(0.0, 0.0, h));
            for k in 0..s {
                let k1 = (k + 1) % s;
                triangles.push([top_c, s + k, s + k1]);
            }
        }
        TriMesh {
            vertices,
            triangles,
        }
    }

    /// Unit icosphere scaled per axis.
    pub fn ellipsoid(radii: Vec3, level: u32) -> TriMesh {
        TriMesh::icosphere(1.0, level).transformed(|v| Vec3::new(v.x * radii.x, v.y * radii.y, v.z * radii.z))
    }
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>> {
    let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    let f = |o: usize| f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64;
    let mut tris = Vec::with_capacity(n);
    for t in 0..n {
        let base = 84 + 50 * t + 12;
        let v = |k: usize| {
            let o = base + 12 * k;
            Vec3::new(f(o), f(o + 4), f(o + 8))
        };
        tris.push([v(0), v(1), v(2)]);
    }
    Ok(tris)
}

fn parse_ascii(bytes: &[u8]) -> Result<Vec<[Vec3; 3]>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("STL is neither binary nor ASCII".into()))?;
    if !text.trim_start().starts_with("solid") {
        return Err(Error::Format("ASCII STL must start with 'solid'".into()));
    }
    let mut tris = Vec::new();
    let mut cur: Vec<Vec3> = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("vertex") => {
                let coords: Vec<f64> = it
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("bad STL vertex '{line}': {e}")))?;
                if coords.len() != 3 {
                    return Err(Error::Format(format!("bad STL vertex '{line}'")));
                }
                cur.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("endfacet") => {
                if cur.len() != 3 {
                    return Err(Error::Format("STL facet without three vertices".into()));
                }
                tris.push([cur[0], cur[1], cur[2]]);
                cur.clear();
            }
            _ => {}
        }
    }
    Ok(tris)
}

fn weld(tris: &[[Vec3; 3]]) -> TriMesh {
    let mut index: HashMap<[u64; 3], u32> = HashMap::new();
    let mut mesh = TriMesh::default();
    for t in tris {
        let mut ids = [0u32; 3];
        for (k, v) in t.iter().enumerate() {
            let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
            ids[k] = *index.entry(key).or_insert_with(|| {
                mesh.vertices.push(*v);
                (mesh.vertices.len() - 1) as u32
            });
        }
        mesh.triangles.push(ids);
    }
    mesh
}

// ---------------------------------------------------------------- BVH

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Vec3) {
        self.lo = self.lo.min(p);
        self.hi = self.hi.max(p);
    }

    /// Entry distance of the ray into the box, if it is hit before `t_max`.
    fn hit(&self, o: Vec3, inv: Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for a in 0..3 {
            let (lo, hi, oa, ia) = (self.lo.axis(a), self.hi.axis(a), o.axis(a), inv.axis(a));
            let mut ta = (lo - oa) * ia;
            let mut tb = (hi - oa) * ia;
            if ta.is_nan() || tb.is_nan() {
                // ray parallel to the slab starting on its plane
                if oa < lo || oa > hi {
                    return None;
                }
                continue;
            }
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

/// Bounding-volume hierarchy over the non-degenerate faces of a mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    faces: Vec<usize>,
}

/// Möller–Trumbore intersection; two-sided, returns `t > eps`.
pub fn ray_triangle(o: Vec3, d: Vec3, tri: &[Vec3; 3]) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = d.cross(e2);
    let det = e1.dot(p);
    if det.abs() < EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - tri[0];
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = d.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > EPS).then_some(t)
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Bvh {
        let mut faces: Vec<usize> = (0..mesh.triangles.len()).filter(|&t| !mesh.is_degenerate(t)).collect();
        let centroids: Vec<Vec3> = (0..mesh.triangles.len())
            .map(|t| {
                let [a, b, c] = mesh.triangle(t);
                (a + b + c) / 3.0
            })
            .collect();
        let mut nodes = Vec::new();
        if !faces.is_empty() {
            let n = faces.len();
            Self::build_node(mesh, &centroids, &mut faces, 0, n, &mut nodes);
        }
        Bvh { nodes, faces }
    }

    fn build_node(
        mesh: &TriMesh,
        centroids: &[Vec3],
        faces: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> usize {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for &f in &faces[start..end] {
            for v in mesh.triangle(f) {
                bounds.grow(v);
            }
            cb.grow(centroids[f]);
        }
        let id = nodes.len();
        if end - start <= 4 {
            nodes.push(BvhNode::Leaf { bounds, start, end });
            return id;
        }
        let ext = cb.hi - cb.lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        faces[start..end].sort_by(|&a, &b| {
            centroids[a]
                .axis(axis)
                .total_cmp(&centroids[b].axis(axis))
                .then(a.cmp(&b))
        });
        let mid = (start + end) / 2;
        nodes.push(BvhNode::Leaf { bounds, start, end });
        let left = Self::build_node(mesh, centroids, faces, start, mid, nodes);
        let right = Self::build_node(mesh, centroids, faces, mid, end, nodes);
        nodes[id] = BvhNode::Inner { bounds, left, right };
        id
    }

    /// Nearest hit distance along `o + t d`, `t > 0`.
    pub fn nearest_hit(&self, mesh: &TriMesh, o: Vec3, d: Vec3) -> Option<f64> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                BvhNode::Leaf { bounds, start, end } => {
                    if bounds.hit(o, inv, best).is_none() {
                        continue;
                    }
                    for &f in &self.faces[*start..*end] {
                        if let Some(t) = ray_triangle(o, d, &mesh.triangle(f)) {
                            best = best.min(t);
                        }
                    }
                }
                BvhNode::Inner { bounds, left, right } => {
                    if bounds.hit(o, inv, best).is_some() {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best.is_finite().then_some(best)
    }

    /// Number of crossings along the ray, for inside/outside parity.
    pub fn count_hits(&self, mesh: &TriMesh, o: Vec3, d: Vec3) -> usize {
        let mut n = 0;
        for &f in &self.faces {
            if ray_triangle(o, d, &mesh.triangle(f)).is_some() {
                n += 1;
            }
        }
        n
    }
}
