//! Triangle meshes, file I/O, simplification and a few procedural shapes.

pub(crate) mod io;
pub mod shapes;
mod simplify;

pub use io::{load_mesh, load_mesh_with_colors, save_mesh, save_mesh_with_colors};
pub use simplify::simplify;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// An immutable triangle mesh with lumped per-vertex areas.
///
/// Every vertex is referenced by at least one face and every face has
/// strictly positive area.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
    vertex_areas: Vec<f64>,
}

impl TriMesh {
    /// Builds a mesh, validating indices and rejecting degenerate faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let n = vertices.len();
        let mut referenced = vec![false; n];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::invalid(format!(
                        "face {fi} references vertex {v} but mesh has {n} vertices"
                    )));
                }
                referenced[v] = true;
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::invalid(format!("face {fi} repeats a vertex index")));
            }
            let area = triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if !(area > 0.0) || !area.is_finite() {
                return Err(Error::invalid(format!("face {fi} has zero area")));
            }
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(Error::invalid(format!("vertex {v} is not referenced by any face")));
        }
        let vertex_areas = lumped_areas(&vertices, &faces);
        Ok(TriMesh {
            vertices,
            faces,
            vertex_areas,
        })
    }

    /// Drops degenerate/zero-area faces and unreferenced vertices before
    /// building the mesh. Returns the mesh and, for every input vertex, its
    /// new index (`None` when it was dropped).
    pub fn cleaned(
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
    ) -> Result<(Self, Vec<Option<usize>>)> {
        let n = vertices.len();
        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0usize;
        for (fi, f) in faces.into_iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::invalid(format!(
                    "face {fi} references a vertex outside 0..{n}"
                )));
            }
            let degenerate = f[0] == f[1]
                || f[1] == f[2]
                || f[0] == f[2]
                || !(triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]) > 0.0);
            if degenerate {
                dropped += 1;
            } else {
                kept.push(f);
            }
        }
        if dropped > 0 {
            log::warn!("removed {dropped} degenerate faces");
        }
        let mut used = vec![false; n];
        for f in &kept {
            for &v in f {
                used[v] = true;
            }
        }
        let mut remap = vec![None; n];
        let mut new_vertices = Vec::new();
        for (v, &u) in used.iter().enumerate() {
            if u {
                remap[v] = Some(new_vertices.len());
                new_vertices.push(vertices[v]);
            }
        }
        for f in &mut kept {
            for v in f.iter_mut() {
                *v = remap[*v].unwrap();
            }
        }
        let mesh = TriMesh::new(new_vertices, kept)?;
        Ok((mesh, remap))
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// One third of the area of every incident triangle, per vertex.
    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }

    pub fn total_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    pub fn face_area(&self, f: &[usize; 3]) -> f64 {
        triangle_area(
            &self.vertices[f[0]],
            &self.vertices[f[1]],
            &self.vertices[f[2]],
        )
    }

    /// Unit face normals, counter-clockwise orientation.
    pub fn face_normals(&self) -> Vec<Vec3> {
        self.faces
            .iter()
            .map(|f| {
                let n = cross(
                    sub(&self.vertices[f[1]], &self.vertices[f[0]]),
                    sub(&self.vertices[f[2]], &self.vertices[f[0]]),
                );
                normalized(n)
            })
            .collect()
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![[0.0; 3]; self.vertices.len()];
        for f in &self.faces {
            // unnormalized cross product carries twice the face area
            let n = cross(
                sub(&self.vertices[f[1]], &self.vertices[f[0]]),
                sub(&self.vertices[f[2]], &self.vertices[f[0]]),
            );
            for &v in f {
                for c in 0..3 {
                    normals[v][c] += n[c];
                }
            }
        }
        normals.into_iter().map(normalized).collect()
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for c in 0..3 {
                lo[c] = lo[c].min(v[c]);
                hi[c] = hi[c].max(v[c]);
            }
        }
        norm(sub(&hi, &lo))
    }

    /// Sorted, deduplicated undirected edges `(min, max)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                (0..3).map(move |k| {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Per-vertex adjacency lists built from the edge set.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Faces incident to each vertex.
    pub fn vertex_faces(&self) -> Vec<Vec<usize>> {
        let mut vf = vec![Vec::new(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                vf[v].push(fi);
            }
        }
        vf
    }

    /// Connected component label per vertex, plus the number of components.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let adj = self.vertex_neighbors();
        let n = self.vertices.len();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = count;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if label[w] == usize::MAX {
                        label[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    /// Relabels vertices so that new vertex `perm[i]` is old vertex `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.vertices.len();
        if perm.len() != n || !is_permutation(perm) {
            return Err(Error::invalid("relabeling is not a permutation of the vertices"));
        }
        let mut vertices = vec![[0.0; 3]; n];
        for (old, &new) in perm.iter().enumerate() {
            vertices[new] = self.vertices[old];
        }
        let faces = self
            .faces
            .iter()
            .map(|f| [perm[f[0]], perm[f[1]], perm[f[2]]])
            .collect();
        TriMesh::new(vertices, faces)
    }

    /// Returns a copy with every vertex moved by `f`.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        TriMesh::new(self.vertices.iter().map(f).collect(), self.faces.clone())
    }
}

pub(crate) fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

fn lumped_areas(vertices: &[Vec3], faces: &[[usize; 3]]) -> Vec<f64> {
    let mut areas = vec![0.0; vertices.len()];
    for f in faces {
        let a = triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]) / 3.0;
        for &v in f {
            areas[v] += a;
        }
    }
    areas
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

#[inline]
pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(&a, &a).sqrt()
}

#[inline]
pub(crate) fn dist(a: &Vec3, b: &Vec3) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub(crate) fn normalized(a: Vec3) -> Vec3 {
    let l = norm(a);
    if l > 0.0 {
        [a[0] / l, a[1] / l, a[2] / l]
    } else {
        [0.0; 3]
    }
}
