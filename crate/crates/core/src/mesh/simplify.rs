//! Quadric-error-metric edge contraction.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{cross, dot, sub, TriMesh, Vec3};
use crate::error::{Error, Result};

/// Boundary constraint planes are weighted this much relative to face planes.
const BOUNDARY_WEIGHT: f64 = 10.0;

/// Symmetric 4×4 quadric stored as its upper triangle.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: Vec3, d: f64, w: f64) -> Self {
        let [a, b, c] = n;
        Quadric([
            w * a * a,
            w * a * b,
            w * a * c,
            w * a * d,
            w * b * b,
            w * b * c,
            w * b * d,
            w * c * c,
            w * c * d,
            w * d * d,
        ])
    }

    fn add(&self, o: &Quadric) -> Quadric {
        let mut q = self.0;
        for (x, y) in q.iter_mut().zip(o.0.iter()) {
            *x += y;
        }
        Quadric(q)
    }

    fn eval(&self, v: &Vec3) -> f64 {
        let q = &self.0;
        let [x, y, z] = *v;
        let e = q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9];
        e.max(0.0)
    }

    /// Minimizer of the quadric, if the 3×3 block is well conditioned.
    fn optimum(&self) -> Option<Vec3> {
        let q = &self.0;
        let m = nalgebra::Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        let rhs = nalgebra::Vector3::new(-q[3], -q[6], -q[8]);
        let scale = q[0].abs() + q[4].abs() + q[7].abs();
        let det = m.determinant();
        if !(det.abs() > 1e-10 * scale.powi(3)) {
            return None;
        }
        let x = m.lu().solve(&rhs)?;
        Some([x[0], x[1], x[2]])
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
    target: Vec3,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    // Reversed so BinaryHeap pops the cheapest, then the smallest (a, b).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
            .then_with(|| other.stamp_a.cmp(&self.stamp_a))
            .then_with(|| other.stamp_b.cmp(&self.stamp_b))
    }
}

struct Work {
    pos: Vec<Vec3>,
    quadrics: Vec<Quadric>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vfaces: Vec<Vec<usize>>,
    removed: Vec<bool>,
    merged_into: Vec<usize>,
    stamp: Vec<u32>,
}

impl Work {
    fn new(mesh: &TriMesh) -> Self {
        let n = mesh.num_vertices();
        let pos = mesh.vertices().to_vec();
        let faces = mesh.faces().to_vec();
        let mut quadrics = vec![Quadric::default(); n];
        let normals = mesh.face_normals();
        for (f, nrm) in faces.iter().zip(&normals) {
            let area = mesh.face_area(f);
            let d = -dot(nrm, &pos[f[0]]);
            let q = Quadric::plane(*nrm, d, area);
            for &v in f {
                quadrics[v] = quadrics[v].add(&q);
            }
        }
        // boundary edges: planes through the edge, perpendicular to the face
        let mut edge_faces: std::collections::HashMap<(usize, usize), Vec<usize>> =
            std::collections::HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let mut boundary: Vec<_> = edge_faces
            .iter()
            .filter(|(_, fs)| fs.len() == 1)
            .map(|(e, fs)| (*e, fs[0]))
            .collect();
        boundary.sort_unstable();
        for ((a, b), fi) in boundary {
            let e = sub(&pos[b], &pos[a]);
            let len2 = dot(&e, &e);
            let pn = super::normalized(cross(e, normals[fi]));
            let d = -dot(&pn, &pos[a]);
            let q = Quadric::plane(pn, d, BOUNDARY_WEIGHT * len2);
            quadrics[a] = quadrics[a].add(&q);
            quadrics[b] = quadrics[b].add(&q);
        }
        let mut vfaces = vec![Vec::new(); n];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                vfaces[v].push(fi);
            }
        }
        Work {
            pos,
            quadrics,
            face_alive: vec![true; faces.len()],
            faces,
            vfaces,
            removed: vec![false; n],
            merged_into: (0..n).collect(),
            stamp: vec![0; n],
        }
    }

    fn live_faces(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.vfaces[v].iter().copied().filter(|&f| self.face_alive[f])
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .live_faces(v)
            .flat_map(|f| self.faces[f])
            .filter(|&w| w != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn is_boundary_vertex(&self, v: usize) -> bool {
        self.neighbors(v).into_iter().any(|w| self.edge_faces(v, w).len() == 1)
    }

    fn edge_faces(&self, a: usize, b: usize) -> Vec<usize> {
        self.live_faces(a)
            .filter(|&f| self.faces[f].contains(&b))
            .collect()
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let q = self.quadrics[a].add(&self.quadrics[b]);
        let target = match q.optimum() {
            Some(v) => v,
            None => {
                let pa = self.pos[a];
                let pb = self.pos[b];
                let mid = [
                    0.5 * (pa[0] + pb[0]),
                    0.5 * (pa[1] + pb[1]),
                    0.5 * (pa[2] + pb[2]),
                ];
                let mut best = pa;
                let mut best_cost = q.eval(&pa);
                for p in [pb, mid] {
                    let c = q.eval(&p);
                    if c < best_cost {
                        best = p;
                        best_cost = c;
                    }
                }
                best
            }
        };
        Candidate {
            cost: q.eval(&target),
            a,
            b,
            stamp_a: self.stamp[a],
            stamp_b: self.stamp[b],
            target,
        }
    }

    /// Checks the link condition, duplicate faces and normal flips.
    fn can_collapse(&self, c: &Candidate) -> bool {
        let (a, b) = (c.a, c.b);
        let shared = self.edge_faces(a, b);
        if shared.is_empty() || shared.len() > 2 {
            return false;
        }
        let mut opposite: Vec<usize> = shared
            .iter()
            .map(|&f| *self.faces[f].iter().find(|&&v| v != a && v != b).unwrap())
            .collect();
        opposite.sort_unstable();
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        let common: Vec<usize> = na.iter().copied().filter(|v| nb.contains(v)).collect();
        if common != opposite {
            return false;
        }
        if shared.len() == 2 && self.is_boundary_vertex(a) && self.is_boundary_vertex(b) {
            return false;
        }
        let total_live = self.face_alive.iter().filter(|&&x| x).count();
        if total_live <= shared.len() {
            return false;
        }
        // duplicates: a face around b (not shared) whose remap matches a face around a
        let mut around_a: Vec<[usize; 3]> = self
            .live_faces(a)
            .filter(|f| !shared.contains(f))
            .map(|f| sorted(self.faces[f]))
            .collect();
        around_a.sort_unstable();
        for f in self.live_faces(b).filter(|f| !shared.contains(f)) {
            let mapped = sorted(self.faces[f].map(|v| if v == b { a } else { v }));
            if around_a.binary_search(&mapped).is_ok() {
                return false;
            }
        }
        for v in [a, b] {
            for f in self.live_faces(v).filter(|f| !shared.contains(f)) {
                let tri = self.faces[f];
                let old = tri.map(|w| self.pos[w]);
                let new = tri.map(|w| if w == a || w == b { c.target } else { self.pos[w] });
                let n_old = cross(sub(&old[1], &old[0]), sub(&old[2], &old[0]));
                let n_new = cross(sub(&new[1], &new[0]), sub(&new[2], &new[0]));
                if dot(&n_old, &n_new) <= 0.0 {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, c: &Candidate) {
        let (a, b) = (c.a, c.b);
        for f in self.edge_faces(a, b) {
            self.face_alive[f] = false;
        }
        let moved: Vec<usize> = self.live_faces(b).collect();
        for f in moved {
            for v in self.faces[f].iter_mut() {
                if *v == b {
                    *v = a;
                }
            }
            self.vfaces[a].push(f);
        }
        self.vfaces[b].clear();
        self.pos[a] = c.target;
        self.quadrics[a] = self.quadrics[a].add(&self.quadrics[b]);
        self.removed[b] = true;
        self.merged_into[b] = a;
        self.stamp[a] += 1;
        self.stamp[b] += 1;
        let live: Vec<usize> = self.live_faces(a).collect();
        self.vfaces[a] = live;
    }
}

fn sorted(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

/// Contracts edges by increasing quadric error until at most `target_n`
/// vertices remain.
///
/// Returns the simplified mesh and, for every input vertex, the index of
/// its surviving representative in the output.
pub fn simplify(mesh: &TriMesh, target_n: usize) -> Result<(TriMesh, Vec<usize>)> {
    let n = mesh.num_vertices();
    if n <= target_n {
        return Ok((mesh.clone(), (0..n).collect()));
    }
    if target_n < 3 {
        return Err(Error::invalid(format!(
            "simplification target {target_n} is below 3 vertices"
        )));
    }
    let mut work = Work::new(mesh);
    let mut heap = BinaryHeap::new();
    for (a, b) in mesh.edges() {
        heap.push(work.candidate(a, b));
    }
    let mut alive = n;
    while alive > target_n {
        let Some(c) = heap.pop() else {
            return Err(Error::invalid(format!(
                "edge contraction stalled at {alive} vertices (target {target_n}) \
                 without destroying the surface"
            )));
        };
        if work.removed[c.a]
            || work.removed[c.b]
            || c.stamp_a != work.stamp[c.a]
            || c.stamp_b != work.stamp[c.b]
        {
            continue;
        }
        if !work.can_collapse(&c) {
            continue;
        }
        work.collapse(&c);
        alive -= 1;
        for w in work.neighbors(c.a) {
            heap.push(work.candidate(c.a, w));
        }
    }

    let faces: Vec<[usize; 3]> = work
        .faces
        .iter()
        .zip(&work.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| *f)
        .collect();
    let (out, remap) = TriMesh::cleaned(work.pos.clone(), faces)?;
    let mut vertex_map = Vec::with_capacity(n);
    for v in 0..n {
        let mut r = v;
        while work.merged_into[r] != r {
            r = work.merged_into[r];
        }
        let idx = match remap[r] {
            Some(i) => i,
            // dropped as degenerate after contraction: nearest survivor
            None => nearest(out.vertices(), &work.pos[r]),
        };
        vertex_map.push(idx);
    }
    Ok((out, vertex_map))
}

fn nearest(points: &[Vec3], p: &Vec3) -> usize {
    points
        .iter()
        .enumerate()
        .min_by(|x, y| super::dist(x.1, p).total_cmp(&super::dist(y.1, p)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}
