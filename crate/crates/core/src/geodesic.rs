//! Fast-marching geodesic distances on triangle meshes.
//!
//! Triangle updates use the planar virtual-source construction: the two
//! known vertices of a triangle and their distances locate a virtual point
//! source in the unfolded plane, and the new distance is the straight-line
//! distance from it when the ray enters through the opposite edge. Obtuse
//! angles are split by unfolding neighbouring triangles until a vertex falls
//! inside the angle.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::mesh::{dist, TriMesh};

/// Dense storage guard for [`distance_matrix`].
pub const MAX_DENSE_VERTICES: usize = 20_000;

const MAX_UNFOLD_STEPS: usize = 20;
const GEODESIC_MAGIC: &[u8; 8] = b"FMGEOD01";

/// Symmetric pairwise geodesic distances, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicMatrix {
    n: usize,
    d: Vec<f32>,
    diameter: f64,
}

impl GeodesicMatrix {
    /// Wraps a row-major n×n matrix. It must have a zero diagonal, be
    /// non-negative and symmetric.
    pub fn from_row_major(n: usize, d: Vec<f32>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::dims(format!("{} entries for a {n}×{n} matrix", d.len())));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::invalid(format!("distance diagonal entry {i} is nonzero")));
            }
            for j in 0..i {
                let (a, b) = (d[i * n + j], d[j * n + i]);
                if !(a >= 0.0) || a != b {
                    return Err(Error::invalid(format!(
                        "distance entries ({i},{j}) are negative or asymmetric"
                    )));
                }
            }
        }
        let diameter = d.iter().fold(0.0f32, |m, &x| m.max(x)) as f64;
        Ok(GeodesicMatrix { n, d, diameter })
    }

    /// Symmetrizes and rounds an arbitrary dense matrix, zeroing its diagonal.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::dims("distance matrix must be square"));
        }
        let mut d = vec![0f32; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[i * n + j] = (0.5 * (m[(i, j)] + m[(j, i)])).max(0.0) as f32;
                }
            }
        }
        Self::from_row_major(n, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j] as f64
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.d
    }

    /// Largest entry.
    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Relabels vertices so that new vertex `perm[i]` is old vertex `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut d = vec![0f32; n * n];
        for i in 0..n {
            for j in 0..n {
                d[perm[i] * n + perm[j]] = self.d[i * n + j];
            }
        }
        GeodesicMatrix {
            n,
            d,
            diameter: self.diameter,
        }
    }

    /// Binary layout: magic `FMGEOD01`, `n: u64`, row-major f32 entries.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::new(GEODESIC_MAGIC);
        w.u64(self.n as u64);
        w.f32s(self.d.iter().copied());
        w.write_atomic(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = Reader::open(path.as_ref(), GEODESIC_MAGIC)?;
        let n = r.len()?;
        let d = r.f32s(n * n)?;
        r.finish()?;
        Self::from_row_major(n, d)
    }
}

/// One triangle update for a vertex: two other vertices and the planar
/// lengths (to the updated vertex and between each other).
#[derive(Debug, Clone, Copy)]
struct Stencil {
    a: usize,
    b: usize,
    la: f64,
    lb: f64,
    lab: f64,
}

/// Precomputed update stencils for repeated fast marching on one mesh.
#[derive(Debug, Clone)]
pub struct FastMarching {
    stencils: Vec<Vec<Stencil>>,
    edges: Vec<Vec<(usize, f64)>>,
    /// vertices whose stencils mention each vertex
    dependents: Vec<Vec<usize>>,
    unreachable: f64,
    components: usize,
}

type P2 = [f64; 2];

fn cross2(a: P2, b: P2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Places a point at distances `ra` from `pa` and `rb` from `pb`, on the
/// side of line `pa→pb` given by `side` (+1 left, −1 right).
fn place(pa: P2, pb: P2, ra: f64, rb: f64, side: f64) -> P2 {
    let ex = [pb[0] - pa[0], pb[1] - pa[1]];
    let c = (ex[0] * ex[0] + ex[1] * ex[1]).sqrt();
    let ux = [ex[0] / c, ex[1] / c];
    let uy = [-ux[1], ux[0]];
    let x = (ra * ra - rb * rb + c * c) / (2.0 * c);
    let y = (ra * ra - x * x).max(0.0).sqrt() * side;
    [pa[0] + ux[0] * x + uy[0] * y, pa[1] + ux[1] * x + uy[1] * y]
}

fn len2(a: P2, b: P2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl FastMarching {
    pub fn new(mesh: &TriMesh) -> Self {
        let n = mesh.num_vertices();
        let v = mesh.vertices();
        let faces = mesh.faces();
        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let mut stencils = vec![Vec::new(); n];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (c, a, b) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                let la = dist(&v[c], &v[a]);
                let lb = dist(&v[c], &v[b]);
                let lab = dist(&v[a], &v[b]);
                let cos_c = (la * la + lb * lb - lab * lab) / (2.0 * la * lb);
                if cos_c >= 0.0 {
                    stencils[c].push(Stencil { a, b, la, lb, lab });
                    continue;
                }
                match unfold(v, faces, &edge_faces, fi, c, a, b) {
                    Some((d, pa, pd, pb)) => {
                        let o = [0.0, 0.0];
                        stencils[c].push(Stencil {
                            a,
                            b: d,
                            la: len2(o, pa),
                            lb: len2(o, pd),
                            lab: len2(pa, pd),
                        });
                        stencils[c].push(Stencil {
                            a: d,
                            b,
                            la: len2(o, pd),
                            lb: len2(o, pb),
                            lab: len2(pd, pb),
                        });
                    }
                    None => stencils[c].push(Stencil { a, b, la, lb, lab }),
                }
            }
        }
        let mut edges = vec![Vec::new(); n];
        for (a, b) in mesh.edges() {
            let l = dist(&v[a], &v[b]);
            edges[a].push((b, l));
            edges[b].push((a, l));
        }
        let mut dependents = vec![Vec::new(); n];
        for (c, st) in stencils.iter().enumerate() {
            for s in st {
                dependents[s.a].push(c);
                dependents[s.b].push(c);
            }
        }
        for (c, es) in edges.iter().enumerate() {
            for &(w, _) in es {
                dependents[w].push(c);
            }
        }
        for d in &mut dependents {
            d.sort_unstable();
            d.dedup();
        }
        let (_, components) = mesh.components();
        FastMarching {
            stencils,
            edges,
            dependents,
            unreachable: 10.0 * mesh.bounding_box_diagonal(),
            components,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.stencils.len()
    }

    /// Distances from `source` to every vertex. Vertices in other connected
    /// components get `10 ×` the bounding-box diagonal.
    pub fn distances(&self, source: usize) -> Result<Vec<f64>> {
        self.run(source).map(|(d, _)| d)
    }

    /// Distances plus the order in which vertices were accepted.
    pub fn run(&self, source: usize) -> Result<(Vec<f64>, Vec<usize>)> {
        let n = self.num_vertices();
        if source >= n {
            return Err(Error::invalid(format!(
                "source vertex {source} out of range for {n} vertices"
            )));
        }
        let mut t = vec![f64::INFINITY; n];
        let mut accepted = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut heap = BinaryHeap::new();
        t[source] = 0.0;
        heap.push(Front(0.0, source));
        while let Some(Front(d, u)) = heap.pop() {
            if accepted[u] || d > t[u] {
                continue;
            }
            accepted[u] = true;
            order.push(u);
            for &c in &self.dependents[u] {
                if accepted[c] {
                    continue;
                }
                let cand = self.update(c, &t, &accepted);
                if cand < t[c] {
                    t[c] = cand;
                    heap.push(Front(cand, c));
                }
            }
        }
        if order.len() < n {
            if self.components > 1 {
                log::warn!(
                    "mesh has {} components; unreachable distances set to {:.4}",
                    self.components,
                    self.unreachable
                );
            }
            for x in t.iter_mut().filter(|x| x.is_infinite()) {
                *x = self.unreachable;
            }
        }
        Ok((t, order))
    }

    fn update(&self, c: usize, t: &[f64], accepted: &[bool]) -> f64 {
        let mut best = f64::INFINITY;
        for &(w, l) in &self.edges[c] {
            if accepted[w] {
                best = best.min(t[w] + l);
            }
        }
        for s in &self.stencils[c] {
            if accepted[s.a] && accepted[s.b] {
                best = best.min(triangle_update(s, t[s.a], t[s.b]));
            } else if accepted[s.a] {
                best = best.min(t[s.a] + s.la);
            } else if accepted[s.b] {
                best = best.min(t[s.b] + s.lb);
            }
        }
        best
    }
}

/// Virtual-source update of the vertex opposite edge `(a, b)`.
fn triangle_update(s: &Stencil, ta: f64, tb: f64) -> f64 {
    let fallback = (ta + s.la).min(tb + s.lb);
    let c = s.lab;
    // updated vertex at (vx, vy), vy > 0; a at origin, b at (c, 0)
    let vx = (s.la * s.la - s.lb * s.lb + c * c) / (2.0 * c);
    let vy = (s.la * s.la - vx * vx).max(0.0).sqrt();
    let sx = (ta * ta - tb * tb + c * c) / (2.0 * c);
    let sy2 = ta * ta - sx * sx;
    if !(sy2 >= 0.0) || vy <= 0.0 {
        return fallback;
    }
    let sy = -sy2.sqrt();
    let cross_x = sx + (vx - sx) * (-sy) / (vy - sy);
    if !(0.0..=c).contains(&cross_x) {
        return fallback;
    }
    let d = ((vx - sx).powi(2) + (vy - sy).powi(2)).sqrt();
    if d < ta.max(tb) {
        return fallback;
    }
    d.min(fallback)
}

/// Unfolds faces across the edge opposite an obtuse corner `c` until a
/// vertex lands inside the corner's angle. Returns that vertex and the
/// planar positions of `a`, it and `b` with `c` at the origin.
#[allow(clippy::too_many_arguments)]
fn unfold(
    v: &[[f64; 3]],
    faces: &[[usize; 3]],
    edge_faces: &HashMap<(usize, usize), Vec<usize>>,
    start_face: usize,
    c: usize,
    a: usize,
    b: usize,
) -> Option<(usize, P2, P2, P2)> {
    let la = dist(&v[c], &v[a]);
    let lb = dist(&v[c], &v[b]);
    let o = [0.0, 0.0];
    let pa0 = [la, 0.0];
    let pb0 = place(o, pa0, lb, dist(&v[a], &v[b]), 1.0);
    let orient = cross2(pa0, pb0).signum();
    let (mut ea, mut eb) = (a, b);
    let (mut pa, mut pb) = (pa0, pb0);
    let mut face = start_face;
    for _ in 0..MAX_UNFOLD_STEPS {
        let key = (ea.min(eb), ea.max(eb));
        let next = edge_faces.get(&key)?.iter().copied().find(|&f| f != face)?;
        let d = *faces[next].iter().find(|&&x| x != ea && x != eb)?;
        if d == c {
            return None;
        }
        // the new vertex lies on the far side of edge (ea, eb) from c
        let side = -cross2([pb[0] - pa[0], pb[1] - pa[1]], [-pa[0], -pa[1]]).signum();
        let pd = place(pa, pb, dist(&v[ea], &v[d]), dist(&v[eb], &v[d]), side);
        let inside_a = orient * cross2(pa0, pd) > 0.0;
        let inside_b = orient * cross2(pd, pb0) > 0.0;
        if inside_a && inside_b {
            return (len2(o, pd) > 0.0).then_some((d, pa0, pd, pb0));
        }
        if !inside_a {
            ea = d;
            pa = pd;
        } else {
            eb = d;
            pb = pd;
        }
        face = next;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Front(f64, usize);

impl Eq for Front {}
impl PartialOrd for Front {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Front {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Single-source fast marching.
pub fn fast_marching(mesh: &TriMesh, source: usize) -> Result<Vec<f64>> {
    FastMarching::new(mesh).distances(source)
}

/// All-pairs fast marching, symmetrized as `(D + Dᵀ)/2`, computed in
/// parallel over sources.
pub fn distance_matrix(mesh: &TriMesh) -> Result<GeodesicMatrix> {
    let n = mesh.num_vertices();
    if n > MAX_DENSE_VERTICES {
        return Err(Error::invalid(format!(
            "{n} vertices exceeds the dense distance-matrix limit of {MAX_DENSE_VERTICES}"
        )));
    }
    let fm = FastMarching::new(mesh);
    let mut d = vec![0f32; n * n];
    d.par_chunks_mut(n)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            let dist = fm.distances(i)?;
            for (r, x) in row.iter_mut().zip(dist) {
                *r = x as f32;
            }
            Ok(())
        })?;
    for i in 0..n {
        d[i * n + i] = 0.0;
        for j in 0..i {
            let s = (0.5 * (d[i * n + j] as f64 + d[j * n + i] as f64)) as f32;
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    GeodesicMatrix::from_row_major(n, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    fn dijkstra(mesh: &TriMesh, s: usize) -> Vec<f64> {
        let adj = mesh.vertex_neighbors();
        let v = mesh.vertices();
        let mut d = vec![f64::INFINITY; mesh.num_vertices()];
        let mut heap = BinaryHeap::new();
        d[s] = 0.0;
        heap.push(Front(0.0, s));
        while let Some(Front(x, u)) = heap.pop() {
            if x > d[u] {
                continue;
            }
            for &w in &adj[u] {
                let nd = x + dist(&v[u], &v[w]);
                if nd < d[w] {
                    d[w] = nd;
                    heap.push(Front(nd, w));
                }
            }
        }
        d
    }

    #[test]
    fn source_is_zero_and_bad_source_errors() {
        let m = shapes::icosphere(2, 1.0);
        let d = fast_marching(&m, 5).unwrap();
        assert_eq!(d[5], 0.0);
        assert!(fast_marching(&m, m.num_vertices()).is_err());
    }

    #[test]
    fn grid_corner_to_corner() {
        let g = shapes::grid(50, 1.0);
        let d = fast_marching(&g, 0).unwrap();
        let far = 50 * 51 + 50;
        assert!(((d[far] - 2f64.sqrt()) / 2f64.sqrt()).abs() <= 0.02);
        // the other corner is off the diagonal, so it exercises the triangle updates
        let other = 50 * 51;
        assert!((d[other] - 1.0).abs() <= 0.02);
    }

    #[test]
    fn never_exceeds_graph_distance_and_is_monotone() {
        for m in [shapes::grid(12, 1.0), shapes::figure(2)] {
            let fm = FastMarching::new(&m);
            for s in [0, 7, m.num_vertices() / 2] {
                let (d, order) = fm.run(s).unwrap();
                let g = dijkstra(&m, s);
                for i in 0..d.len() {
                    assert!(d[i] <= g[i] + 1e-6, "vertex {i}: {} > {}", d[i], g[i]);
                }
                for w in order.windows(2) {
                    assert!(d[w[0]] <= d[w[1]]);
                }
            }
        }
    }

    #[test]
    fn matrix_properties() {
        let m = shapes::figure(1);
        let d = distance_matrix(&m).unwrap();
        let n = d.n();
        for i in 0..n {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..n {
                assert!(d.get(i, j) >= 0.0);
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
        // a direct edge is always an admissible path
        for (a, b) in m.edges() {
            assert!(d.get(a, b) <= dist(&m.vertices()[a], &m.vertices()[b]) + 1e-6);
        }
    }

    #[test]
    fn relabeling_equivariance() {
        let m = shapes::figure(1);
        let n = m.num_vertices();
        let perm: Vec<usize> = (0..n).map(|i| (i * 11 + 3) % n).collect();
        assert!(crate::mesh::is_permutation(&perm));
        let d = distance_matrix(&m).unwrap();
        let dp = distance_matrix(&m.permuted(&perm).unwrap()).unwrap();
        let expect = d.permuted(&perm);
        for i in 0..n {
            for j in 0..n {
                assert!((dp.get(i, j) - expect.get(i, j)).abs() <= 1e-5 * d.diameter());
            }
        }
    }

    #[test]
    fn disconnected_components_are_finite() {
        let a = shapes::icosphere(0, 1.0);
        let mut verts = a.vertices().to_vec();
        let mut faces = a.faces().to_vec();
        let off = verts.len();
        verts.extend(a.vertices().iter().map(|p| [p[0] + 5.0, p[1], p[2]]));
        faces.extend(a.faces().iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        let m = TriMesh::new(verts, faces).unwrap();
        let d = fast_marching(&m, 0).unwrap();
        let expect = 10.0 * m.bounding_box_diagonal();
        assert!((d[off] - expect).abs() < 1e-12);
    }

    #[test]
    fn cache_roundtrip() {
        let d = distance_matrix(&shapes::icosphere(1, 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        d.save(&p).unwrap();
        assert_eq!(GeodesicMatrix::load(&p).unwrap(), d);
    }
}
