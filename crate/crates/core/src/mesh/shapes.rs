//! Procedural test shapes: icospheres, planar grids and an articulated
//! "figure" whose poses are near-isometric to each other.

use std::collections::HashMap;

use super::{dot, normalized, TriMesh, Vec3};

/// Subdivided icosahedron projected onto a sphere of the given radius.
///
/// Subdivision `s` yields `10·4^s + 2` vertices.
pub fn icosphere(subdivisions: usize, radius: f64) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalized)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
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
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(normalized([
                    0.5 * (p[0] + q[0]),
                    0.5 * (p[1] + q[1]),
                    0.5 * (p[2] + q[2]),
                ]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts
        .into_iter()
        .map(|v| [v[0] * radius, v[1] * radius, v[2] * radius])
        .collect();
    TriMesh::new(verts, faces).expect("icosphere is a valid mesh")
}

/// Regular planar grid over `[0, size]²` with `cells × cells` squares, each
/// split along its `(i, j)–(i+1, j+1)` diagonal. Vertex `(i, j)` has index
/// `j·(cells+1) + i`.
pub fn grid(cells: usize, size: f64) -> TriMesh {
    let m = cells + 1;
    let h = size / cells as f64;
    let mut verts = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            verts.push([i as f64 * h, j as f64 * h, 0.0]);
        }
    }
    let mut faces = Vec::with_capacity(2 * cells * cells);
    for j in 0..cells {
        for i in 0..cells {
            let v00 = j * m + i;
            let v10 = v00 + 1;
            let v01 = v00 + m;
            let v11 = v01 + 1;
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    TriMesh::new(verts, faces).expect("grid is a valid mesh")
}

/// One limb of the synthetic figure.
#[derive(Debug, Clone, Copy)]
struct Limb {
    dir: Vec3,
    length: f64,
    width: f64,
}

fn limbs() -> [Limb; 5] {
    // irregular directions and sizes so the figure has no intrinsic symmetry
    [
        Limb { dir: normalized([0.05, 1.0, 0.1]), length: 1.1, width: 0.35 },
        Limb { dir: normalized([0.9, -0.5, 0.2]), length: 0.9, width: 0.30 },
        Limb { dir: normalized([-0.85, -0.45, -0.1]), length: 0.7, width: 0.32 },
        Limb { dir: normalized([0.3, -0.2, -0.95]), length: 0.5, width: 0.40 },
        Limb { dir: normalized([-0.4, 0.3, 0.85]), length: 0.35, width: 0.45 },
    ]
}

fn figure_radius(u: &Vec3) -> f64 {
    let mut r = 1.0;
    for l in limbs() {
        let c = dot(u, &l.dir);
        let cos_w = l.width.cos();
        if c > cos_w {
            let t = (c - cos_w) / (1.0 - cos_w);
            r += l.length * t * t * (3.0 - 2.0 * t);
        }
    }
    r
}

/// Rest pose of an asymmetric five-limbed blob built on an icosphere.
pub fn figure(subdivisions: usize) -> TriMesh {
    let sphere = icosphere(subdivisions, 1.0);
    sphere
        .map_vertices(|v| {
            let r = figure_radius(v);
            [v[0] * r, v[1] * r, v[2] * r]
        })
        .expect("figure is a valid mesh")
}

/// Bends each limb of a figure (rest pose given by `rest`) about a joint
/// near its base. `angles[i]` is the bend of limb `i` in radians; missing
/// entries are treated as zero. The bend is blended smoothly across the
/// joint, so poses are near-isometric to the rest pose.
pub fn pose_figure(rest: &TriMesh, angles: &[f64]) -> TriMesh {
    let limbs = limbs();
    rest.map_vertices(|p| {
        let mut q = *p;
        for (i, l) in limbs.iter().enumerate() {
            let angle = angles.get(i).copied().unwrap_or(0.0);
            if angle == 0.0 {
                continue;
            }
            let joint = 1.0 + 0.15 * l.length;
            let span = 0.35 * l.length;
            let along = dot(p, &l.dir);
            let rel = normalized(*p);
            // only points inside the limb's cone move
            if dot(&rel, &l.dir) < (l.width * 1.1).cos() {
                continue;
            }
            let t = ((along - joint) / span).clamp(0.0, 1.0);
            let s = t * t * (3.0 - 2.0 * t);
            if s == 0.0 {
                continue;
            }
            // bend axis perpendicular to the limb direction
            let axis = normalized(super::cross(l.dir, [0.3, 0.2, 0.93]));
            let center = [l.dir[0] * joint, l.dir[1] * joint, l.dir[2] * joint];
            q = rotate_about(&q, &center, &axis, angle * s);
        }
        q
    })
    .expect("posed figure is a valid mesh")
}

fn rotate_about(p: &Vec3, center: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let v = super::sub(p, center);
    let (s, c) = angle.sin_cos();
    let k = axis;
    let kxv = super::cross(*k, v);
    let kdv = dot(k, &v);
    [
        center[0] + v[0] * c + kxv[0] * s + k[0] * kdv * (1.0 - c),
        center[1] + v[1] * c + kxv[1] * s + k[1] * kdv * (1.0 - c),
        center[2] + v[2] * c + kxv[2] * s + k[2] * kdv * (1.0 - c),
    ]
}

/// Rotation matrix (row-major) from an axis and angle.
pub fn rotation(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
    let k = normalized(axis);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * k[0] * k[0] + c, t * k[0] * k[1] - s * k[2], t * k[0] * k[2] + s * k[1]],
        [t * k[0] * k[1] + s * k[2], t * k[1] * k[1] + c, t * k[1] * k[2] - s * k[0]],
        [t * k[0] * k[2] - s * k[1], t * k[1] * k[2] + s * k[0], t * k[2] * k[2] + c],
    ]
}

/// Applies `x ↦ R x + t` to every vertex.
pub fn rigid_transform(mesh: &TriMesh, r: &[[f64; 3]; 3], t: Vec3) -> TriMesh {
    mesh.map_vertices(|v| {
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2] + t[0],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2] + t[1],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2] + t[2],
        ]
    })
    .expect("rigid motion preserves validity")
}
