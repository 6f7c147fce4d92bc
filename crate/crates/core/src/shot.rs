//! SHOT (signature of histograms of orientations) descriptors.
//!
//! Each vertex gets a local reference frame from the distance-weighted
//! covariance of its Euclidean neighbourhood. The neighbourhood sphere is
//! split into 32 volumes (8 azimuth × 2 elevation × 2 radial) and each volume
//! accumulates a histogram of `cos θ` between neighbour normals and the frame
//! normal over `bins + 1` bins, with quadrilinear soft binning. The full
//! signature is L2-normalized.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::geodesic::GeodesicMatrix;
use crate::mesh::{TriMesh, Vec3};

pub const SECTORS: usize = 32;
const AZIMUTH_SECTORS: usize = 8;
const SHOT_MAGIC: &[u8; 8] = b"FMSHOT01";

/// Fraction of the geodesic diameter used as the default support radius.
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.05;

/// Descriptor width for a given number of cosine bins.
pub fn descriptor_width(bins: usize) -> usize {
    SECTORS * (bins + 1)
}

/// Per-vertex descriptors, n×d, row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorField {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl DescriptorField {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::dims(format!("{} values for {n}×{d} descriptors", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("descriptor values must be finite"));
        }
        Ok(DescriptorField { n, d, values })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (n, d) = m.shape();
        let values = (0..n)
            .flat_map(|i| (0..d).map(move |j| m[(i, j)] as f32))
            .collect();
        Self::new(n, d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.d, |i, j| self.values[i * self.d + j] as f64)
    }

    /// Relabels rows so that new row `perm[i]` is old row `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut values = vec![0f32; self.values.len()];
        for (old, &new) in perm.iter().enumerate() {
            values[new * self.d..(new + 1) * self.d].copy_from_slice(self.row(old));
        }
        DescriptorField {
            n: self.n,
            d: self.d,
            values,
        }
    }

    /// Binary layout: magic `FMSHOT01`, `n: u64`, `d: u64`, row-major f32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::new(SHOT_MAGIC);
        w.u64(self.n as u64);
        w.u64(self.d as u64);
        w.f32s(self.values.iter().copied());
        w.write_atomic(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = Reader::open(path.as_ref(), SHOT_MAGIC)?;
        let n = r.len()?;
        let d = r.len()?;
        let values = r.f32s(n * d)?;
        r.finish()?;
        Self::new(n, d, values)
    }
}

/// How well-determined a vertex's local reference frame is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameQuality {
    /// `min(λ1−λ2, λ2−λ3) / λ1` of the weighted covariance
    pub eigengap: f64,
    /// smallest `|#positive − #negative|` of the two sign votes
    pub vote_margin: usize,
    /// smallest `|cos|` between a neighbour offset and either voting axis;
    /// tiny values mean a perturbation could flip a vote
    pub vote_clearance: f64,
    /// the frame came from the normal-based fallback
    pub fallback: bool,
    /// no frame could be built; the descriptor is zero
    pub degenerate: bool,
}

/// `0.05 ×` the geodesic diameter.
pub fn default_radius(d: &GeodesicMatrix) -> Result<f64> {
    let diameter = d.diameter();
    if !(diameter > 0.0) {
        return Err(Error::invalid("degenerate diameter"));
    }
    Ok(DEFAULT_RADIUS_FRACTION * diameter)
}

pub fn shot_descriptors(mesh: &TriMesh, radius: f64, bins: usize) -> Result<DescriptorField> {
    shot_with_frames(mesh, radius, bins).map(|(f, _)| f)
}

/// SHOT descriptors together with per-vertex frame diagnostics.
pub fn shot_with_frames(
    mesh: &TriMesh,
    radius: f64,
    bins: usize,
) -> Result<(DescriptorField, Vec<FrameQuality>)> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!("SHOT radius must be positive, got {radius}")));
    }
    if bins == 0 {
        return Err(Error::invalid("SHOT needs at least one cosine bin"));
    }
    let points = mesh.vertices();
    let normals = mesh.vertex_normals();
    let grid = Grid::new(points, radius);
    let width = descriptor_width(bins);
    let per_vertex: Vec<(Vec<f32>, FrameQuality)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let nbrs = grid.within(points, i, radius);
            describe(points, &normals, i, &nbrs, radius, bins)
        })
        .collect();
    let mut values = Vec::with_capacity(points.len() * width);
    let mut quality = Vec::with_capacity(points.len());
    let mut isolated = 0;
    for (desc, q) in per_vertex {
        if q.degenerate {
            isolated += 1;
        }
        values.extend(desc);
        quality.push(q);
    }
    if isolated > 0 {
        log::warn!("{isolated} vertices have degenerate SHOT support; their descriptors are zero");
    }
    Ok((DescriptorField::new(points.len(), width, values)?, quality))
}

struct Grid {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl Grid {
    fn new(points: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Grid { cell, cells }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ]
    }

    /// Neighbours strictly within `r` (excluding the query), sorted by index.
    fn within(&self, points: &[Vec3], i: usize, r: f64) -> Vec<usize> {
        let p = points[i];
        let k = Self::key(&p, self.cell);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(c) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in c {
                            if j != i && crate::mesh::dist(&p, &points[j]) < r {
                                out.push(j);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn to_v(p: &Vec3) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Majority sign vote; a tied count falls back to the sign of the
/// distance-weighted projection sum.
///
/// Also returns the count margin and a clearance measuring how far the
/// decision is from flipping.
fn disambiguate(
    axis: Vector3<f64>,
    deltas: &[Vector3<f64>],
    radius: f64,
) -> (Vector3<f64>, usize, f64) {
    let pos = deltas.iter().filter(|d| d.dot(&axis) >= 0.0).count();
    let neg = deltas.len() - pos;
    let margin = pos.abs_diff(neg);
    if margin == 0 {
        let (mut sum, mut scale) = (0.0, 0.0);
        for d in deltas {
            let r = d.norm();
            sum += (radius - r) * d.dot(&axis);
            scale += (radius - r) * r;
        }
        let clearance = if scale > 0.0 { sum.abs() / scale } else { 0.0 };
        return (if sum < 0.0 { -axis } else { axis }, 0, clearance);
    }
    let clearance = deltas
        .iter()
        .map(|d| (d.dot(&axis) / d.norm()).abs())
        .fold(f64::INFINITY, f64::min);
    (if neg > pos { -axis } else { axis }, margin, clearance)
}

fn local_frame(
    center: &Vec3,
    normal: &Vec3,
    points: &[Vec3],
    nbrs: &[usize],
    radius: f64,
) -> Option<([Vector3<f64>; 3], FrameQuality)> {
    let c = to_v(center);
    let deltas: Vec<Vector3<f64>> = nbrs.iter().map(|&j| to_v(&points[j]) - c).collect();
    let mut cov = Matrix3::zeros();
    let mut wsum = 0.0;
    for d in &deltas {
        let w = radius - d.norm();
        cov += d * d.transpose() * w;
        wsum += w;
    }
    if deltas.len() < 3 || !(wsum > 0.0) {
        return None;
    }
    cov /= wsum;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l = idx.map(|i| eig.eigenvalues[i]);
    if !(l[0] > 0.0) {
        return None;
    }
    let eigengap = ((l[0] - l[1]).min(l[1] - l[2]) / l[0]).max(0.0);
    let rank_deficient = l[1] <= 1e-10 * l[0];
    let (x, z, fallback) = if !rank_deficient {
        (
            eig.eigenvectors.column(idx[0]).into_owned(),
            eig.eigenvectors.column(idx[2]).into_owned(),
            false,
        )
    } else {
        // collinear support: normal for z, principal direction in the tangent plane for x
        let z = to_v(normal);
        if !(z.norm() > 0.5) {
            return None;
        }
        let mean = deltas.iter().sum::<Vector3<f64>>() / deltas.len() as f64;
        let mut pca = Matrix3::zeros();
        for d in &deltas {
            let e = d - mean;
            pca += e * e.transpose();
        }
        let e2 = SymmetricEigen::new(pca);
        let best = e2.eigenvalues.imax();
        let dir = e2.eigenvectors.column(best).into_owned();
        let tangent = dir - z * z.dot(&dir);
        if !(tangent.norm() > 1e-8) {
            return None;
        }
        (tangent.normalize(), z, true)
    };
    let (x, mx, cx) = disambiguate(x, &deltas, radius);
    let (z, mz, cz) = disambiguate(z, &deltas, radius);
    let y = z.cross(&x);
    Some((
        [x, y, z],
        FrameQuality {
            eigengap,
            vote_margin: mx.min(mz),
            vote_clearance: cx.min(cz),
            fallback,
            degenerate: false,
        },
    ))
}

/// Linear weights between a bin and one neighbour: `(self, other, w_self, w_other)`.
type Split = [(usize, f64); 2];

fn describe(
    points: &[Vec3],
    normals: &[Vec3],
    i: usize,
    nbrs: &[usize],
    radius: f64,
    bins: usize,
) -> (Vec<f32>, FrameQuality) {
    let width = descriptor_width(bins);
    let zero = || {
        (
            vec![0f32; width],
            FrameQuality {
                eigengap: 0.0,
                vote_margin: 0,
                vote_clearance: 0.0,
                fallback: false,
                degenerate: true,
            },
        )
    };
    let Some(([fx, fy, fz], quality)) = local_frame(&points[i], &normals[i], points, nbrs, radius)
    else {
        return zero();
    };
    let c = to_v(&points[i]);
    let mut hist = vec![0f64; width];
    let nb = bins + 1;
    for &j in nbrs {
        let d = to_v(&points[j]) - c;
        let r = d.norm();
        if r <= 0.0 {
            continue;
        }
        let (lx, ly, lz) = (d.dot(&fx), d.dot(&fy), d.dot(&fz));
        let cos = to_v(&normals[j]).dot(&fz).clamp(-1.0, 1.0);

        // cosine: bins+1 centres on [0, bins]
        let s = (1.0 + cos) * 0.5 * bins as f64;
        let lo = (s.floor() as usize).min(bins);
        let t = s - lo as f64;
        let cos_split: Split = [(lo, 1.0 - t), ((lo + 1).min(bins), t)];

        // azimuth: 8 sectors, centres at -7π/8 + k·π/4, wrapping
        let az = ly.atan2(lx);
        let span = PI / 4.0;
        let pos = (az + PI) / span - 0.5;
        let k0 = pos.floor();
        let ta = pos - k0;
        let k0 = (k0 as i64).rem_euclid(AZIMUTH_SECTORS as i64) as usize;
        let az_split: Split = [(k0, 1.0 - ta), ((k0 + 1) % AZIMUTH_SECTORS, ta)];

        // elevation: lower/upper hemisphere, centres at 135° and 45°
        let incl = (lz / r).clamp(-1.0, 1.0).acos();
        let e = ((PI * 0.75 - incl) / (PI * 0.5)).clamp(0.0, 1.0);
        let el_split: Split = [(0, 1.0 - e), (1, e)];

        // radial: inner/outer shell, centres at R/4 and 3R/4
        let q = ((r - radius * 0.25) / (radius * 0.5)).clamp(0.0, 1.0);
        let rad_split: Split = [(0, 1.0 - q), (1, q)];

        for &(a, wa) in &az_split {
            for &(el, we) in &el_split {
                for &(rr, wr) in &rad_split {
                    let w = wa * we * wr;
                    if w == 0.0 {
                        continue;
                    }
                    let volume = (a * 2 + el) * 2 + rr;
                    for &(b, wb) in &cos_split {
                        hist[volume * nb + b] += w * wb;
                    }
                }
            }
        }
    }
    let norm = hist.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return zero();
    }
    (hist.iter().map(|x| (x / norm) as f32).collect(), quality)
}
