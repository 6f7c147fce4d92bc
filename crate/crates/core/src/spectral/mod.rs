//! Cotangent Laplace–Beltrami operator, truncated eigenbases, and spectral
//! projection/synthesis of vertex fields.

mod eigen;
pub mod sparse;

use std::path::Path;

use nalgebra::DMatrix;

pub use eigen::{DENSE_LIMIT, RESIDUAL_TOL};
pub use sparse::SparseMatrix;

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::mesh::{cross, dot, sub, TriMesh};

/// Cotangents are clamped to this magnitude for near-degenerate triangles.
pub const COT_CLAMP: f64 = 1e4;

const BASIS_MAGIC: &[u8; 8] = b"FMBASIS1";

/// Assembles the positive semi-definite cotangent stiffness matrix and the
/// lumped mass (vertex areas).
///
/// Off-diagonal entries are `-(cot α + cot β)/2` over the angles opposite
/// each edge (a single angle on boundary edges); the diagonal makes every
/// row sum to zero.
pub fn cotan_laplacian(mesh: &TriMesh) -> (SparseMatrix, Vec<f64>) {
    let n = mesh.num_vertices();
    let v = mesh.vertices();
    let mut off: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.num_faces() * 3);
    for f in mesh.faces() {
        for k in 0..3 {
            let (i, j, o) = (f[(k + 1) % 3], f[(k + 2) % 3], f[k]);
            let e1 = sub(&v[i], &v[o]);
            let e2 = sub(&v[j], &v[o]);
            let s = crate::mesh::norm(cross(e1, e2));
            let cot = if s > 0.0 {
                (dot(&e1, &e2) / s).clamp(-COT_CLAMP, COT_CLAMP)
            } else {
                COT_CLAMP.copysign(dot(&e1, &e2))
            };
            off.push((i.min(j), i.max(j), -0.5 * cot));
        }
    }
    off.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut trip = Vec::with_capacity(off.len() * 2 + n);
    let mut diag = vec![0.0; n];
    let mut it = off.into_iter().peekable();
    while let Some((i, j, mut w)) = it.next() {
        while let Some(&(i2, j2, w2)) = it.peek() {
            if (i2, j2) != (i, j) {
                break;
            }
            w += w2;
            it.next();
        }
        trip.push((i, j, w));
        trip.push((j, i, w));
        diag[i] -= w;
        diag[j] -= w;
    }
    trip.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
    (
        SparseMatrix::from_triplets(n, trip),
        mesh.vertex_areas().to_vec(),
    )
}

/// Truncated Laplace–Beltrami eigenbasis with its mass weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// n×k, columns are eigenfunctions, `ΦᵀAΦ = I`
    phi: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    mass: Vec<f64>,
}

/// The `k` smallest generalized eigenpairs of `W φ = λ A φ`, A-orthonormal
/// and sign-canonicalized (largest-magnitude entry positive).
pub fn eig_basis(stiffness: &SparseMatrix, mass: &[f64], k: usize) -> Result<SpectralBasis> {
    let pairs = eigen::smallest_eigenpairs(stiffness, mass, k)?;
    let mut phi = pairs.vectors;
    for mut col in phi.column_iter_mut() {
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(SpectralBasis {
        phi,
        eigenvalues: pairs.values,
        mass: mass.to_vec(),
    })
}

impl SpectralBasis {
    /// Cotangent Laplacian plus eigendecomposition in one step.
    pub fn from_mesh(mesh: &TriMesh, k: usize) -> Result<Self> {
        let (w, m) = cotan_laplacian(mesh);
        eig_basis(&w, &m, k)
    }

    pub fn from_parts(phi: DMatrix<f64>, eigenvalues: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        if phi.ncols() != eigenvalues.len() || phi.nrows() != mass.len() {
            return Err(Error::dims(format!(
                "basis {}×{} with {} eigenvalues and {} masses",
                phi.nrows(),
                phi.ncols(),
                eigenvalues.len(),
                mass.len()
            )));
        }
        Ok(SpectralBasis {
            phi,
            eigenvalues,
            mass,
        })
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Keeps only the first `k` eigenpairs.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k() {
            return Err(Error::invalid(format!(
                "cannot truncate a {}-function basis to {k}",
                self.k()
            )));
        }
        Ok(SpectralBasis {
            phi: self.phi.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            mass: self.mass.clone(),
        })
    }

    /// Coefficients `ΦᵀA·field` of an n×d field.
    pub fn project(&self, field: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if field.nrows() != self.n() {
            return Err(Error::dims(format!(
                "field has {} rows, basis has {} vertices",
                field.nrows(),
                self.n()
            )));
        }
        Ok(self.phi.transpose() * self.weighted(field))
    }

    /// `A·field` without the projection.
    pub(crate) fn weighted(&self, field: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = field.clone();
        for (mut row, &m) in out.row_iter_mut().zip(&self.mass) {
            row *= m;
        }
        out
    }

    /// Synthesis `Φ·coeffs`.
    pub fn reconstruct(&self, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if coeffs.nrows() != self.k() {
            return Err(Error::dims(format!(
                "coefficients have {} rows, basis has {} functions",
                coeffs.nrows(),
                self.k()
            )));
        }
        Ok(&self.phi * coeffs)
    }

    /// Relabels vertices so that new vertex `perm[i]` is old vertex `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n();
        let mut phi = DMatrix::zeros(n, self.k());
        let mut mass = vec![0.0; n];
        for (old, &new) in perm.iter().enumerate() {
            phi.set_row(new, &self.phi.row(old));
            mass[new] = self.mass[old];
        }
        SpectralBasis {
            phi,
            eigenvalues: self.eigenvalues.clone(),
            mass,
        }
    }

    /// Binary layout: magic `FMBASIS1`, `n: u64`, `k: u64`, Φ row-major as
    /// f64, k eigenvalues f64, n masses f64.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::new(BASIS_MAGIC);
        w.u64(self.n() as u64);
        w.u64(self.k() as u64);
        w.f64s((0..self.n()).flat_map(|r| (0..self.k()).map(move |c| self.phi[(r, c)])));
        w.f64s(self.eigenvalues.iter().copied());
        w.f64s(self.mass.iter().copied());
        w.write_atomic(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = Reader::open(path.as_ref(), BASIS_MAGIC)?;
        let n = r.len()?;
        let k = r.len()?;
        let phi = DMatrix::from_row_slice(n, k, &r.f64s(n * k)?);
        let eigenvalues = r.f64s(k)?;
        let mass = r.f64s(n)?;
        r.finish()?;
        SpectralBasis::from_parts(phi, eigenvalues, mass)
    }
}
