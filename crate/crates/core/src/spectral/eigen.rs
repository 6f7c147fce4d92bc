//! Smallest generalized eigenpairs of `W φ = λ M φ` with diagonal `M`.
//!
//! Small problems go through a dense symmetric eigensolver; larger ones use
//! shift-invert Lanczos with full reorthogonalization on the symmetric
//! operator `M^{1/2} (W − σM)^{-1} M^{1/2}`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sparse::{EnvelopeCholesky, SparseMatrix};
use crate::error::{Error, Result};

/// Problems up to this size are solved densely.
pub const DENSE_LIMIT: usize = 600;

/// Required relative residual `‖Wφ − λMφ‖ / ‖Mφ‖`.
pub const RESIDUAL_TOL: f64 = 1e-6;

pub struct EigenPairs {
    pub values: Vec<f64>,
    /// columns are M-orthonormal eigenvectors
    pub vectors: DMatrix<f64>,
}

pub fn smallest_eigenpairs(w: &SparseMatrix, mass: &[f64], k: usize) -> Result<EigenPairs> {
    let n = w.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("requested {k} eigenpairs of a {n}×{n} problem")));
    }
    if mass.len() != n || mass.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::invalid("mass must be positive and match the matrix size"));
    }
    if n <= DENSE_LIMIT || k * 3 >= n {
        dense(w, mass, k)
    } else {
        lanczos(w, mass, k)
    }
}

fn dense(w: &SparseMatrix, mass: &[f64], k: usize) -> Result<EigenPairs> {
    let n = w.dim();
    let inv_sqrt: Vec<f64> = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut b = w.to_dense();
    for j in 0..n {
        for i in 0..n {
            b[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    // symmetrize exactly against roundoff
    let b = (&b + b.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(b);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vectors = DMatrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for (c, &i) in idx.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[i]);
        for r in 0..n {
            vectors[(r, c)] = eig.eigenvectors[(r, i)] * inv_sqrt[r];
        }
    }
    Ok(EigenPairs { values, vectors })
}

/// Shift below the spectrum, scaled to the operator.
fn shift(w: &SparseMatrix, mass: &[f64]) -> f64 {
    let scale = (0..w.dim())
        .map(|i| w.get(i, i) / mass[i])
        .fold(0.0f64, f64::max)
        .max(1e-300);
    -1e-6 * scale
}

fn lanczos(w: &SparseMatrix, mass: &[f64], k: usize) -> Result<EigenPairs> {
    let n = w.dim();
    let sigma = shift(w, mass);
    let shifted = SparseMatrix::from_triplets(
        n,
        (0..n)
            .flat_map(|i| {
                let d = -sigma * mass[i];
                w.row(i)
                    .map(move |(j, v)| (i, j, v))
                    .chain(std::iter::once((i, i, d)))
                    .collect::<Vec<_>>()
            })
            .collect(),
    );
    let chol = EnvelopeCholesky::factor(&shifted)?;
    let sqrt_m: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = sqrt_m[i] * x[i];
        }
        chol.solve_in_place(out);
        for i in 0..n {
            out[i] *= sqrt_m[i];
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a9c);
    let mut steps = (2 * k + 20).min(n);
    loop {
        let (theta, y, converged) = run_lanczos(&apply, n, k, steps, &mut rng);
        if converged || steps == n {
            let mut values = Vec::with_capacity(k);
            let mut vectors = DMatrix::zeros(n, k);
            for c in 0..k {
                values.push(sigma + 1.0 / theta[c]);
                for r in 0..n {
                    vectors[(r, c)] = y[(r, c)] / sqrt_m[r];
                }
            }
            let mut pairs = EigenPairs { values, vectors };
            polish(&apply, &sqrt_m, sigma, &mut pairs);
            check_residuals(w, mass, &pairs)?;
            return Ok(pairs);
        }
        steps = (steps * 3 / 2).min(n);
    }
}

/// Returns the `k` largest Ritz values (descending), their vectors in the
/// symmetric frame, and whether all of them met the convergence estimate.
fn run_lanczos(
    apply: &impl Fn(&[f64], &mut [f64]),
    n: usize,
    k: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, DMatrix<f64>, bool) {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m + 1);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let random_unit = |rng: &mut ChaCha8Rng, basis: &[DVector<f64>]| {
        let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
        for _ in 0..2 {
            for q in basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let nrm = v.norm();
        v / nrm
    };
    basis.push(random_unit(rng, &[]));
    let mut w = vec![0.0; n];
    let mut last_beta = 0.0;
    for j in 0..m {
        apply(basis[j].as_slice(), &mut w);
        let mut wv = DVector::from_column_slice(&w);
        let a = basis[j].dot(&wv);
        alpha.push(a);
        // full reorthogonalization, twice for stability
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&wv);
                wv.axpy(-c, q, 1.0);
            }
        }
        let b = wv.norm();
        last_beta = b;
        if j + 1 == m {
            break;
        }
        let scale = alpha.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        if b <= 1e-13 * scale {
            // invariant subspace: restart with a fresh direction
            beta.push(0.0);
            basis.push(random_unit(rng, &basis));
        } else {
            beta.push(b);
            basis.push(wv / b);
        }
    }
    let steps = alpha.len();
    let mut t = DMatrix::zeros(steps, steps);
    for i in 0..steps {
        t[(i, i)] = alpha[i];
        if i + 1 < steps {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = nalgebra::SymmetricEigen::new(t);
    let mut idx: Vec<usize> = (0..steps).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut theta = Vec::with_capacity(k);
    let mut y = DMatrix::zeros(n, k);
    let mut converged = true;
    for (c, &i) in idx.iter().take(k).enumerate() {
        let th = eig.eigenvalues[i];
        theta.push(th);
        let s = eig.eigenvectors.column(i);
        if (last_beta * s[steps - 1]).abs() > 1e-12 * th.abs() {
            converged = false;
        }
        for (q, coef) in basis.iter().take(steps).zip(s.iter()) {
            let mut col = y.column_mut(c);
            col.axpy(*coef, q, 1.0);
        }
    }
    (theta, y, converged)
}

/// One block inverse-iteration step followed by Rayleigh–Ritz, which
/// tightens the residuals of nearly converged Ritz vectors.
fn polish(
    apply: &impl Fn(&[f64], &mut [f64]),
    sqrt_m: &[f64],
    sigma: f64,
    pairs: &mut EigenPairs,
) {
    let n = sqrt_m.len();
    let k = pairs.values.len();
    let mut y = DMatrix::zeros(n, k);
    for c in 0..k {
        for r in 0..n {
            y[(r, c)] = pairs.vectors[(r, c)] * sqrt_m[r];
        }
    }
    let mut z = DMatrix::zeros(n, k);
    let mut buf = vec![0.0; n];
    for c in 0..k {
        let col: Vec<f64> = y.column(c).iter().copied().collect();
        apply(&col, &mut buf);
        z.column_mut(c).copy_from_slice(&buf);
    }
    let q = z.qr().q();
    let mut oq = DMatrix::zeros(n, k);
    for c in 0..k {
        let col: Vec<f64> = q.column(c).iter().copied().collect();
        apply(&col, &mut buf);
        oq.column_mut(c).copy_from_slice(&buf);
    }
    let h = q.transpose() * &oq;
    let h = (&h + h.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(h);
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for (c, &i) in idx.iter().enumerate() {
        let th = eig.eigenvalues[i];
        pairs.values[c] = sigma + 1.0 / th;
        let v = &q * eig.eigenvectors.column(i);
        for r in 0..n {
            pairs.vectors[(r, c)] = v[r] / sqrt_m[r];
        }
    }
}

fn check_residuals(w: &SparseMatrix, mass: &[f64], pairs: &EigenPairs) -> Result<()> {
    let n = w.dim();
    let mut wx = vec![0.0; n];
    let mut worst = (0usize, 0.0f64);
    for (c, &lambda) in pairs.values.iter().enumerate() {
        let phi: Vec<f64> = pairs.vectors.column(c).iter().copied().collect();
        w.mul_vec(&phi, &mut wx);
        let mut r2 = 0.0;
        let mut a2 = 0.0;
        for i in 0..n {
            let mp = mass[i] * phi[i];
            r2 += (wx[i] - lambda * mp).powi(2);
            a2 += mp * mp;
        }
        let rel = (r2 / a2).sqrt();
        if rel > worst.1 {
            worst = (c, rel);
        }
    }
    if worst.1 > RESIDUAL_TOL {
        return Err(Error::numerical(format!(
            "eigensolver did not converge: relative residual {:.3e} for eigenpair {} \
             (tolerance {RESIDUAL_TOL:e})",
            worst.1, worst.0
        )));
    }
    Ok(())
}
