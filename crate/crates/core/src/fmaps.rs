//! Differentiable functional-map layers and losses.
//!
//! Data flow for a pair `(X, Y)`:
//! descriptors `F`, `G` → coefficients `F̂ = ΦᵀA F`, `Ĝ = ΨᵀB G` →
//! ridge least squares `C` with `C F̂ ≈ Ĝ` → soft map
//! `P = colnormalize(|Ψ C Φᵀ A|)`, `Q = P∘P` → loss.
//! Every layer has an explicit backward pass.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::geodesic::GeodesicMatrix;
use crate::net::Network;
use crate::precision::Precision;
use crate::spectral::SpectralBasis;

/// Default ridge, relative to `trace(F̂F̂ᵀ)/k`.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-3;

/// `C`: `k_Y × k_X`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMap {
    pub c: DMatrix<f64>,
}

/// What [`solve_fm_backward`] needs from the forward solve.
pub struct FmCache {
    f_hat: DMatrix<f64>,
    g_hat: DMatrix<f64>,
    c: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

/// `C = Ĝ F̂ᵀ (F̂ F̂ᵀ + ridge·I)⁻¹`.
pub fn solve_fm(f_hat: &DMatrix<f64>, g_hat: &DMatrix<f64>, ridge: f64) -> Result<(FunctionalMap, FmCache)> {
    if f_hat.ncols() != g_hat.ncols() || f_hat.ncols() == 0 {
        return Err(Error::dims(format!(
            "descriptor coefficients have {} and {} channels",
            f_hat.ncols(),
            g_hat.ncols()
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::invalid(format!("ridge must be non-negative, got {ridge}")));
    }
    if f_hat.iter().all(|&v| v == 0.0) && ridge == 0.0 {
        return Err(Error::numerical(
            "singular functional-map system: descriptors vanish on the source basis (all-zero SHOT? try a larger support radius); use a ridge > 0",
        ));
    }
    let kx = f_hat.nrows();
    let mut s = f_hat * f_hat.transpose();
    for i in 0..kx {
        s[(i, i)] += ridge;
    }
    let chol = Cholesky::new(s).ok_or_else(|| {
        Error::numerical(if ridge == 0.0 {
            "singular functional-map system; use a ridge > 0".to_string()
        } else {
            "functional-map system is not positive definite".to_string()
        })
    })?;
    // C S = Ĝ F̂ᵀ  ⇔  S Cᵀ = F̂ Ĝᵀ
    let c = chol.solve(&(f_hat * g_hat.transpose())).transpose();
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::numerical("functional map is not finite"));
    }
    Ok((
        FunctionalMap { c: c.clone() },
        FmCache {
            f_hat: f_hat.clone(),
            g_hat: g_hat.clone(),
            c,
            chol,
        },
    ))
}

/// Gradients `(∂L/∂F̂, ∂L/∂Ĝ, ∂L/∂ridge)` given `∂L/∂C`.
pub fn solve_fm_backward(
    cache: &FmCache,
    grad_c: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    if grad_c.shape() != cache.c.shape() {
        return Err(Error::dims("functional-map gradient has the wrong shape"));
    }
    // B = Ḡ S⁻¹, M = BᵀC
    let b = cache.chol.solve(&grad_c.transpose()).transpose();
    let m = b.transpose() * &cache.c;
    let grad_g = &b * &cache.f_hat;
    let grad_f = b.transpose() * &cache.g_hat - (&m + m.transpose()) * &cache.f_hat;
    Ok((grad_f, grad_g, -m.trace()))
}

/// `P` (column-normalized) and `Q = P∘P`, both `n_Y × n_X`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCorrespondence {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

pub struct SoftCorrCache {
    /// `Ψ C Φᵀ A` before |·| and normalization
    pre: DMatrix<f64>,
    col_norms: Vec<f64>,
}

pub fn soft_corr(
    fm: &FunctionalMap,
    basis_x: &SpectralBasis,
    basis_y: &SpectralBasis,
    precision: Precision,
) -> Result<(SoftCorrespondence, SoftCorrCache)> {
    let c = &fm.c;
    if c.nrows() != basis_y.k() || c.ncols() != basis_x.k() {
        return Err(Error::dims(format!(
            "functional map is {}×{}, bases have k_Y={} and k_X={}",
            c.nrows(),
            c.ncols(),
            basis_y.k(),
            basis_x.k()
        )));
    }
    let a_phi = basis_x.weighted(basis_x.phi());
    let pre = precision.mul_tr(&(basis_y.phi() * c), &a_phi);
    let mut p = pre.abs();
    let mut col_norms = Vec::with_capacity(p.ncols());
    for (i, mut col) in p.column_iter_mut().enumerate() {
        let nrm = col.norm();
        if nrm == 0.0 {
            return Err(Error::numerical(format!("degenerate soft map column {i}")));
        }
        col /= nrm;
        col_norms.push(nrm);
    }
    let q = p.component_mul(&p);
    Ok((SoftCorrespondence { p, q }, SoftCorrCache { pre, col_norms }))
}

/// `∂L/∂C` given `∂L/∂P`.
pub fn soft_corr_backward(
    cache: &SoftCorrCache,
    soft: &SoftCorrespondence,
    grad_p: &DMatrix<f64>,
    basis_x: &SpectralBasis,
    basis_y: &SpectralBasis,
    precision: Precision,
) -> Result<DMatrix<f64>> {
    if grad_p.shape() != soft.p.shape() {
        return Err(Error::dims("soft-map gradient has the wrong shape"));
    }
    let mut g_pre = grad_p.clone();
    for (i, mut col) in g_pre.column_iter_mut().enumerate() {
        let p = soft.p.column(i);
        let proj = p.dot(&col);
        let inv = 1.0 / cache.col_norms[i];
        for (j, g) in col.iter_mut().enumerate() {
            let a = cache.pre[(j, i)];
            let s = if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            };
            *g = s * (*g - p[j] * proj) * inv;
        }
    }
    // pre = Ψ C (AΦ)ᵀ  ⇒  ∂C = Ψᵀ ∂pre (AΦ)
    let a_phi = basis_x.weighted(basis_x.phi());
    let t = precision.tr_mul(basis_y.phi(), &g_pre);
    Ok(t * a_phi)
}

fn check_square(q: &DMatrix<f64>, d_x: &GeodesicMatrix, d_y: &GeodesicMatrix) -> Result<()> {
    if q.nrows() != d_y.n() || q.ncols() != d_x.n() {
        return Err(Error::dims(format!(
            "soft map is {}×{}, distance matrices are {} and {}",
            q.nrows(),
            q.ncols(),
            d_y.n(),
            d_x.n()
        )));
    }
    Ok(())
}

/// `‖D_X − QᵀD_Y Q‖²_F / n_X²` and its gradient with respect to `P`.
pub fn unsup_loss(
    soft: &SoftCorrespondence,
    d_x: &GeodesicMatrix,
    d_y: &GeodesicMatrix,
    precision: Precision,
) -> Result<(f64, DMatrix<f64>)> {
    check_square(&soft.q, d_x, d_y)?;
    unsup_loss_dense(soft, &d_x.to_dense(), &d_y.to_dense(), precision)
}

pub(crate) fn unsup_loss_dense(
    soft: &SoftCorrespondence,
    d_x: &DMatrix<f64>,
    d_y: &DMatrix<f64>,
    precision: Precision,
) -> Result<(f64, DMatrix<f64>)> {
    let q = &soft.q;
    if q.nrows() != d_y.nrows() || q.ncols() != d_x.nrows() {
        return Err(Error::dims("soft map does not match the distance matrices"));
    }
    let n = q.ncols() as f64;
    let dq = precision.mul(d_y, q);
    let r = precision.tr_mul(q, &dq) - d_x;
    let loss = r.norm_squared() / (n * n);
    // ∂L/∂Q = (2/n²)(D_Y Q R + D_Yᵀ Q Rᵀ) = (4/n²) D_Y Q R for symmetric D, R
    let grad_q = precision.mul(&dq, &r) * (4.0 / (n * n));
    let grad_p = soft.p.component_mul(&grad_q) * 2.0;
    Ok((loss, grad_p))
}

/// `(1/n_X) Σ_i Σ_j Q_ji · d_Y(j, gt(i))²` and its gradient with respect to `P`.
pub fn sup_loss(soft: &SoftCorrespondence, d_y: &GeodesicMatrix, gt: &[usize]) -> Result<(f64, DMatrix<f64>)> {
    let (ny, nx) = soft.q.shape();
    if ny != d_y.n() || gt.len() != nx {
        return Err(Error::dims(format!(
            "soft map is {ny}×{nx}, ground truth has {} entries, target has {} vertices",
            gt.len(),
            d_y.n()
        )));
    }
    if let Some(&bad) = gt.iter().find(|&&t| t >= ny) {
        return Err(Error::invalid(format!("ground-truth target {bad} out of range ({ny} vertices)")));
    }
    let scale = 1.0 / nx as f64;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(ny, nx);
    for (i, &t) in gt.iter().enumerate() {
        let drow = d_y.row(t);
        for j in 0..ny {
            let d2 = (drow[j] as f64).powi(2);
            loss += soft.q[(j, i)] * d2;
            grad[(j, i)] = 2.0 * scale * soft.p[(j, i)] * d2;
        }
    }
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Unsupervised,
    Supervised,
}

impl std::str::FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unsupervised" => Ok(LossMode::Unsupervised),
            "supervised" => Ok(LossMode::Supervised),
            _ => Err(format!("unknown mode {s:?} (expected unsupervised or supervised)")),
        }
    }
}

/// One side of a training pair: raw descriptors plus geometry.
#[derive(Clone, Copy)]
pub struct PipelineShape<'a> {
    pub descriptors: &'a DMatrix<f64>,
    pub basis: &'a SpectralBasis,
    pub distances: &'a GeodesicMatrix,
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub mode: LossMode,
    /// ridge = `ridge_scale · trace(F̂F̂ᵀ)/k_X`
    pub ridge_scale: f64,
    pub precision: Precision,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: LossMode::Unsupervised,
            ridge_scale: DEFAULT_RIDGE_SCALE,
            precision: Precision::F32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// loss of the configured mode
    pub loss: f64,
    pub unsup_loss: f64,
    /// monitored whenever ground truth is given
    pub sup_loss: Option<f64>,
    pub grads: Vec<f64>,
    pub fm: FunctionalMap,
}

fn ridge_for(f_hat: &DMatrix<f64>, scale: f64) -> f64 {
    scale * f_hat.norm_squared() / f_hat.nrows() as f64
}

/// Forward pass only: functional map and soft correspondence from `X` to `Y`.
pub fn predict(
    net: &Network,
    x: PipelineShape,
    y: PipelineShape,
    cfg: &PipelineConfig,
) -> Result<(FunctionalMap, SoftCorrespondence)> {
    let f = net.apply(x.descriptors, cfg.precision)?;
    let g = net.apply(y.descriptors, cfg.precision)?;
    let f_hat = x.basis.project(&f)?;
    let g_hat = y.basis.project(&g)?;
    let (fm, _) = solve_fm(&f_hat, &g_hat, ridge_for(&f_hat, cfg.ridge_scale))?;
    let (soft, _) = soft_corr(&fm, x.basis, y.basis, cfg.precision)?;
    Ok((fm, soft))
}

/// Full Siamese forward/backward for one ordered pair; gradients are with
/// respect to the shared network parameters.
pub fn pipeline_loss_and_grads(
    net: &Network,
    x: PipelineShape,
    y: PipelineShape,
    gt: Option<&[usize]>,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let prec = cfg.precision;
    let (f, cache_x) = net.forward(x.descriptors, prec)?;
    let (g, cache_y) = net.forward(y.descriptors, prec)?;
    let f_hat = x.basis.project(&f)?;
    let g_hat = y.basis.project(&g)?;
    let ridge = ridge_for(&f_hat, cfg.ridge_scale);
    let (fm, fm_cache) = solve_fm(&f_hat, &g_hat, ridge)?;
    let (soft, sc_cache) = soft_corr(&fm, x.basis, y.basis, prec)?;

    let (unsup, unsup_grad) = unsup_loss(&soft, x.distances, y.distances, prec)?;
    let sup = gt.map(|gt| sup_loss(&soft, y.distances, gt)).transpose()?;
    let (loss, grad_p) = match cfg.mode {
        LossMode::Unsupervised => (unsup, unsup_grad),
        LossMode::Supervised => {
            let (l, g) = sup
                .clone()
                .ok_or_else(|| Error::invalid("supervised mode needs a ground-truth map"))?;
            (l, g)
        }
    };
    if !loss.is_finite() {
        return Err(Error::numerical("loss is not finite"));
    }

    let grad_c = soft_corr_backward(&sc_cache, &soft, &grad_p, x.basis, y.basis, prec)?;
    let (mut grad_f_hat, grad_g_hat, grad_ridge) = solve_fm_backward(&fm_cache, &grad_c)?;
    // the ridge depends on F̂ through its trace
    grad_f_hat += &f_hat * (grad_ridge * 2.0 * cfg.ridge_scale / f_hat.nrows() as f64);
    // F̂ = ΦᵀA F  ⇒  ∂F = AΦ ∂F̂
    let grad_f = x.basis.weighted(&(x.basis.phi() * grad_f_hat));
    let grad_g = y.basis.weighted(&(y.basis.phi() * grad_g_hat));
    let (mut grads, _) = net.backward(&cache_x, &grad_f, prec)?;
    let (grads_y, _) = net.backward(&cache_y, &grad_g, prec)?;
    for (a, b) in grads.iter_mut().zip(grads_y) {
        *a += b;
    }
    Ok(PipelineOutput {
        loss,
        unsup_loss: unsup,
        sup_loss: sup.map(|(l, _)| l),
        grads,
        fm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn diagonal_system_by_hand() {
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let (fm, _) = solve_fm(&f, &g, 0.0).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert!((fm.c - want).abs().max() < 1e-12);
    }

    #[test]
    fn self_map_is_identity() {
        let f = random(5, 9, 1);
        let (fm, _) = solve_fm(&f, &f, 0.0).unwrap();
        assert!((fm.c - DMatrix::<f64>::identity(5, 5)).abs().max() < 1e-8);
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let (fm, _) = solve_fm(&random(3, 4, 2), &random(3, 4, 3), 1e12).unwrap();
        assert!(fm.c.abs().max() < 1e-10);
    }

    #[test]
    fn singular_without_ridge() {
        let f = DMatrix::zeros(3, 4);
        let err = solve_fm(&f, &random(3, 4, 3), 0.0).err().unwrap();
        assert!(err.to_string().contains("ridge > 0"));
    }

    #[test]
    fn fm_backward_matches_finite_differences() {
        let (f, g) = (random(4, 6, 4), random(4, 6, 5));
        let w = random(4, 4, 6);
        let ridge = 1e-3;
        let loss = |f: &DMatrix<f64>, g: &DMatrix<f64>, r: f64| solve_fm(f, g, r).unwrap().0.c.dot(&w);
        let (_, cache) = solve_fm(&f, &g, ridge).unwrap();
        let (gf, gg, gr) = solve_fm_backward(&cache, &w).unwrap();
        let h = 1e-6;
        for idx in 0..f.len() {
            let (mut a, mut b) = (f.clone(), f.clone());
            a[idx] += h;
            b[idx] -= h;
            let fd = (loss(&a, &g, ridge) - loss(&b, &g, ridge)) / (2.0 * h);
            assert!(close(fd, gf[idx], 1e-5), "F̂[{idx}]: {fd} vs {}", gf[idx]);
            let (mut a, mut b) = (g.clone(), g.clone());
            a[idx] += h;
            b[idx] -= h;
            let fd = (loss(&f, &a, ridge) - loss(&f, &b, ridge)) / (2.0 * h);
            assert!(close(fd, gg[idx], 1e-5));
        }
        let fd = (loss(&f, &g, ridge + h * 1e-3) - loss(&f, &g, ridge - h * 1e-3)) / (2e-3 * h);
        assert!(close(fd, gr, 1e-4), "{fd} vs {gr}");
        let (zf, zg, zr) = solve_fm_backward(&cache, &DMatrix::zeros(4, 4)).unwrap();
        assert!(zf.iter().chain(zg.iter()).all(|&x| x == 0.0) && zr == 0.0);
    }

    #[test]
    fn zero_residual_direction_is_second_order() {
        // Ĝ = C₀F̂ exactly; perturb F̂ along a direction orthogonal to its row space
        let f = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let c0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let g = &c0 * &f;
        let dir = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, -1.0]);
        let loss = |f: &DMatrix<f64>| (solve_fm(f, &g, 0.0).unwrap().0.c - &c0).norm_squared();
        let h = 1e-5;
        let fd = (loss(&(&f + &dir * h)) - loss(&(&f - &dir * h))) / (2.0 * h);
        assert!(fd.abs() <= 1e-8, "{fd}");
    }

    fn small_basis(subdiv: usize, k: usize) -> SpectralBasis {
        SpectralBasis::from_mesh(&shapes::icosphere(subdiv, 1.0), k).unwrap()
    }

    #[test]
    fn complete_self_map_is_identity() {
        let b = small_basis(1, 42);
        let fm = FunctionalMap { c: DMatrix::identity(42, 42) };
        let (s, _) = soft_corr(&fm, &b, &b, Precision::F64).unwrap();
        assert!((s.p - DMatrix::<f64>::identity(42, 42)).abs().max() < 1e-8);
    }

    #[test]
    fn constant_basis_gives_uniform_columns() {
        let b = small_basis(1, 1);
        let fm = FunctionalMap { c: DMatrix::identity(1, 1) };
        let (s, _) = soft_corr(&fm, &b, &b, Precision::F64).unwrap();
        let u = 1.0 / (42f64).sqrt();
        assert!(s.p.iter().all(|&p| (p - u).abs() < 1e-12));
    }

    #[test]
    fn columns_of_q_are_stochastic() {
        let b = small_basis(1, 8);
        let fm = FunctionalMap { c: random(8, 8, 7) };
        let (s, _) = soft_corr(&fm, &b, &b, Precision::F64).unwrap();
        for col in s.q.column_iter() {
            assert!((col.sum() - 1.0).abs() < 1e-6);
        }
        assert!(s.p.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn soft_corr_backward_matches_finite_differences() {
        let bx = small_basis(1, 6);
        let by = SpectralBasis::from_mesh(&shapes::figure(1), 5).unwrap();
        let c = random(5, 6, 8);
        let w = random(by.n(), bx.n(), 9);
        let loss = |c: &DMatrix<f64>| {
            soft_corr(&FunctionalMap { c: c.clone() }, &bx, &by, Precision::F64).unwrap().0.p.dot(&w)
        };
        let fm = FunctionalMap { c: c.clone() };
        let (s, cache) = soft_corr(&fm, &bx, &by, Precision::F64).unwrap();
        // zero-crossing guard
        assert!(cache.pre.iter().all(|x| x.abs() > 1e-6));
        let g = soft_corr_backward(&cache, &s, &w, &bx, &by, Precision::F64).unwrap();
        let h = 1e-6;
        for idx in 0..c.len() {
            let (mut a, mut b) = (c.clone(), c.clone());
            a[idx] += h;
            b[idx] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!(close(fd, g[idx], 1e-5), "C[{idx}]: {fd} vs {}", g[idx]);
        }
        // column normalization makes the radial direction flat
        let radial = g.dot(&c) / c.norm();
        assert!(radial.abs() < 1e-8, "{radial}");
        let z = soft_corr_backward(&cache, &s, &DMatrix::zeros(by.n(), bx.n()), &bx, &by, Precision::F64).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
    }

    fn geo(m: DMatrix<f64>) -> GeodesicMatrix {
        GeodesicMatrix::from_dense(&m).unwrap()
    }

    fn soft_from_p(p: DMatrix<f64>) -> SoftCorrespondence {
        let q = p.component_mul(&p);
        SoftCorrespondence { p, q }
    }

    #[test]
    fn uniform_two_point_loss() {
        let d = geo(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let s = soft_from_p(DMatrix::from_element(2, 2, 0.5f64.sqrt()));
        let (l, _) = unsup_loss(&s, &d, &d, Precision::F64).unwrap();
        assert!((l - 0.25).abs() < 1e-12);
    }

    #[test]
    fn permutation_of_isometric_pair_is_zero() {
        let dx = crate::geodesic::distance_matrix(&shapes::figure(1)).unwrap();
        let n = dx.n();
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        assert!(crate::mesh::is_permutation(&perm));
        let dy = dx.permuted(&perm);
        let p = DMatrix::from_fn(n, n, |j, i| if perm[i] == j { 1.0 } else { 0.0 });
        for prec in [Precision::F64, Precision::F32] {
            let (l, _) = unsup_loss(&soft_from_p(p.clone()), &dx, &dy, prec).unwrap();
            assert_eq!(l, 0.0);
        }
    }

    fn random_soft(ny: usize, nx: usize, seed: u64) -> SoftCorrespondence {
        let mut p = random(ny, nx, seed).abs();
        for mut col in p.column_iter_mut() {
            let nrm = col.norm();
            col /= nrm;
        }
        soft_from_p(p)
    }

    fn random_geo(n: usize, seed: u64) -> GeodesicMatrix {
        let r = random(n, n, seed).abs();
        let mut d = &r + r.transpose();
        d.fill_diagonal(0.0);
        geo(d)
    }

    #[test]
    fn unsup_gradient_matches_finite_differences() {
        let (dx, dy) = (random_geo(6, 10), random_geo(6, 11));
        let s = random_soft(6, 6, 12);
        let (_, g) = unsup_loss(&s, &dx, &dy, Precision::F64).unwrap();
        let h = 1e-6;
        for idx in 0..36 {
            let (mut a, mut b) = (s.p.clone(), s.p.clone());
            a[idx] += h;
            b[idx] -= h;
            let la = unsup_loss(&soft_from_p(a), &dx, &dy, Precision::F64).unwrap().0;
            let lb = unsup_loss(&soft_from_p(b), &dx, &dy, Precision::F64).unwrap().0;
            assert!(close((la - lb) / (2.0 * h), g[idx], 1e-5));
        }
    }

    #[test]
    fn sup_loss_oracles() {
        let dy = random_geo(5, 13);
        let gt = [2, 0, 4, 1, 3];
        let hard = soft_from_p(DMatrix::from_fn(5, 5, |j, i| if gt[i] == j { 1.0 } else { 0.0 }));
        assert_eq!(sup_loss(&hard, &dy, &gt).unwrap().0, 0.0);

        let uniform = soft_from_p(DMatrix::from_element(5, 5, (0.2f64).sqrt()));
        let mut want = 0.0;
        for &t in &gt {
            for j in 0..5 {
                want += 0.2 * dy.get(j, t).powi(2);
            }
        }
        want /= 5.0;
        // matrix form ‖P ∘ (D_Y Π*)‖²_F / n_X
        let dpi = DMatrix::from_fn(5, 5, |j, i| dy.get(j, gt[i]));
        let matrix_form = uniform.p.component_mul(&dpi).norm_squared() / 5.0;
        let got = sup_loss(&uniform, &dy, &gt).unwrap().0;
        assert!((got - want).abs() < 1e-12 && (got - matrix_form).abs() < 1e-12);

        let s = random_soft(5, 5, 14);
        let (_, g) = sup_loss(&s, &dy, &gt).unwrap();
        let h = 1e-6;
        for idx in 0..25 {
            let (mut a, mut b) = (s.p.clone(), s.p.clone());
            a[idx] += h;
            b[idx] -= h;
            let la = sup_loss(&soft_from_p(a), &dy, &gt).unwrap().0;
            let lb = sup_loss(&soft_from_p(b), &dy, &gt).unwrap().0;
            assert!(close((la - lb) / (2.0 * h), g[idx], 1e-5));
        }
        assert!(sup_loss(&s, &dy, &[0, 1, 2, 3, 9]).is_err());
    }

    #[test]
    fn zero_net_self_pair_full_basis() {
        let mesh = shapes::icosphere(1, 1.0);
        let n = mesh.num_vertices();
        let basis = SpectralBasis::from_mesh(&mesh, n).unwrap();
        let d = crate::geodesic::distance_matrix(&mesh).unwrap();
        let desc = random(n, 6 * 8, 15);
        let shape = PipelineShape { descriptors: &desc, basis: &basis, distances: &d };
        let cfg = PipelineConfig { ridge_scale: 0.0, precision: Precision::F64, ..Default::default() };
        // 48 channels over 42 coefficients: full rank
        let out = pipeline_loss_and_grads(&Network::zeros(1, 48), shape, shape, None, &cfg).unwrap();
        assert!((out.fm.c - DMatrix::<f64>::identity(n, n)).abs().max() < 1e-6);
        assert!(out.loss <= 1e-10, "{}", out.loss);
    }

    #[test]
    fn pipeline_gradient_matches_finite_differences() {
        let mx = shapes::figure(1);
        let my = shapes::pose_figure(&mx, &[0.3, -0.2, 0.1, 0.0, 0.25]);
        let (bx, by) = (SpectralBasis::from_mesh(&mx, 8).unwrap(), SpectralBasis::from_mesh(&my, 8).unwrap());
        let (dx, dy) = (
            crate::geodesic::distance_matrix(&mx).unwrap(),
            crate::geodesic::distance_matrix(&my).unwrap(),
        );
        let (fx, fy) = (random(mx.num_vertices(), 6, 16), random(my.num_vertices(), 6, 17));
        let gt: Vec<usize> = (0..mx.num_vertices()).collect();
        let net = Network::init(2, 6, 18);
        let x = PipelineShape { descriptors: &fx, basis: &bx, distances: &dx };
        let y = PipelineShape { descriptors: &fy, basis: &by, distances: &dy };
        for mode in [LossMode::Unsupervised, LossMode::Supervised] {
            let cfg = PipelineConfig { mode, precision: Precision::F64, ..Default::default() };
            let out = pipeline_loss_and_grads(&net, x, y, Some(&gt), &cfg).unwrap();
            let h = 1e-6;
            for k in (0..net.num_params()).step_by(7) {
                let mut a = net.clone();
                a.params_mut()[k] += h;
                let mut b = net.clone();
                b.params_mut()[k] -= h;
                let la = pipeline_loss_and_grads(&a, x, y, Some(&gt), &cfg).unwrap().loss;
                let lb = pipeline_loss_and_grads(&b, x, y, Some(&gt), &cfg).unwrap().loss;
                let fd = (la - lb) / (2.0 * h);
                assert!(close(fd, out.grads[k], 1e-4), "{mode:?} θ[{k}]: {fd} vs {}", out.grads[k]);
            }
        }
    }
}
