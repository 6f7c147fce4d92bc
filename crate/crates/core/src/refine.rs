//! Point-wise maps: extraction from soft maps, bijective refinement with the
//! product manifold filter (PMF), and robust upscaling of low-resolution
//! matches to a full-resolution functional map.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fmaps::{FunctionalMap, SoftCorrespondence};
use crate::mesh::{self, TriMesh};
use crate::spectral::SpectralBasis;

/// A map from the vertices of `X` to the vertices of `Y`; entries may be
/// unmatched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointMap {
    targets: Vec<Option<usize>>,
    n_y: usize,
    bijective: bool,
}

impl PointMap {
    pub fn new(targets: Vec<usize>, n_y: usize) -> Result<Self> {
        Self::partial(targets.into_iter().map(Some).collect(), n_y)
    }

    pub fn partial(targets: Vec<Option<usize>>, n_y: usize) -> Result<Self> {
        if let Some((i, t)) = targets
            .iter()
            .enumerate()
            .find_map(|(i, t)| t.filter(|&t| t >= n_y).map(|t| (i, t)))
        {
            return Err(Error::invalid(format!("vertex {i} maps to {t}, target has {n_y} vertices")));
        }
        Ok(PointMap {
            targets,
            n_y,
            bijective: false,
        })
    }

    pub fn identity(n: usize) -> Self {
        PointMap {
            targets: (0..n).map(Some).collect(),
            n_y: n,
            bijective: true,
        }
    }

    /// Marks the map bijective after checking that it is a permutation.
    pub fn into_bijective(mut self) -> Result<Self> {
        if !self.is_permutation() {
            return Err(Error::invalid("map is not a permutation"));
        }
        self.bijective = true;
        Ok(self)
    }

    /// Source vertex count.
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn get(&self, i: usize) -> Option<usize> {
        self.targets.get(i).copied().flatten()
    }

    pub fn targets(&self) -> &[Option<usize>] {
        &self.targets
    }

    pub fn num_matched(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    /// All targets, if every source vertex is matched.
    pub fn complete(&self) -> Option<Vec<usize>> {
        self.targets.iter().copied().collect()
    }

    pub fn is_bijective(&self) -> bool {
        self.bijective
    }

    /// Checks the permutation property directly.
    pub fn is_permutation(&self) -> bool {
        self.targets.len() == self.n_y
            && self
                .complete()
                .is_some_and(|t| mesh::is_permutation(&t))
    }

    /// Writes `# corrmap v1 n_X n_Y` followed by one `src tgt` line per
    /// matched source vertex.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = format!("# corrmap v1 {} {}\n", self.len(), self.n_y);
        for (i, t) in self.targets.iter().enumerate() {
            if let Some(t) = t {
                writeln!(s, "{i} {t}").unwrap();
            }
        }
        mesh::io::write_file(path.as_ref(), s.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let (n_x, n_y) = lines
            .next()
            .and_then(|(_, h)| {
                let f: Vec<&str> = h.split_whitespace().collect();
                match f.as_slice() {
                    ["#", "corrmap", "v1", nx, ny] => Some((nx.parse().ok()?, ny.parse().ok()?)),
                    _ => None,
                }
            })
            .ok_or("missing or malformed `# corrmap v1 n_X n_Y` header")?;
        let mut targets: Vec<Option<usize>> = vec![None; n_x];
        for (ln, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let parsed = match f.as_slice() {
                [a, b] => a.parse::<usize>().ok().zip(b.parse::<usize>().ok()),
                _ => None,
            };
            let (s, t) = parsed.ok_or_else(|| format!("line {}: expected `src tgt`", ln + 1))?;
            if s >= n_x || t >= n_y {
                return Err(format!("line {}: pair ({s}, {t}) out of range", ln + 1));
            }
            if targets[s].replace(t).is_some() {
                return Err(format!("line {}: source {s} listed twice", ln + 1));
            }
        }
        Ok(PointMap {
            targets,
            n_y,
            bijective: false,
        })
    }
}

fn argmax_lowest(col: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in col.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// Column-wise argmax of `P`; ties go to the lowest index.
pub fn extract_map(soft: &SoftCorrespondence) -> PointMap {
    let targets = soft
        .p
        .column_iter()
        .map(|c| Some(argmax_lowest(c.iter().copied())))
        .collect();
    PointMap {
        targets,
        n_y: soft.p.nrows(),
        bijective: false,
    }
}

/// Same result as `extract_map(soft_corr(fm, ..))`, without materializing
/// the dense `n_Y × n_X` matrix.
pub fn extract_map_from_fm(fm: &FunctionalMap, basis_x: &SpectralBasis, basis_y: &SpectralBasis) -> Result<PointMap> {
    if fm.c.nrows() != basis_y.k() || fm.c.ncols() != basis_x.k() {
        return Err(Error::dims("functional map does not match the bases"));
    }
    const CHUNK: usize = 512;
    let psi_c = basis_y.phi() * &fm.c;
    let nx = basis_x.n();
    let mut targets = Vec::with_capacity(nx);
    for start in (0..nx).step_by(CHUNK) {
        let rows = CHUNK.min(nx - start);
        let block = &psi_c * basis_x.phi().rows(start, rows).transpose();
        targets.extend(block.column_iter().map(|c| Some(argmax_lowest(c.iter().map(|v| v.abs())))));
    }
    Ok(PointMap {
        targets,
        n_y: basis_y.n(),
        bijective: false,
    })
}

/// Exact maximum-weight perfect matching: returns `π` maximizing
/// `Σ_i score(i, π(i))`.
///
/// Shortest augmenting paths with dual potentials (Hungarian / Jonker–Volgenant
/// family), `O(n³)`.
pub fn lap_solve(score: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = score.nrows();
    if score.ncols() != n {
        return Err(Error::dims(format!("assignment scores must be square, got {:?}", score.shape())));
    }
    if score.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("assignment scores must be finite"));
    }
    // minimize cost = -score; 1-based with a virtual column 0
    let cost = |i: usize, j: usize| -score[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != 0, "assignment is infeasible");
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    assert!(mesh::is_permutation(&perm), "assignment produced a non-permutation");
    Ok(perm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmfConfig {
    pub iterations: usize,
    /// heat-kernel time of the first iteration
    pub t_start: f64,
    /// heat-kernel time of the last iteration
    pub t_end: f64,
}

pub const DEFAULT_PMF_ITERATIONS: usize = 10;

impl PmfConfig {
    /// Times geometric from `diameter²/10` down to `diameter²/1000`.
    pub fn for_diameter(diameter: f64, iterations: usize) -> Self {
        let d2 = diameter * diameter;
        PmfConfig {
            iterations,
            t_start: d2 / 10.0,
            t_end: d2 / 1000.0,
        }
    }

    pub fn time(&self, it: usize) -> f64 {
        if self.iterations <= 1 {
            return self.t_start;
        }
        let s = it as f64 / (self.iterations - 1) as f64;
        self.t_start * (self.t_end / self.t_start).powf(s)
    }
}

/// Objective values around one PMF iteration, both at that iteration's time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmfStep {
    pub t: f64,
    pub before: f64,
    pub after: f64,
}

/// `A^{1/2} Φ` restricted to `rows`.
fn scaled_rows(basis: &SpectralBasis, rows: &[usize]) -> DMatrix<f64> {
    let phi = basis.phi();
    DMatrix::from_fn(rows.len(), basis.k(), |r, c| phi[(rows[r], c)] * basis.mass()[rows[r]].sqrt())
}

struct Kernel {
    /// `A^{1/2}Φ` on the active vertices
    phi: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl Kernel {
    fn weights(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.eigenvalues.len(), self.eigenvalues.iter().map(|l| (-l.max(0.0) * t).exp()))
    }
}

/// `M = Φ̃_Xᵀ Π Φ̃_Y`, the map in the product of spectral domains.
fn spectral_coupling(kx: &Kernel, ky: &Kernel, map: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(kx.phi.ncols(), ky.phi.ncols());
    for (i, &j) in map.iter().enumerate() {
        m.ger(1.0, &kx.phi.row(i).transpose(), &ky.phi.row(j).transpose(), 1.0);
    }
    m
}

/// `⟨Π, K̃_X Π K̃_Y⟩ = Σ_ab e_X(a) e_Y(b) M_ab²`.
fn pmf_objective(m: &DMatrix<f64>, ex: &DVector<f64>, ey: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for b in 0..m.ncols() {
        for a in 0..m.nrows() {
            s += ex[a] * ey[b] * m[(a, b)] * m[(a, b)];
        }
    }
    s
}

fn pmf_square(kx: &Kernel, ky: &Kernel, init: Vec<usize>, cfg: &PmfConfig) -> Result<(Vec<usize>, Vec<PmfStep>)> {
    let mut map = init;
    let mut steps = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let t = cfg.time(it);
        let (ex, ey) = (kx.weights(t), ky.weights(t));
        let m = spectral_coupling(kx, ky, &map);
        let before = pmf_objective(&m, &ex, &ey);
        // score = K̃_X Π K̃_Y = (Φ̃_X E_X) M (E_Y Φ̃_Yᵀ)
        let left = &kx.phi * DMatrix::from_diagonal(&ex) * &m;
        let right = DMatrix::from_diagonal(&ey) * ky.phi.transpose();
        let score = left * right;
        map = lap_solve(&score)?;
        let after = pmf_objective(&spectral_coupling(kx, ky, &map), &ex, &ey);
        log::debug!("pmf iteration {it}: t={t:.4e} objective {before:.6e} -> {after:.6e}");
        steps.push(PmfStep { t, before, after });
    }
    Ok((map, steps))
}

/// Farthest-point sampling of `m` vertices in the spectral embedding.
fn farthest_points(emb: &DMatrix<f64>, m: usize) -> Vec<usize> {
    let n = emb.nrows();
    let mut chosen = Vec::with_capacity(m);
    let mut dist = vec![f64::INFINITY; n];
    let mut next = 0;
    while chosen.len() < m {
        chosen.push(next);
        for i in 0..n {
            let d = (emb.row(i) - emb.row(next)).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
        }
        next = argmax_lowest(dist.iter().copied());
    }
    chosen.sort_unstable();
    chosen
}

fn nearest(emb: &DMatrix<f64>, i: usize, among: &[usize]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (r, &j) in among.iter().enumerate() {
        let d = (emb.row(i) - emb.row(j)).norm_squared();
        if d < best.1 {
            best = (r, d);
        }
    }
    best.0
}

fn embedding(basis: &SpectralBasis) -> DMatrix<f64> {
    let k = basis.k();
    basis.phi().columns(1.min(k - 1), k - 1.min(k - 1)).into_owned()
}

/// PMF refinement of a complete initial map.
pub fn pmf_refine(initial: &PointMap, basis_x: &SpectralBasis, basis_y: &SpectralBasis, cfg: &PmfConfig) -> Result<PointMap> {
    pmf_refine_traced(initial, basis_x, basis_y, cfg).map(|(m, _)| m)
}

/// As [`pmf_refine`], also returning per-iteration objective values.
///
/// With equal vertex counts the result is a verified permutation. Otherwise
/// the larger shape is farthest-point subsampled to the smaller size for the
/// assignments and the remaining vertices follow their nearest sample.
pub fn pmf_refine_traced(
    initial: &PointMap,
    basis_x: &SpectralBasis,
    basis_y: &SpectralBasis,
    cfg: &PmfConfig,
) -> Result<(PointMap, Vec<PmfStep>)> {
    let (nx, ny) = (basis_x.n(), basis_y.n());
    if initial.len() != nx || initial.n_y() != ny {
        return Err(Error::dims(format!(
            "initial map is {}→{}, bases have {nx} and {ny} vertices",
            initial.len(),
            initial.n_y()
        )));
    }
    let init = initial
        .complete()
        .ok_or_else(|| Error::invalid("PMF needs every source vertex matched"))?;
    if cfg.iterations == 0 {
        return Ok((initial.clone(), Vec::new()));
    }
    if !(cfg.t_start > 0.0 && cfg.t_end > 0.0) {
        return Err(Error::invalid("PMF kernel times must be positive"));
    }
    let all_x: Vec<usize> = (0..nx).collect();
    let all_y: Vec<usize> = (0..ny).collect();
    let kernel = |b: &SpectralBasis, rows: &[usize]| Kernel {
        phi: scaled_rows(b, rows),
        eigenvalues: b.eigenvalues().to_vec(),
    };
    if nx == ny {
        let (map, steps) = pmf_square(&kernel(basis_x, &all_x), &kernel(basis_y, &all_y), init, cfg)?;
        return Ok((PointMap::new(map, ny)?.into_bijective()?, steps));
    }
    if nx > ny {
        let emb = embedding(basis_x);
        let sub = farthest_points(&emb, ny);
        let sub_init: Vec<usize> = sub.iter().map(|&i| init[i]).collect();
        let (sub_map, steps) = pmf_square(&kernel(basis_x, &sub), &kernel(basis_y, &all_y), sub_init, cfg)?;
        let map = (0..nx).map(|i| sub_map[nearest(&emb, i, &sub)]).collect();
        Ok((PointMap::new(map, ny)?, steps))
    } else {
        let emb = embedding(basis_y);
        let sub = farthest_points(&emb, nx);
        let sub_init: Vec<usize> = init.iter().map(|&j| nearest(&emb, j, &sub)).collect();
        let (sub_map, steps) = pmf_square(&kernel(basis_x, &all_x), &kernel(basis_y, &sub), sub_init, cfg)?;
        let map = sub_map.into_iter().map(|r| sub[r]).collect();
        Ok((PointMap::new(map, ny)?, steps))
    }
}

/// For each low-resolution vertex, the full-resolution vertex closest to it
/// among those that `vertex_map` sends there.
pub fn representatives(vertex_map: &[usize], low: &TriMesh, full: &TriMesh) -> Result<Vec<usize>> {
    if vertex_map.len() != full.num_vertices() {
        return Err(Error::dims(format!(
            "vertex map has {} entries, full mesh has {} vertices",
            vertex_map.len(),
            full.num_vertices()
        )));
    }
    let mut best: Vec<Option<(usize, f64)>> = vec![None; low.num_vertices()];
    for (u, &v) in vertex_map.iter().enumerate() {
        if v >= low.num_vertices() {
            return Err(Error::invalid(format!("vertex map sends {u} to missing vertex {v}")));
        }
        let d = mesh::dist(&full.vertices()[u], &low.vertices()[v]);
        if best[v].is_none_or(|(_, bd)| d < bd) {
            best[v] = Some((u, d));
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(v, b)| b.map(|(u, _)| u).ok_or_else(|| Error::invalid(format!("low vertex {v} has no preimage"))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpscaleConfig {
    /// reweighting steps after the initial least-squares fit
    pub irls_iters: usize,
    /// smoothing `δ = delta_scale · ‖Ĝ‖_F`
    pub delta_scale: f64,
}

impl Default for UpscaleConfig {
    fn default() -> Self {
        UpscaleConfig {
            irls_iters: 20,
            delta_scale: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Upscaled {
    pub fm: FunctionalMap,
    pub map: PointMap,
    /// smoothed ℓ2,1 objective after each solve (the first is plain least squares)
    pub objectives: Vec<f64>,
    /// final per-match weights
    pub weights: Vec<f64>,
}

fn weighted_fit(f: &DMatrix<f64>, g: &DMatrix<f64>, w: &[f64]) -> Result<DMatrix<f64>> {
    let mut fw = f.clone();
    for (mut col, &wi) in fw.column_iter_mut().zip(w) {
        col *= wi;
    }
    let s = &fw * f.transpose();
    let chol = Cholesky::new(s).ok_or_else(|| {
        Error::numerical("upscaling system is singular; need at least k well-spread matches")
    })?;
    Ok(chol.solve(&(&fw * g.transpose())).transpose())
}

fn huber_like(r: f64, delta: f64) -> f64 {
    if r >= delta {
        r
    } else {
        r * r / (2.0 * delta) + delta / 2.0
    }
}

/// Robust full-resolution functional map from low-resolution matches.
///
/// `reps_x`/`reps_y` give the full-resolution vertex standing in for each
/// low-resolution vertex (see [`representatives`]).
pub fn upscale(
    low_map: &PointMap,
    reps_x: &[usize],
    reps_y: &[usize],
    full_x: &SpectralBasis,
    full_y: &SpectralBasis,
    cfg: &UpscaleConfig,
) -> Result<Upscaled> {
    if reps_x.len() != low_map.len() || reps_y.len() != low_map.n_y() {
        return Err(Error::dims("representatives do not match the low-resolution map"));
    }
    let pairs: Vec<(usize, usize)> = low_map
        .targets()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|t| (reps_x[i], reps_y[t])))
        .collect();
    if pairs.is_empty() {
        return Err(Error::invalid("empty constraint set"));
    }
    if pairs.iter().any(|&(u, v)| u >= full_x.n() || v >= full_y.n()) {
        return Err(Error::invalid("representative outside the full-resolution basis"));
    }
    // delta functions: coefficient column of vertex v is row v of Φ
    let f = DMatrix::from_fn(full_x.k(), pairs.len(), |a, c| full_x.phi()[(pairs[c].0, a)]);
    let g = DMatrix::from_fn(full_y.k(), pairs.len(), |a, c| full_y.phi()[(pairs[c].1, a)]);
    let delta = (cfg.delta_scale * g.norm()).max(f64::MIN_POSITIVE);
    let mut w = vec![1.0; pairs.len()];
    let mut objectives = Vec::with_capacity(cfg.irls_iters + 1);
    let mut c;
    let mut it = 0;
    loop {
        c = weighted_fit(&f, &g, &w)?;
        let resid = &c * &f - &g;
        let norms: Vec<f64> = resid.column_iter().map(|r| r.norm()).collect();
        objectives.push(norms.iter().map(|&r| huber_like(r, delta)).sum::<f64>());
        w = norms.iter().map(|&r| 1.0 / r.max(delta)).collect();
        if it == cfg.irls_iters {
            break;
        }
        it += 1;
        let k = objectives.len();
        if k >= 2 && objectives[k - 2] - objectives[k - 1] <= 1e-12 * objectives[k - 2] {
            break;
        }
    }
    let k = objectives.len();
    if cfg.irls_iters > 0 && k >= 2 && objectives[k - 2] - objectives[k - 1] > 1e-6 * objectives[k - 2] {
        log::warn!(
            "upscaling IRLS not converged after {} iterations (last decrease {:.3e}); using the last iterate",
            cfg.irls_iters,
            objectives[k - 2] - objectives[k - 1]
        );
    }
    let fm = FunctionalMap { c };
    let map = extract_map_from_fm(&fm, full_x, full_y)?;
    Ok(Upscaled {
        fm,
        map,
        objectives,
        weights: w,
    })
}
