//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line
//! (straight to stderr, so it shows even when output is captured) and then
//! asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use fmnet_core::eval::{self, Normalization};
use fmnet_core::fmaps::{self, FunctionalMap, LossMode, PipelineConfig, PipelineShape, SoftCorrespondence};
use fmnet_core::geodesic;
use fmnet_core::mesh::{self, shapes};
use fmnet_core::nalgebra::DMatrix;
use fmnet_core::refine::{self, PmfConfig, PointMap, UpscaleConfig};
use fmnet_core::shot::{self, FrameQuality};
use fmnet_core::train::{self, Landmarks, TrainConfig, TrainOutputs, TrainShape};
use fmnet_core::{Network, Precision, SpectralBasis, TriMesh};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, name: &str, pass: bool, detail: impl AsRef<str>) {
    let line = format!(
        "criterion {n:>2} [{name}]: {} -- {}\n",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {}", detail.as_ref());
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        // Box–Muller
        let (u, v): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    })
}

fn hard(perm: &[usize], n_y: usize) -> SoftCorrespondence {
    let p = DMatrix::from_fn(n_y, perm.len(), |j, i| if perm[i] == j { 1.0 } else { 0.0 });
    SoftCorrespondence { q: p.clone(), p }
}

fn random_perm(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Geometry and SHOT input of a shape whose vertex `i` corresponds to
/// template vertex `i`.
fn train_shape(name: &str, m: &TriMesh, k: usize) -> TrainShape {
    let basis = SpectralBasis::from_mesh(m, k).unwrap();
    let d = geodesic::distance_matrix(m).unwrap();
    let desc = shot::shot_descriptors(m, shot::DEFAULT_RADIUS_FRACTION * d.diameter(), 10).unwrap();
    TrainShape::new(name, desc.to_matrix(), &basis, d, Some(Landmarks::identity(m.num_vertices())), k).unwrap()
}

/// Rest pose and articulated copies sharing connectivity.
fn poses(subdiv: usize, target_n: usize, count: usize) -> Vec<TriMesh> {
    let (rest, _) = mesh::simplify(&shapes::figure(subdiv), target_n).unwrap();
    let angles: [&[f64]; 4] = [
        &[],
        &[0.45, -0.35, 0.3, 0.25, -0.3],
        &[-0.4, 0.3, -0.35, 0.2, 0.35],
        &[0.25, 0.4, 0.3, -0.3, 0.2],
    ];
    angles[..count].iter().map(|a| shapes::pose_figure(&rest, a)).collect()
}

fn mean_error_of(net: &Network, x: &TrainShape, y: &TrainShape, cfg: &PipelineConfig) -> f64 {
    let (fm, _) = fmaps::predict(net, x.view(), y.view(), cfg).unwrap();
    let pred = refine::extract_map_from_fm(&fm, &x.basis, &y.basis).unwrap();
    let errs = eval::geodesic_errors(&pred, &PointMap::identity(x.n()), &y.distances, Normalization::Diameter).unwrap();
    errs.iter().sum::<f64>() / errs.len() as f64
}

#[test]
fn criterion_01_gradient_suite() {
    let t0 = Instant::now();
    let (rest, _) = mesh::simplify(&shapes::figure(1), 30).unwrap();
    let posed = shapes::pose_figure(&rest, &[0.3, -0.2, 0.1, 0.0, 0.25]);
    let n = rest.num_vertices();
    let (k, d, dirs) = (8, 6, 20);
    let (bx, by) = (SpectralBasis::from_mesh(&rest, k).unwrap(), SpectralBasis::from_mesh(&posed, k).unwrap());
    let (dx, dy) = (geodesic::distance_matrix(&rest).unwrap(), geodesic::distance_matrix(&posed).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (fx, fy) = (gaussian(n, d, &mut rng), gaussian(n, d, &mut rng));
    let gt: Vec<usize> = (0..n).collect();
    let net = Network::init(2, d, 102);
    let x = PipelineShape { descriptors: &fx, basis: &bx, distances: &dx };
    let y = PipelineShape { descriptors: &fy, basis: &by, distances: &dy };
    let mut worst: f64 = 0.0;
    for mode in [LossMode::Unsupervised, LossMode::Supervised] {
        let cfg = PipelineConfig { mode, precision: Precision::F64, ..Default::default() };
        let out = fmaps::pipeline_loss_and_grads(&net, x, y, Some(&gt), &cfg).unwrap();
        let loss_at = |theta: &[f64]| {
            let net = Network::from_params(2, d, theta.to_vec()).unwrap();
            fmaps::pipeline_loss_and_grads(&net, x, y, Some(&gt), &cfg).unwrap().loss
        };
        for _ in 0..dirs {
            let v = gaussian(net.num_params(), 1, &mut rng);
            let v = &v / v.norm();
            let h = 1e-5;
            let plus: Vec<f64> = net.params().iter().zip(v.iter()).map(|(p, v)| p + h * v).collect();
            let minus: Vec<f64> = net.params().iter().zip(v.iter()).map(|(p, v)| p - h * v).collect();
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let analytic: f64 = out.grads.iter().zip(v.iter()).map(|(g, v)| g * v).sum();
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    let elapsed = t0.elapsed();
    report(
        1,
        "gradient suite",
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        format!("n={n} k={k} d={d} depth 2, {dirs} directions x 2 losses; worst relative error {worst:.2e}; {}", secs(elapsed)),
    );
}

#[test]
fn criterion_02_isometry_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut exact = true;
    let mut cases = 0;
    for m in [shapes::icosphere(2, 1.0), shapes::figure(2), shapes::grid(8, 1.0)] {
        let dx = geodesic::distance_matrix(&m).unwrap();
        for _ in 0..3 {
            let perm = random_perm(m.num_vertices(), &mut rng);
            let dy = dx.permuted(&perm);
            for prec in [Precision::F64, Precision::F32] {
                let (l, _) = fmaps::unsup_loss(&hard(&perm, perm.len()), &dx, &dy, prec).unwrap();
                exact &= l == 0.0;
                cases += 1;
            }
        }
    }

    // full basis, C = I, against a relabeled copy
    let m = shapes::figure(1);
    let n = m.num_vertices();
    let bx = SpectralBasis::from_mesh(&m, n).unwrap();
    let dx = geodesic::distance_matrix(&m).unwrap();
    let perm = random_perm(n, &mut rng);
    let (by, dy) = (bx.permuted(&perm), dx.permuted(&perm));
    let eye = FunctionalMap { c: DMatrix::identity(n, n) };
    let (soft, _) = fmaps::soft_corr(&eye, &bx, &by, Precision::F64).unwrap();
    let (l_eye, _) = fmaps::unsup_loss(&soft, &dx, &dy, Precision::F64).unwrap();

    // and end to end: a network that passes descriptors through unchanged
    let net = Network::zeros(1, 48);
    let fx = gaussian(n, 48, &mut rng);
    let mut fy = fx.clone();
    for (old, &new) in perm.iter().enumerate() {
        fy.set_row(new, &fx.row(old));
    }
    let cfg = PipelineConfig { ridge_scale: 0.0, precision: Precision::F64, ..Default::default() };
    let x = PipelineShape { descriptors: &fx, basis: &bx, distances: &dx };
    let y = PipelineShape { descriptors: &fy, basis: &by, distances: &dy };
    let out = fmaps::pipeline_loss_and_grads(&net, x, y, None, &cfg).unwrap();
    let c_dev = (&out.fm.c - DMatrix::<f64>::identity(n, n)).abs().max();

    report(
        2,
        "isometry zero loss",
        exact && l_eye <= 1e-10 && out.loss <= 1e-10,
        format!(
            "{cases} permuted pairs exactly zero: {exact}; full basis C=I loss {l_eye:.2e}; pipeline loss {:.2e} (|C-I|max {c_dev:.1e})",
            out.loss
        ),
    );
}

#[test]
fn criterion_03_desk_scale_training() {
    let t0 = Instant::now();
    let meshes = poses(4, 1500, 3);
    let k = 60;
    let data: Vec<TrainShape> = meshes.iter().enumerate().map(|(i, m)| train_shape(&format!("pose{i}"), m, k)).collect();
    let n = data[0].n();
    let cfg = TrainConfig {
        iterations: 300,
        batch_pairs: 1,
        k,
        seed: 3,
        checkpoint_every: 0,
        ..Default::default()
    };
    let pcfg = cfg.pipeline();
    let eval = |net: &Network| {
        let (mut u, mut s) = (0.0, 0.0);
        for a in 0..data.len() {
            for b in 0..data.len() {
                if a != b {
                    let gt: Vec<usize> = (0..n).collect();
                    let (lu, ls) = train::evaluate_pair(net, &data[a], &data[b], Some(&gt), &pcfg).unwrap();
                    u += lu;
                    s += ls.unwrap();
                }
            }
        }
        (u, s)
    };
    let (u0, s0) = eval(&Network::init(cfg.depth, cfg.width, cfg.seed));
    let (net, history) = train::train_loop(&data, &cfg, &TrainOutputs { log: None, checkpoint: None }).unwrap();
    let (u1, s1) = eval(&net);
    let elapsed = t0.elapsed();
    let corr = eval::loss_correlation(&history).map(|c| c.pearson).unwrap_or(f64::NAN);
    report(
        3,
        "desk-scale training",
        u1 < 0.5 * u0 && s1 < s0 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "{} poses, n={n}, k={k}, {} iterations; unsup {u0:.4e} -> {u1:.4e} (ratio {:.3}); sup {s0:.4e} -> {s1:.4e}; log-loss pearson {corr:.3}; {}",
            data.len(),
            cfg.iterations,
            u1 / u0,
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_04_single_pair() {
    let t0 = Instant::now();
    let meshes = poses(4, 1000, 2);
    let k = 60;
    let data: Vec<TrainShape> = meshes.iter().enumerate().map(|(i, m)| train_shape(&format!("pose{i}"), m, k)).collect();
    let cfg = TrainConfig {
        iterations: 100,
        batch_pairs: 1,
        k,
        seed: 4,
        checkpoint_every: 0,
        log_supervised: false,
        ..Default::default()
    };
    let pcfg = cfg.pipeline();
    let err = |net: &Network| (mean_error_of(net, &data[0], &data[1], &pcfg) + mean_error_of(net, &data[1], &data[0], &pcfg)) / 2.0;
    let e0 = err(&Network::init(cfg.depth, cfg.width, cfg.seed));
    let (net, _) = train::train_loop(&data, &cfg, &TrainOutputs { log: None, checkpoint: None }).unwrap();
    let e1 = err(&net);
    let elapsed = t0.elapsed();
    report(
        4,
        "single-pair protocol",
        e1 <= 0.5 * e0,
        format!(
            "n={}, k={k}, 100 iterations; mean normalized geodesic error {e0:.4} -> {e1:.4} ({:.0}% better); {}",
            data[0].n(),
            100.0 * (1.0 - e1 / e0),
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_05_spectral() {
    let mut worst_l0: f64 = 0.0;
    let mut worst_const: f64 = 0.0;
    let mut worst_orth: f64 = 0.0;
    for m in [shapes::icosphere(3, 1.0), shapes::figure(3)] {
        let b = SpectralBasis::from_mesh(&m, 16).unwrap();
        worst_l0 = worst_l0.max(b.eigenvalues()[0].abs());
        let phi0 = b.phi().column(0);
        let mean = phi0.mean();
        worst_const = worst_const.max(phi0.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max) / mean.abs());
        let a = DMatrix::from_diagonal(&fmnet_core::nalgebra::DVector::from_column_slice(b.mass()));
        let gram = b.phi().transpose() * a * b.phi();
        worst_orth = worst_orth.max((gram - DMatrix::<f64>::identity(16, 16)).abs().max());
    }
    // unit sphere: eigenvalue l(l+1) with multiplicity 2l+1
    let b = SpectralBasis::from_mesh(&shapes::icosphere(3, 1.0), 16).unwrap();
    let mut worst_sph: f64 = 0.0;
    let mut idx = 1;
    for l in 1..=3usize {
        let want = (l * (l + 1)) as f64;
        for _ in 0..2 * l + 1 {
            worst_sph = worst_sph.max((b.eigenvalues()[idx] - want).abs() / want);
            idx += 1;
        }
    }
    report(
        5,
        "spectral correctness",
        worst_l0 <= 1e-8 && worst_const <= 1e-6 && worst_orth <= 1e-6 && worst_sph <= 0.05,
        format!(
            "|λ0| {worst_l0:.1e}; φ0 relative spread {worst_const:.1e}; |ΦᵀAΦ-I|max {worst_orth:.1e}; sphere l(l+1) worst rel. error {:.2}%",
            100.0 * worst_sph
        ),
    );
}

#[test]
fn criterion_06_geodesics() {
    let g = shapes::grid(50, 1.0);
    let d = geodesic::distance_matrix(&g).unwrap();
    let v = g.vertices();
    let mut worst: f64 = 0.0;
    for i in 0..v.len() {
        for j in 0..v.len() {
            let e = ((v[i][0] - v[j][0]).powi(2) + (v[i][1] - v[j][1]).powi(2)).sqrt();
            worst = worst.max((d.get(i, j) - e).abs());
        }
    }
    let grid_rel = worst / d.diameter();
    let corner = ((d.get(0, 50 * 51 + 50) - 2f64.sqrt()) / 2f64.sqrt()).abs();

    let s = shapes::icosphere(4, 1.0);
    let p0 = s.vertices()[0];
    let anti = (0..s.num_vertices())
        .min_by(|&a, &b| {
            let da: f64 = (0..3).map(|c| (s.vertices()[a][c] + p0[c]).powi(2)).sum();
            let db: f64 = (0..3).map(|c| (s.vertices()[b][c] + p0[c]).powi(2)).sum();
            da.total_cmp(&db)
        })
        .unwrap();
    let da = geodesic::fast_marching(&s, 0).unwrap()[anti];
    let sphere_rel = (da - std::f64::consts::PI).abs() / std::f64::consts::PI;
    report(
        6,
        "geodesic correctness",
        grid_rel <= 0.02 && corner <= 0.02 && sphere_rel <= 0.03,
        format!(
            "50x50 grid max|D-E|/diam {:.2}%, corner {:.2}%; icosphere antipodal {da:.4} vs π ({:.2}%)",
            100.0 * grid_rel,
            100.0 * corner,
            100.0 * sphere_rel
        ),
    );
}

fn well_posed(q: &FrameQuality) -> bool {
    !q.degenerate && !q.fallback && q.eigengap > 1e-3 && (q.vote_margin > 2 || q.vote_clearance > 1e-6)
}

#[test]
fn criterion_07_shot() {
    let m = shapes::figure(3);
    let r = shapes::rotation([0.3, -1.0, 0.7], 1.1);
    let moved = shapes::rigid_transform(&m, &r, [2.0, -3.0, 0.5]);
    let (a, qa) = shot::shot_with_frames(&m, 0.3, 10).unwrap();
    let (b, qb) = shot::shot_with_frames(&moved, 0.3, 10).unwrap();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for i in 0..a.n() {
        if well_posed(&qa[i]) && well_posed(&qb[i]) {
            checked += 1;
            let d2: f64 = a.row(i).iter().zip(b.row(i)).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
            worst = worst.max(d2.sqrt());
        }
    }
    let width_ok = shot::descriptor_width(10) == 352 && a.width() == 352;
    report(
        7,
        "SHOT contract",
        width_ok && worst <= 1e-3 && checked > a.n() / 2,
        format!(
            "width {}; rigid motion max deviation {worst:.1e} over {checked}/{} vertices with well-posed frames",
            a.width(),
            a.n()
        ),
    );
}

#[test]
fn criterion_08_pmf() {
    let meshes = poses(3, 200, 2);
    let (x, y) = (&meshes[0], &meshes[1]);
    let n = x.num_vertices();
    let (bx, by) = (SpectralBasis::from_mesh(x, 30).unwrap(), SpectralBasis::from_mesh(y, 30).unwrap());
    let dy = geodesic::distance_matrix(y).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut init: Vec<usize> = (0..n).collect();
    let corrupt = random_perm(n, &mut rng);
    for &i in &corrupt[..n / 5] {
        init[i] = (i + rng.random_range(1..n)) % n;
    }
    let init = PointMap::new(init, n).unwrap();
    let gt = PointMap::identity(n);
    let mean = |m: &PointMap| {
        let e = eval::geodesic_errors(m, &gt, &dy, Normalization::Diameter).unwrap();
        e.iter().sum::<f64>() / e.len() as f64
    };
    let (out, steps) = refine::pmf_refine_traced(&init, &bx, &by, &PmfConfig::for_diameter(dy.diameter(), 10)).unwrap();
    let monotone = steps.iter().all(|s| s.after >= s.before * (1.0 - 1e-12));
    let (e0, e1) = (mean(&init), mean(&out));
    report(
        8,
        "PMF contract",
        out.is_permutation() && monotone && e1 < e0,
        format!(
            "n={n}, {} corrupted; permutation {}; objective monotone over {} iterations {monotone}; mean error {e0:.4} -> {e1:.4}",
            n / 5,
            out.is_permutation(),
            steps.len()
        ),
    );
}

#[test]
fn criterion_09_upscaling() {
    // identity self-map through remeshing: C only
    let full = shapes::figure(3);
    let (low, vmap) = mesh::simplify(&full, 300).unwrap();
    let reps = refine::representatives(&vmap, &low, &full).unwrap();
    let fb = SpectralBasis::from_mesh(&full, 30).unwrap();
    let up = refine::upscale(&PointMap::identity(low.num_vertices()), &reps, &reps, &fb, &fb, &UpscaleConfig::default()).unwrap();
    let c_dev_remeshed = (&up.fm.c - DMatrix::<f64>::identity(30, 30)).abs().max();

    // low = full resolution with a complete basis: C and the point map
    let m = shapes::figure(2);
    let n = m.num_vertices();
    let b = SpectralBasis::from_mesh(&m, n).unwrap();
    let ids: Vec<usize> = (0..n).collect();
    let up = refine::upscale(&PointMap::identity(n), &ids, &ids, &b, &b, &UpscaleConfig::default()).unwrap();
    let c_dev = (&up.fm.c - DMatrix::<f64>::identity(n, n)).abs().max();
    let map_ok = up.map.complete().as_deref() == Some(&ids[..]);

    // one planted outlier among 200 correct matches
    let s = shapes::icosphere(3, 1.0);
    let n = s.num_vertices();
    let b = SpectralBasis::from_mesh(&s, 25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let verts = random_perm(n, &mut rng);
    let mut targets = vec![None; n];
    for &v in &verts[..200] {
        targets[v] = Some(v);
    }
    targets[verts[200]] = Some(verts[201]);
    let map = PointMap::partial(targets, n).unwrap();
    let ids: Vec<usize> = (0..n).collect();
    let eye = DMatrix::<f64>::identity(25, 25);
    let ls = refine::upscale(&map, &ids, &ids, &b, &b, &UpscaleConfig { irls_iters: 0, ..Default::default() }).unwrap();
    let robust = refine::upscale(&map, &ids, &ids, &b, &b, &UpscaleConfig::default()).unwrap();
    let (e_ls, e_rob) = ((&ls.fm.c - &eye).norm(), (&robust.fm.c - &eye).norm());
    report(
        9,
        "upscaling",
        c_dev_remeshed <= 1e-6 && c_dev <= 1e-6 && map_ok && e_rob <= 0.1 * e_ls,
        format!(
            "identity |C-I|max {c_dev_remeshed:.1e} through remeshing (k=30), {c_dev:.1e} at full basis (n={n}) with identity map {map_ok}; outlier perturbation robust {e_rob:.2e} vs least squares {e_ls:.2e} ({:.1}%)",
            100.0 * e_rob / e_ls
        ),
    );
}

fn brute_force(m: &DMatrix<f64>) -> (Vec<usize>, f64) {
    fn rec(m: &DMatrix<f64>, row: usize, used: &mut [bool], cur: &mut Vec<usize>, best: &mut (Vec<usize>, f64)) {
        let n = m.nrows();
        if row == n {
            let s = score(m, cur);
            if s > best.1 {
                *best = (cur.clone(), s);
            }
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(m, row + 1, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    rec(m, 0, &mut vec![false; m.nrows()], &mut Vec::new(), &mut best);
    best
}

fn score(m: &DMatrix<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| m[(i, j)]).sum()
}

#[test]
fn criterion_10_lap_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-10.0..10.0));
        let got = refine::lap_solve(&m).unwrap();
        let (want, best) = brute_force(&m);
        if got != want || score(&m, &got) != best {
            mismatches += 1;
        }
    }
    report(10, "LAP oracle", mismatches == 0, format!("1000 random 6x6 instances, {mismatches} mismatches"));
}

#[test]
fn criterion_11_determinism() {
    let meshes = poses(3, 400, 3);
    let data: Vec<TrainShape> = meshes.iter().enumerate().map(|(i, m)| train_shape(&format!("s{i}"), m, 15)).collect();
    let cfg = TrainConfig {
        iterations: 12,
        batch_pairs: 2,
        k: 15,
        seed: 11,
        depth: 2,
        precision: Precision::F64,
        checkpoint_every: 0,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: usize| {
        let log = dir.path().join(name);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let (net, _) = pool
            .install(|| train::train_loop(&data, &cfg, &TrainOutputs { log: Some(log.clone()), checkpoint: None }))
            .unwrap();
        // wall-clock column excluded
        let rows: Vec<String> = std::fs::read_to_string(&log)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect();
        (rows, net.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>())
    };
    let a = run("a.csv", 1);
    let b = run("b.csv", 1);
    let c = run("c.csv", 3);
    let same = a == b && a == c;
    report(
        11,
        "determinism",
        same && a.0.len() == cfg.iterations + 1,
        format!(
            "{} iterations, 64-bit mode; logs and final parameters bitwise identical across reruns and 1/3 threads: {same}",
            cfg.iterations
        ),
    );
}
