use std::path::{Path, PathBuf};
use std::str::FromStr;

use fmnet_core::dataio::{self, Cache, CacheStatus, PreprocessParams, ShapeBundle};
use fmnet_core::eval::{self, Normalization};
use fmnet_core::fmaps::{self, LossMode, PipelineConfig, PipelineShape};
use fmnet_core::mesh::{self, TriMesh, Vec3};
use fmnet_core::net::Checkpoint;
use fmnet_core::refine::{self, PmfConfig, PointMap, UpscaleConfig};
use fmnet_core::spectral::SpectralBasis;
use fmnet_core::train::{self, TrainConfig, TrainOutputs};
use fmnet_core::{geodesic, Precision};
use rayon::prelude::*;

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};
use crate::{Command, PrepArgs, TrainArgs};

const DEFAULT_CACHE: &str = ".fmnet-cache";

pub fn dispatch(cmd: Command, file: &ConfigFile, seed: u64) -> CliResult<()> {
    match cmd {
        Command::Preprocess { manifest, prep } => preprocess(&manifest, &prep, file),
        Command::Train(args) => train(args, file, seed),
        Command::Infer {
            checkpoint,
            x,
            y,
            out,
            soft_dump,
            precision,
            prep,
        } => infer(&checkpoint, &x, &y, &out, soft_dump.as_deref(), precision, &prep, file),
        Command::Refine {
            x,
            y,
            init,
            checkpoint,
            out,
            pmf_iters,
            upscale,
            irls_iters,
            prep,
        } => {
            let opts = RefineOpts {
                init,
                checkpoint,
                pmf_iters: file.resolve(pmf_iters, "pmf_iters", refine::DEFAULT_PMF_ITERATIONS)?,
                upscale,
                irls_iters: file.resolve(irls_iters, "irls_iters", UpscaleConfig::default().irls_iters)?,
            };
            refine_cmd(&x, &y, &out, opts, &prep, file)
        }
        Command::Eval {
            pred,
            gt,
            y,
            out,
            normalization,
            curve_points,
            curve_max,
            prep,
        } => {
            let norm: String = file.resolve(normalization, "normalization", "diameter".into())?;
            let points = file.resolve(curve_points, "curve_points", eval::DEFAULT_CURVE_POINTS)?;
            let max = file.resolve(curve_max, "curve_max", eval::DEFAULT_CURVE_MAX)?;
            eval_cmd(&pred, &gt, &y, out.as_deref(), &norm, points, max, &prep, file)
        }
        Command::ExportColors {
            x,
            y,
            corr,
            out_dir,
            prep,
        } => export_colors(&x, &y, &corr, &out_dir, &prep, file),
    }
}

fn parse<T: FromStr<Err = String>>(what: &str, s: &str) -> CliResult<T> {
    s.parse().map_err(|e: String| CliError::usage(format!("--{what}: {e}")))
}

struct Prep {
    params: PreprocessParams,
    cache: Cache,
}

impl Prep {
    fn resolve(args: &PrepArgs, file: &ConfigFile) -> CliResult<Self> {
        let d = PreprocessParams::default();
        let params = PreprocessParams {
            target_n: file.resolve(args.target_n, "target_n", d.target_n)?,
            k: file.resolve(args.k, "k", d.k)?,
            shot_bins: file.resolve(args.shot_bins, "shot_bins", d.shot_bins)?,
            shot_radius_fraction: file.resolve(args.shot_radius_fraction, "shot_radius_fraction", d.shot_radius_fraction)?,
        };
        let dir: PathBuf = file.resolve(args.cache.clone(), "cache", PathBuf::from(DEFAULT_CACHE))?;
        Ok(Prep {
            params,
            cache: Cache::new(dir),
        })
    }

    fn bundle(&self, path: &Path) -> CliResult<(ShapeBundle, CacheStatus)> {
        Ok(dataio::preprocess(path, &self.params, Some(&self.cache))?)
    }

    fn bundles(&self, paths: &[&Path]) -> CliResult<Vec<(ShapeBundle, CacheStatus)>> {
        paths.par_iter().map(|p| self.bundle(p)).collect()
    }
}

fn preprocess(manifest: &Path, args: &PrepArgs, file: &ConfigFile) -> CliResult<()> {
    let prep = Prep::resolve(args, file)?;
    let entries = dataio::read_manifest(manifest)?;
    let paths: Vec<&Path> = entries.iter().map(|e| e.mesh.as_path()).collect();
    let bundles = prep.bundles(&paths)?;
    println!("{:<32} {:>7} {:>7} {:>5} {:>10}  {:<8} status", "shape", "n_orig", "n", "k", "diameter", "hash");
    for (b, status) in &bundles {
        let name = b.source_path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default();
        println!(
            "{:<32} {:>7} {:>7} {:>5} {:>10.4}  {:<8} {}",
            name,
            b.vertex_map.len(),
            b.n(),
            b.basis.k(),
            b.distances.diameter(),
            &b.content_hash[..8],
            match status {
                CacheStatus::Computed => "computed",
                CacheStatus::Cached => "cached",
            }
        );
    }
    Ok(())
}

/// Pipeline settings stored next to a checkpoint as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
struct CheckpointMeta {
    k: usize,
    ridge_scale: f64,
    precision: Precision,
}

fn meta_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

impl CheckpointMeta {
    fn save(&self, ckpt: &Path) -> CliResult<()> {
        let p = meta_path(ckpt);
        let text = format!("k={}\nridge_scale={:e}\nprecision={}\n", self.k, self.ridge_scale, self.precision);
        std::fs::write(&p, text).map_err(|e| fmnet_core::Error::Io { path: p, source: e })?;
        Ok(())
    }

    fn load(ckpt: &Path) -> CliResult<Self> {
        let p = meta_path(ckpt);
        let text = std::fs::read_to_string(&p).map_err(|e| fmnet_core::Error::Io { path: p.clone(), source: e })?;
        let bad = |m: String| CliError::Core(fmnet_core::Error::Parse(format!("{}: {m}", p.display())));
        let (mut k, mut ridge_scale, mut precision) = (None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line {line:?}")))?;
            match key {
                "k" => k = Some(v.parse().map_err(|_| bad(format!("bad k {v:?}")))?),
                "ridge_scale" => ridge_scale = Some(v.parse().map_err(|_| bad(format!("bad ridge_scale {v:?}")))?),
                "precision" => precision = Some(v.parse().map_err(bad)?),
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        match (k, ridge_scale, precision) {
            (Some(k), Some(ridge_scale), Some(precision)) => Ok(CheckpointMeta { k, ridge_scale, precision }),
            _ => Err(bad("missing keys".into())),
        }
    }
}

fn train(args: TrainArgs, file: &ConfigFile, seed: u64) -> CliResult<()> {
    let prep = Prep::resolve(&args.prep, file)?;
    let d = TrainConfig::default();
    let mode: String = file.resolve(args.mode, "mode", "unsupervised".into())?;
    let precision: String = file.resolve(args.precision, "precision", d.precision.to_string())?;
    let cfg = TrainConfig {
        learning_rate: file.resolve(args.lr, "lr", d.learning_rate)?,
        iterations: file.resolve(args.iterations, "iterations", d.iterations)?,
        batch_pairs: file.resolve(args.batch_pairs, "batch_pairs", d.batch_pairs)?,
        k: prep.params.k,
        ridge_scale: file.resolve(args.ridge_scale, "ridge_scale", d.ridge_scale)?,
        seed,
        mode: parse::<LossMode>("mode", &mode)?,
        log_supervised: file.resolve(args.log_supervised, "log_supervised", d.log_supervised)?,
        precision: parse("precision", &precision)?,
        clip_norm: file.resolve(args.clip_norm, "clip_norm", d.clip_norm)?,
        checkpoint_every: file.resolve(args.checkpoint_every, "checkpoint_every", d.checkpoint_every)?,
        depth: file.resolve(args.depth, "depth", d.depth)?,
        width: file.resolve(args.width, "width", d.width)?,
        ..d
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let entries = dataio::read_manifest(&args.manifest)?;
    if cfg.mode == LossMode::Supervised && entries.iter().any(|e| e.gt.is_none()) {
        return Err(CliError::usage("--mode supervised needs a ground-truth file for every manifest entry"));
    }
    let paths: Vec<&Path> = entries.iter().map(|e| e.mesh.as_path()).collect();
    let bundles = prep.bundles(&paths)?;
    let mut dataset = Vec::with_capacity(bundles.len());
    for (entry, (b, _)) in entries.iter().zip(&bundles) {
        let landmarks = match &entry.gt {
            Some(g) => Some(b.landmarks(&dataio::load_ground_truth(g, b.vertex_map.len(), None)?)?),
            None => None,
        };
        dataset.push(b.train_shape(landmarks, cfg.k)?);
    }
    if let Some(s) = dataset.iter().find(|s| s.descriptors.ncols() != cfg.width) {
        return Err(CliError::usage(format!(
            "--width {} does not match the {}-wide descriptors of {}",
            cfg.width,
            s.descriptors.ncols(),
            s.name
        )));
    }

    std::fs::create_dir_all(&args.out).map_err(|e| fmnet_core::Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let ckpt_path = args.out.join("checkpoint.bin");
    let out = TrainOutputs {
        log: Some(args.out.join("log.csv")),
        checkpoint: Some(ckpt_path.clone()),
    };
    CheckpointMeta {
        k: cfg.k,
        ridge_scale: cfg.ridge_scale,
        precision: cfg.precision,
    }
    .save(&ckpt_path)?;
    let start = match &args.resume {
        Some(p) => Checkpoint::load(p)?,
        None => Checkpoint::fresh(fmnet_core::Network::init(cfg.depth, cfg.width, cfg.seed)),
    };
    let (_, history) = train::train_from(start, &dataset, &cfg, &out)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!(
            "trained {} iterations on {} shapes: unsup {:.6e} -> {:.6e}",
            history.len(),
            dataset.len(),
            first.unsup_loss,
            last.unsup_loss
        );
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("log: {}", args.out.join("log.csv").display());
    Ok(())
}

/// Checkpoint plus the pipeline settings it was trained with, checked
/// against a bundle.
fn load_model(path: &Path, bundles: &[&ShapeBundle], precision: Option<String>) -> CliResult<(fmnet_core::Network, PipelineConfig, usize)> {
    let ckpt = Checkpoint::load(path)?;
    let meta = CheckpointMeta::load(path)?;
    for b in bundles {
        if b.basis.k() != meta.k {
            return Err(CliError::usage(format!(
                "mismatched k: checkpoint trained with k={} but {} was preprocessed with k={}",
                meta.k,
                b.source_path.display(),
                b.basis.k()
            )));
        }
        if b.shot.width() != ckpt.net.width() {
            return Err(CliError::usage(format!(
                "network expects {}-wide descriptors, {} has {}",
                ckpt.net.width(),
                b.source_path.display(),
                b.shot.width()
            )));
        }
    }
    let precision = match precision {
        Some(p) => parse("precision", &p)?,
        None => meta.precision,
    };
    let cfg = PipelineConfig {
        mode: LossMode::Unsupervised,
        ridge_scale: meta.ridge_scale,
        precision,
    };
    Ok((ckpt.net, cfg, meta.k))
}

fn view<'a>(desc: &'a fmnet_core::nalgebra::DMatrix<f64>, b: &'a ShapeBundle) -> PipelineShape<'a> {
    PipelineShape {
        descriptors: desc,
        basis: &b.basis,
        distances: &b.distances,
    }
}

#[allow(clippy::too_many_arguments)]
fn infer(
    ckpt: &Path,
    x: &Path,
    y: &Path,
    out: &Path,
    soft_dump: Option<&Path>,
    precision: Option<String>,
    args: &PrepArgs,
    file: &ConfigFile,
) -> CliResult<()> {
    let prep = Prep::resolve(args, file)?;
    let (bx, _) = prep.bundle(x)?;
    let (by, _) = prep.bundle(y)?;
    let (net, cfg, _) = load_model(ckpt, &[&bx, &by], precision)?;
    let (dx, dy) = (bx.shot.to_matrix(), by.shot.to_matrix());
    let (_, soft) = fmaps::predict(&net, view(&dx, &bx), view(&dy, &by), &cfg)?;
    let map = refine::extract_map(&soft);
    map.save(out)?;
    if let Some(p) = soft_dump {
        let mut s = format!("# softmap v1 {} {}\n", soft.p.ncols(), soft.p.nrows());
        for col in soft.p.column_iter() {
            let row: Vec<String> = col.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        std::fs::write(p, s).map_err(|e| fmnet_core::Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
    }
    println!("wrote {} ({} -> {} vertices)", out.display(), map.len(), map.n_y());
    Ok(())
}

struct RefineOpts {
    init: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    pmf_iters: usize,
    upscale: Option<PathBuf>,
    irls_iters: usize,
}

fn check_sizes(map: &PointMap, bx: &ShapeBundle, by: &ShapeBundle) -> CliResult<()> {
    if map.len() != bx.n() || map.n_y() != by.n() {
        return Err(fmnet_core::Error::DimensionMismatch(format!(
            "correspondence is {} -> {} but the bundles have {} and {} vertices",
            map.len(),
            map.n_y(),
            bx.n(),
            by.n()
        ))
        .into());
    }
    Ok(())
}

fn refine_cmd(x: &Path, y: &Path, out: &Path, opts: RefineOpts, args: &PrepArgs, file: &ConfigFile) -> CliResult<()> {
    let prep = Prep::resolve(args, file)?;
    let (bx, _) = prep.bundle(x)?;
    let (by, _) = prep.bundle(y)?;
    let initial = match (&opts.init, &opts.checkpoint) {
        (Some(p), _) => PointMap::load(p)?,
        (None, Some(c)) => {
            let (net, cfg, _) = load_model(c, &[&bx, &by], None)?;
            let (dx, dy) = (bx.shot.to_matrix(), by.shot.to_matrix());
            let (fm, _) = fmaps::predict(&net, view(&dx, &bx), view(&dy, &by), &cfg)?;
            refine::extract_map_from_fm(&fm, &bx.basis, &by.basis)?
        }
        (None, None) => return Err(CliError::usage("refine needs --init or --checkpoint")),
    };
    check_sizes(&initial, &bx, &by)?;
    let refined = if opts.pmf_iters == 0 {
        initial
    } else {
        if initial.complete().is_none() {
            return Err(CliError::usage("PMF needs a correspondence for every source vertex"));
        }
        let cfg = PmfConfig::for_diameter(by.distances.diameter(), opts.pmf_iters);
        refine::pmf_refine(&initial, &bx.basis, &by.basis, &cfg)?
    };
    refined.save(out)?;
    println!("wrote {} ({} matched)", out.display(), refined.num_matched());

    if let Some(up) = &opts.upscale {
        let full_x = mesh::load_mesh(x)?;
        let full_y = mesh::load_mesh(y)?;
        let k = bx.basis.k().min(by.basis.k());
        let (fbx, fby) = rayon::join(|| SpectralBasis::from_mesh(&full_x, k), || SpectralBasis::from_mesh(&full_y, k));
        let (fbx, fby) = (fbx?, fby?);
        let reps_x = refine::representatives(&bx.vertex_map, &bx.mesh, &full_x)?;
        let reps_y = refine::representatives(&by.vertex_map, &by.mesh, &full_y)?;
        let cfg = UpscaleConfig {
            irls_iters: opts.irls_iters,
            ..UpscaleConfig::default()
        };
        let result = refine::upscale(&refined, &reps_x, &reps_y, &fbx, &fby, &cfg)?;
        result.map.save(up)?;
        println!("wrote {} ({} -> {} vertices)", up.display(), result.map.len(), result.map.n_y());
    }
    Ok(())
}

/// Target mesh and distances at the resolution of the correspondence:
/// the bundle if sizes agree, otherwise the original mesh.
fn target_geometry(y: &Path, n_y: usize, prep: &Prep) -> CliResult<(TriMesh, geodesic::GeodesicMatrix)> {
    let (by, _) = prep.bundle(y)?;
    if by.n() == n_y {
        return Ok((by.mesh, by.distances));
    }
    let full = mesh::load_mesh(y)?;
    if full.num_vertices() != n_y {
        return Err(fmnet_core::Error::DimensionMismatch(format!(
            "correspondence targets {n_y} vertices; {} has {} (remeshed {})",
            y.display(),
            full.num_vertices(),
            by.n()
        ))
        .into());
    }
    let d = geodesic::distance_matrix(&full)?;
    Ok((full, d))
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    pred: &Path,
    gt: &str,
    y: &Path,
    out: Option<&Path>,
    norm: &str,
    points: usize,
    max: f64,
    args: &PrepArgs,
    file: &ConfigFile,
) -> CliResult<()> {
    let prep = Prep::resolve(args, file)?;
    let pred_map = PointMap::load(pred)?;
    let gt_map = if gt == "identity" {
        if pred_map.len() > pred_map.n_y() {
            return Err(CliError::usage("--gt identity needs n_X <= n_Y"));
        }
        PointMap::new((0..pred_map.len()).collect(), pred_map.n_y())?
    } else {
        dataio::load_ground_truth(gt, pred_map.len(), Some(pred_map.n_y()))?
    };
    let (mesh_y, d_y) = target_geometry(y, pred_map.n_y(), &prep)?;
    let norm = match norm {
        "diameter" => Normalization::Diameter,
        "sqrt_area" => Normalization::SqrtArea(mesh_y.total_area()),
        "none" => Normalization::None,
        other => {
            return Err(CliError::usage(format!(
                "--normalization: unknown {other:?} (expected diameter, sqrt_area or none)"
            )))
        }
    };
    let errors = eval::geodesic_errors(&pred_map, &gt_map, &d_y, norm)?;
    let curve = eval::curve(&errors, &eval::default_thresholds(points, max))?;
    println!("pairs_evaluated {}", errors.len());
    println!("mean_error {}", curve.mean_error);
    if let Some(o) = out {
        let id = format!(
            "{} -> {}",
            pred.display(),
            y.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
        );
        curve.save(o, norm, &[id])?;
        println!("curve: {}", o.display());
    }
    Ok(())
}

/// Position-derived RGB in [0, 1]: each axis rescaled to the bounding box.
fn position_colors(m: &TriMesh) -> Vec<Vec3> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in m.vertices() {
        for a in 0..3 {
            lo[a] = lo[a].min(v[a]);
            hi[a] = hi[a].max(v[a]);
        }
    }
    m.vertices()
        .iter()
        .map(|v| std::array::from_fn(|a| if hi[a] > lo[a] { (v[a] - lo[a]) / (hi[a] - lo[a]) } else { 0.5 }))
        .collect()
}

fn export_colors(x: &Path, y: &Path, corr: &Path, out_dir: &Path, args: &PrepArgs, file: &ConfigFile) -> CliResult<()> {
    let prep = Prep::resolve(args, file)?;
    let map = PointMap::load(corr)?;
    let (bx, _) = prep.bundle(x)?;
    let mesh_x = if bx.n() == map.len() {
        bx.mesh
    } else {
        let full = mesh::load_mesh(x)?;
        if full.num_vertices() != map.len() {
            return Err(fmnet_core::Error::DimensionMismatch(format!(
                "correspondence has {} sources; {} has {} vertices",
                map.len(),
                x.display(),
                full.num_vertices()
            ))
            .into());
        }
        full
    };
    let (mesh_y, _) = target_geometry(y, map.n_y(), &prep)?;
    let src = position_colors(&mesh_x);
    let mut sum = vec![[0.0; 3]; map.n_y()];
    let mut count = vec![0usize; map.n_y()];
    for (i, t) in map.targets().iter().enumerate() {
        if let Some(t) = *t {
            for a in 0..3 {
                sum[t][a] += src[i][a];
            }
            count[t] += 1;
        }
    }
    // unreached targets stay grey
    let dst: Vec<Vec3> = sum
        .iter()
        .zip(&count)
        .map(|(s, &c)| if c == 0 { [0.5; 3] } else { s.map(|v| v / c as f64) })
        .collect();
    std::fs::create_dir_all(out_dir).map_err(|e| fmnet_core::Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    mesh::save_mesh_with_colors(&mesh_x, &src, out_dir.join("source.ply"))?;
    mesh::save_mesh_with_colors(&mesh_y, &dst, out_dir.join("target.ply"))?;
    println!(
        "wrote {} and {}",
        out_dir.join("source.ply").display(),
        out_dir.join("target.ply").display()
    );
    Ok(())
}
