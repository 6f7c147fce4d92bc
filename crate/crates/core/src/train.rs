//! Mini-batch training with ADAM, per-appearance vertex shuffling, and
//! loss logging.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fmaps::{self, LossMode, PipelineConfig, PipelineShape};
use crate::geodesic::GeodesicMatrix;
use crate::net::{self, Checkpoint, Network};
use crate::precision::Precision;
use crate::spectral::SpectralBasis;

pub const LOG_HEADER: &str = "iteration,unsup_loss,sup_loss_or_blank,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub batch_pairs: usize,
    /// spectral basis size used by the functional-map layer
    pub k: usize,
    pub ridge_scale: f64,
    pub seed: u64,
    pub mode: LossMode,
    /// monitor the supervised loss whenever ground truth is available
    pub log_supervised: bool,
    pub precision: Precision,
    /// global gradient-norm clip
    pub clip_norm: f64,
    pub checkpoint_every: usize,
    pub depth: usize,
    pub width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 3000,
            batch_pairs: 4,
            k: 120,
            ridge_scale: fmaps::DEFAULT_RIDGE_SCALE,
            seed: 0,
            mode: LossMode::Unsupervised,
            log_supervised: true,
            precision: Precision::F32,
            clip_norm: 100.0,
            checkpoint_every: 100,
            depth: net::DEFAULT_DEPTH,
            width: net::DEFAULT_WIDTH,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        unit("learning_rate", self.learning_rate)?;
        unit("beta1", self.beta1)?;
        unit("beta2", self.beta2)?;
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.batch_pairs == 0 {
            return Err(Error::invalid("batch_pairs must be at least 1"));
        }
        if self.k == 0 || self.depth == 0 || self.width == 0 {
            return Err(Error::invalid("k, depth and width must be positive"));
        }
        if !(self.ridge_scale >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::invalid("ridge_scale must be ≥ 0 and clip_norm > 0"));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            ridge_scale: self.ridge_scale,
            precision: self.precision,
        }
    }
}

/// ADAM moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::dims("gradient, moment and parameter sizes differ"));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite gradient at parameter {i} (step {})",
                self.step + 1
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

/// Correspondence of each vertex with a shared template (e.g. FAUST-style
/// common indexing), in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks {
    /// template index of each vertex
    pub of_vertex: Vec<Option<usize>>,
    /// vertex standing in for each template index
    pub vertex_of: HashMap<usize, usize>,
}

impl Landmarks {
    pub fn identity(n: usize) -> Self {
        Landmarks {
            of_vertex: (0..n).map(Some).collect(),
            vertex_of: (0..n).map(|i| (i, i)).collect(),
        }
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        let mut of_vertex = vec![None; self.of_vertex.len()];
        for (old, &new) in perm.iter().enumerate() {
            of_vertex[new] = self.of_vertex[old];
        }
        Landmarks {
            of_vertex,
            vertex_of: self.vertex_of.iter().map(|(&t, &v)| (t, perm[v])).collect(),
        }
    }
}

/// Ground-truth map `X → Y` through the shared template, if every vertex of
/// `X` has a counterpart.
pub fn pair_ground_truth(x: &Landmarks, y: &Landmarks) -> Option<Vec<usize>> {
    x.of_vertex
        .iter()
        .map(|t| t.and_then(|t| y.vertex_of.get(&t).copied()))
        .collect()
}

/// Network inputs and geometry of one training shape.
#[derive(Debug, Clone)]
pub struct TrainShape {
    pub name: String,
    pub descriptors: DMatrix<f64>,
    pub basis: SpectralBasis,
    pub distances: GeodesicMatrix,
    pub landmarks: Option<Landmarks>,
}

impl TrainShape {
    /// Truncates the basis to `k` and checks sizes.
    pub fn new(
        name: impl Into<String>,
        descriptors: DMatrix<f64>,
        basis: &SpectralBasis,
        distances: GeodesicMatrix,
        landmarks: Option<Landmarks>,
        k: usize,
    ) -> Result<Self> {
        let n = descriptors.nrows();
        if basis.n() != n || distances.n() != n || landmarks.as_ref().is_some_and(|l| l.of_vertex.len() != n) {
            return Err(Error::dims("descriptors, basis, distances and landmarks disagree on n"));
        }
        if k > basis.k() {
            return Err(Error::invalid(format!("requested k={k} but the basis has only {}", basis.k())));
        }
        Ok(TrainShape {
            name: name.into(),
            descriptors,
            basis: basis.truncated(k)?,
            distances,
            landmarks,
        })
    }

    pub fn n(&self) -> usize {
        self.descriptors.nrows()
    }

    /// Relabels vertices so that new vertex `perm[i]` is old vertex `i`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut descriptors = DMatrix::zeros(self.n(), self.descriptors.ncols());
        for (old, &new) in perm.iter().enumerate() {
            descriptors.set_row(new, &self.descriptors.row(old));
        }
        TrainShape {
            name: self.name.clone(),
            descriptors,
            basis: self.basis.permuted(perm),
            distances: self.distances.permuted(perm),
            landmarks: self.landmarks.as_ref().map(|l| l.permuted(perm)),
        }
    }

    pub fn view(&self) -> PipelineShape<'_> {
        PipelineShape {
            descriptors: &self.descriptors,
            basis: &self.basis,
            distances: &self.distances,
        }
    }
}

/// An ordered, freshly shuffled training pair.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub source: usize,
    pub target: usize,
    pub x: TrainShape,
    pub y: TrainShape,
    pub gt: Option<Vec<usize>>,
}

/// Draws `batch_pairs` ordered pairs uniformly (no self-pairs when at least
/// two shapes exist) and shuffles each appearance's vertex order.
pub fn sample_batch(dataset: &[TrainShape], batch_pairs: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PairSample>> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let n = dataset.len();
    let shuffled = |s: &TrainShape, rng: &mut ChaCha8Rng| {
        let mut perm: Vec<usize> = (0..s.n()).collect();
        perm.shuffle(rng);
        s.permuted(&perm)
    };
    (0..batch_pairs)
        .map(|_| {
            let a = rng.random_range(0..n);
            let b = if n >= 2 {
                let b = rng.random_range(0..n - 1);
                if b >= a {
                    b + 1
                } else {
                    b
                }
            } else {
                a
            };
            let x = shuffled(&dataset[a], rng);
            let y = shuffled(&dataset[b], rng);
            let gt = match (&x.landmarks, &y.landmarks) {
                (Some(lx), Some(ly)) => pair_ground_truth(lx, ly),
                _ => None,
            };
            Ok(PairSample {
                source: a,
                target: b,
                x,
                y,
                gt,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub unsup_loss: f64,
    pub sup_loss: Option<f64>,
    pub wall_ms: u64,
}

impl HistoryEntry {
    pub fn csv_row(&self) -> String {
        let sup = self.sup_loss.map(|s| s.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.iteration, self.unsup_loss, sup, self.wall_ms)
    }
}

/// Parses a training log written by [`train_loop`].
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<HistoryEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |ln: usize| Error::Parse(format!("{}: malformed log line {}", path.display(), ln + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == LOG_HEADER => {}
        _ => return Err(Error::Parse(format!("{}: missing log header", path.display()))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad(ln));
            }
            Ok(HistoryEntry {
                iteration: f[0].parse().map_err(|_| bad(ln))?,
                unsup_loss: f[1].parse().map_err(|_| bad(ln))?,
                sup_loss: if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad(ln))?)
                },
                wall_ms: f[3].parse().map_err(|_| bad(ln))?,
            })
        })
        .collect()
}

/// Where training writes its artifacts; both optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub log: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Unsupervised and (if ground truth is given) supervised loss of the
/// network's prediction on one ordered pair, without gradients.
pub fn evaluate_pair(
    net: &Network,
    x: &TrainShape,
    y: &TrainShape,
    gt: Option<&[usize]>,
    cfg: &PipelineConfig,
) -> Result<(f64, Option<f64>)> {
    let (_, soft) = fmaps::predict(net, x.view(), y.view(), cfg)?;
    let (u, _) = fmaps::unsup_loss(&soft, &x.distances, &y.distances, cfg.precision)?;
    let s = gt.map(|gt| fmaps::sup_loss(&soft, &y.distances, gt).map(|(l, _)| l)).transpose()?;
    Ok((u, s))
}

fn all_pairs_have_ground_truth(dataset: &[TrainShape]) -> bool {
    let n = dataset.len();
    (0..n).all(|a| {
        (0..n).filter(|&b| b != a || n == 1).all(|b| match (&dataset[a].landmarks, &dataset[b].landmarks) {
            (Some(x), Some(y)) => pair_ground_truth(x, y).is_some(),
            _ => false,
        })
    })
}

/// Trains from a fresh seeded initialization.
pub fn train_loop(dataset: &[TrainShape], cfg: &TrainConfig, out: &TrainOutputs) -> Result<(Network, Vec<HistoryEntry>)> {
    let net = Network::init(cfg.depth, cfg.width, cfg.seed);
    train_from(Checkpoint::fresh(net), dataset, cfg, out)
}

/// Continues training from a checkpoint.
pub fn train_from(
    start: Checkpoint,
    dataset: &[TrainShape],
    cfg: &TrainConfig,
    out: &TrainOutputs,
) -> Result<(Network, Vec<HistoryEntry>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if let Some(s) = dataset.iter().find(|s| s.descriptors.ncols() != cfg.width) {
        return Err(Error::dims(format!(
            "shape {} has {}-dimensional descriptors, network width is {}",
            s.name,
            s.descriptors.ncols(),
            cfg.width
        )));
    }
    if start.net.depth() != cfg.depth || start.net.width() != cfg.width {
        return Err(Error::dims("checkpoint architecture differs from the configuration"));
    }
    if cfg.mode == LossMode::Supervised && !all_pairs_have_ground_truth(dataset) {
        return Err(Error::invalid("supervised mode needs complete ground truth for every training pair"));
    }
    let Checkpoint {
        mut net,
        adam_m,
        adam_v,
        step,
    } = start;
    let mut adam = Adam {
        m: adam_m,
        v: adam_v,
        step,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = match &out.log {
        Some(p) => {
            let f = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(p, e))?;
            Some((w, p.clone()))
        }
        None => None,
    };
    let save = |net: &Network, adam: &Adam| -> Result<()> {
        if let Some(p) = &out.checkpoint {
            Checkpoint {
                net: net.clone(),
                adam_m: adam.m.clone(),
                adam_v: adam.v.clone(),
                step: adam.step,
            }
            .save(p)?;
        }
        Ok(())
    };
    let pipeline = cfg.pipeline();
    let started = Instant::now();
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let batch = sample_batch(dataset, cfg.batch_pairs, &mut rng)?;
        let results: Vec<fmaps::PipelineOutput> = batch
            .par_iter()
            .map(|s| {
                let gt = if cfg.log_supervised || cfg.mode == LossMode::Supervised {
                    s.gt.as_deref()
                } else {
                    None
                };
                fmaps::pipeline_loss_and_grads(&net, s.x.view(), s.y.view(), gt, &pipeline)
            })
            .collect::<Result<_>>()
            .map_err(|e| {
                log::error!("iteration {it} failed; last checkpoint retained");
                e
            })?;
        let mut grads = vec![0.0; net.num_params()];
        let mut unsup = 0.0;
        let mut sup = Some(0.0);
        for r in &results {
            for (g, gi) in grads.iter_mut().zip(&r.grads) {
                *g += gi;
            }
            unsup += r.unsup_loss;
            sup = sup.zip(r.sup_loss).map(|(a, b)| a + b);
        }
        if !unsup.is_finite() {
            return Err(Error::numerical(format!("unsupervised loss diverged at iteration {it}")));
        }
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cfg.clip_norm {
            let s = cfg.clip_norm / norm;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        adam.step(net.params_mut(), &grads, cfg)?;
        let entry = HistoryEntry {
            iteration: it,
            unsup_loss: unsup,
            sup_loss: if cfg.log_supervised { sup } else { None },
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some((w, p)) = &mut log {
            writeln!(w, "{}", entry.csv_row())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p.as_path(), e))?;
        }
        log::info!(
            "iteration {it}: loss {unsup:.6e}{}",
            entry.sup_loss.map(|s| format!(", supervised {s:.6e}")).unwrap_or_default()
        );
        history.push(entry);
        if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
            save(&net, &adam)?;
        }
    }
    save(&net, &adam)?;
    Ok((net, history))
}

/// Renders a history as the CSV log text (header included).
pub fn format_log(history: &[HistoryEntry]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for h in history {
        writeln!(s, "{}", h.csv_row()).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn adam_first_step_by_hand() {
        let cfg = TrainConfig::default();
        let mut p = [0.5];
        let mut adam = Adam::new(1);
        adam.step(&mut p, &[1.0], &cfg).unwrap();
        assert!((p[0] - (0.5 - 1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
        let mut q = [0.5, -2.0];
        Adam::new(2).step(&mut q, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(q, [0.5, -2.0]);
        assert!(Adam::new(1).step(&mut [0.0], &[f64::NAN], &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_pairs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
    }

    fn toy_dataset(count: usize, width: usize) -> Vec<TrainShape> {
        let rest = shapes::figure(1);
        (0..count)
            .map(|s| {
                let mesh = shapes::pose_figure(&rest, &[0.2 * s as f64, -0.1 * s as f64]);
                let basis = SpectralBasis::from_mesh(&mesh, 10).unwrap();
                let d = crate::geodesic::distance_matrix(&mesh).unwrap();
                let desc = DMatrix::from_fn(mesh.num_vertices(), width, |i, j| {
                    let v = mesh.vertices()[i];
                    (v[j % 3] * (1.0 + j as f64)).sin()
                });
                TrainShape::new(format!("s{s}"), desc, &basis, d, Some(Landmarks::identity(mesh.num_vertices())), 8)
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn sampling_contract() {
        let data = toy_dataset(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_batch(&data, 20, &mut rng).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for s in &batch {
            assert_ne!(s.source, s.target);
            seen.insert((s.source, s.target));
            // the composed ground truth still lands on the same template vertex
            let gt = s.gt.as_ref().unwrap();
            for (i, &j) in gt.iter().enumerate() {
                assert_eq!(s.x.landmarks.as_ref().unwrap().of_vertex[i], s.y.landmarks.as_ref().unwrap().of_vertex[j]);
            }
        }
        assert_eq!(seen.len(), 2);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = sample_batch(&data, 3, &mut r1).unwrap();
        let b = sample_batch(&data, 3, &mut r2).unwrap();
        for (a, b) in a.iter().zip(&b) {
            assert_eq!(a.gt, b.gt);
            assert_eq!(a.x.descriptors, b.x.descriptors);
        }
        assert!(sample_batch(&[], 1, &mut r1).is_err());
    }

    #[test]
    fn shuffling_preserves_true_correspondence_loss() {
        let data = toy_dataset(1, 4);
        let s = &data[0];
        let n = s.n();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let y = s.permuted(&perm);
        let gt = pair_ground_truth(s.landmarks.as_ref().unwrap(), y.landmarks.as_ref().unwrap()).unwrap();
        assert_eq!(gt, perm);
        let p = DMatrix::from_fn(n, n, |j, i| if gt[i] == j { 1.0 } else { 0.0 });
        let soft = fmaps::SoftCorrespondence { q: p.clone(), p };
        let (l, _) = fmaps::unsup_loss(&soft, &s.distances, &y.distances, Precision::F64).unwrap();
        assert_eq!(l, 0.0);
    }

    fn small_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            iterations,
            batch_pairs: 2,
            k: 8,
            depth: 2,
            width: 4,
            precision: Precision::F64,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn zero_iterations_is_initialization() {
        let data = toy_dataset(2, 4);
        let (net, hist) = train_loop(&data, &small_cfg(0), &TrainOutputs::default()).unwrap();
        assert_eq!(net, Network::init(2, 4, 7));
        assert!(hist.is_empty());
    }

    #[test]
    fn runs_are_bitwise_reproducible() {
        let data = toy_dataset(2, 4);
        let dir = tempfile::tempdir().unwrap();
        let out = |tag: &str| TrainOutputs {
            log: Some(dir.path().join(format!("{tag}.csv"))),
            checkpoint: Some(dir.path().join(format!("{tag}.ck"))),
        };
        let cfg = TrainConfig { checkpoint_every: 2, ..small_cfg(5) };
        let (n1, h1) = train_loop(&data, &cfg, &out("a")).unwrap();
        let (n2, h2) = train_loop(&data, &cfg, &out("b")).unwrap();
        assert_eq!(n1, n2);
        assert_eq!(h1.len(), 5);
        let strip = |h: &[HistoryEntry]| h.iter().map(|e| (e.iteration, e.unsup_loss.to_bits(), e.sup_loss.map(f64::to_bits))).collect::<Vec<_>>();
        assert_eq!(strip(&h1), strip(&h2));
        let logged = read_log(dir.path().join("a.csv")).unwrap();
        assert_eq!(strip(&logged), strip(&h1));
        let ck = Checkpoint::load(dir.path().join("a.ck")).unwrap();
        assert_eq!(ck.step, 5);
    }

    #[test]
    fn supervised_mode_requires_ground_truth() {
        let mut data = toy_dataset(2, 4);
        data[1].landmarks = None;
        let cfg = TrainConfig { mode: LossMode::Supervised, ..small_cfg(1) };
        let err = train_loop(&data, &cfg, &TrainOutputs::default()).unwrap_err();
        assert!(err.to_string().contains("ground truth"));
    }
}
