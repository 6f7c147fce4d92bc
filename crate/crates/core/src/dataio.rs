//! Preprocessing orchestration, the on-disk bundle cache, dataset manifests
//! and ground-truth files.
//!
//! Cache layout: `<cache_dir>/<content_hash>/` holding `mesh.ply`,
//! `basis.bin`, `distances.bin`, `shot.bin`, `vertex_map.bin` and
//! `source.txt`. The hash covers the mesh file bytes and every
//! preprocessing parameter.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::geodesic::{self, GeodesicMatrix};
use crate::mesh::{self, TriMesh};
use crate::refine::{self, PointMap};
use crate::shot::{self, DescriptorField};
use crate::spectral::SpectralBasis;
use crate::train::{Landmarks, TrainShape};

const VMAP_MAGIC: &[u8; 8] = b"FMVMAP01";
const BUNDLE_FORMAT: &str = "fmnet-bundle-v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessParams {
    pub target_n: usize,
    pub k: usize,
    pub shot_bins: usize,
    pub shot_radius_fraction: f64,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            target_n: 1500,
            k: 120,
            shot_bins: 10,
            shot_radius_fraction: shot::DEFAULT_RADIUS_FRACTION,
        }
    }
}

/// Everything the network and post-processing need about one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBundle {
    /// remeshed surface
    pub mesh: TriMesh,
    pub basis: SpectralBasis,
    pub distances: GeodesicMatrix,
    pub shot: DescriptorField,
    /// original vertex → remeshed vertex
    pub vertex_map: Vec<usize>,
    pub source_path: PathBuf,
    pub content_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Computed,
    Cached,
}

/// Number of times each preprocessing stage actually ran.
#[derive(Debug, Default)]
pub struct StageCounters {
    pub simplify: AtomicUsize,
    pub basis: AtomicUsize,
    pub distances: AtomicUsize,
    pub shot: AtomicUsize,
    pub cache_hits: AtomicUsize,
}

impl StageCounters {
    pub fn snapshot(&self) -> [usize; 5] {
        [
            self.simplify.load(Ordering::Relaxed),
            self.basis.load(Ordering::Relaxed),
            self.distances.load(Ordering::Relaxed),
            self.shot.load(Ordering::Relaxed),
            self.cache_hits.load(Ordering::Relaxed),
        ]
    }
}

#[derive(Debug)]
pub struct Cache {
    dir: PathBuf,
    pub counters: StageCounters,
}

impl Cache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Cache {
            dir: dir.into(),
            counters: StageCounters::default(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn bundle_dir(&self, hash: &str) -> PathBuf {
        self.dir.join(hash)
    }
}

/// SHA-256 over the format tag, the parameters and the mesh file bytes.
pub fn content_hash(mesh_bytes: &[u8], params: &PreprocessParams) -> String {
    let mut h = Sha256::new();
    h.update(BUNDLE_FORMAT.as_bytes());
    h.update(
        format!(
            "target_n={};k={};shot_bins={};shot_radius_fraction={:e};",
            params.target_n, params.k, params.shot_bins, params.shot_radius_fraction
        )
        .as_bytes(),
    );
    h.update(mesh_bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn bump(c: Option<&Cache>, f: impl Fn(&StageCounters) -> &AtomicUsize) {
    if let Some(c) = c {
        f(&c.counters).fetch_add(1, Ordering::Relaxed);
    }
}

/// Remesh → spectral basis → geodesic distances → SHOT, served from the
/// cache when possible.
pub fn preprocess(path: impl AsRef<Path>, params: &PreprocessParams, cache: Option<&Cache>) -> Result<(ShapeBundle, CacheStatus)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let hash = content_hash(&bytes, params);
    if let Some(c) = cache {
        let dir = c.bundle_dir(&hash);
        if dir.join("source.txt").exists() {
            match ShapeBundle::load(&dir, path, &hash) {
                Ok(b) => {
                    bump(cache, |s| &s.cache_hits);
                    return Ok((b, CacheStatus::Cached));
                }
                Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", dir.display()),
            }
        }
    }
    let full = mesh::load_mesh(path).map_err(|e| e.in_stage("load"))?;
    let bundle = compute(full, params, cache, path, hash)?;
    if let Some(c) = cache {
        bundle.save(&c.bundle_dir(&bundle.content_hash)).map_err(|e| e.in_stage("cache"))?;
    }
    Ok((bundle, CacheStatus::Computed))
}

fn compute(full: TriMesh, params: &PreprocessParams, cache: Option<&Cache>, path: &Path, hash: String) -> Result<ShapeBundle> {
    if params.shot_bins == 0 || !(params.shot_radius_fraction > 0.0) {
        return Err(Error::invalid("SHOT bins and radius fraction must be positive"));
    }
    let (mesh, vertex_map) = if full.num_vertices() > params.target_n {
        bump(cache, |s| &s.simplify);
        mesh::simplify(&full, params.target_n).map_err(|e| e.in_stage("simplify"))?
    } else {
        let n = full.num_vertices();
        (full, (0..n).collect())
    };
    let k = params.k.min(mesh.num_vertices());
    if k < params.k {
        log::warn!("{}: only {} vertices, using k={k}", path.display(), mesh.num_vertices());
    }
    bump(cache, |s| &s.basis);
    let basis = SpectralBasis::from_mesh(&mesh, k).map_err(|e| e.in_stage("eig_basis"))?;
    bump(cache, |s| &s.distances);
    let distances = geodesic::distance_matrix(&mesh).map_err(|e| e.in_stage("distance_matrix"))?;
    bump(cache, |s| &s.shot);
    let radius = params.shot_radius_fraction * distances.diameter();
    if !(radius > 0.0) {
        return Err(Error::invalid("degenerate diameter").in_stage("shot"));
    }
    let shot = shot::shot_descriptors(&mesh, radius, params.shot_bins).map_err(|e| e.in_stage("shot"))?;
    Ok(ShapeBundle {
        mesh,
        basis,
        distances,
        shot,
        vertex_map,
        source_path: path.to_path_buf(),
        content_hash: hash,
    })
}

impl ShapeBundle {
    pub fn n(&self) -> usize {
        self.mesh.num_vertices()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        mesh::save_mesh(&self.mesh, dir.join("mesh.ply"))?;
        self.basis.save(dir.join("basis.bin"))?;
        self.distances.save(dir.join("distances.bin"))?;
        self.shot.save(dir.join("shot.bin"))?;
        let mut w = Writer::new(VMAP_MAGIC);
        w.u64(self.vertex_map.len() as u64);
        for &v in &self.vertex_map {
            w.u64(v as u64);
        }
        w.write_atomic(&dir.join("vertex_map.bin"))?;
        // written last: its presence marks a complete entry
        mesh::io::write_file(&dir.join("source.txt"), self.source_path.to_string_lossy().as_bytes())
    }

    pub fn load(dir: &Path, source_path: &Path, hash: &str) -> Result<Self> {
        let mesh = mesh::load_mesh(dir.join("mesh.ply"))?;
        let basis = SpectralBasis::load(dir.join("basis.bin"))?;
        let distances = GeodesicMatrix::load(dir.join("distances.bin"))?;
        let shot = DescriptorField::load(dir.join("shot.bin"))?;
        let mut r = Reader::open(&dir.join("vertex_map.bin"), VMAP_MAGIC)?;
        let len = r.len()?;
        let vertex_map = (0..len).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        let n = mesh.num_vertices();
        if basis.n() != n || distances.n() != n || shot.n() != n || vertex_map.iter().any(|&v| v >= n) {
            return Err(Error::dims(format!("cached bundle in {} is inconsistent", dir.display())));
        }
        Ok(ShapeBundle {
            mesh,
            basis,
            distances,
            shot,
            vertex_map,
            source_path: source_path.to_path_buf(),
            content_hash: hash.to_string(),
        })
    }

    /// Template correspondence of the remeshed vertices, given a
    /// ground-truth map on the original vertices.
    ///
    /// Remeshed vertex `v` inherits the label of its nearest original
    /// preimage; template index `t` is represented by the survivor of the
    /// original vertex labelled `t`.
    pub fn landmarks(&self, gt_full: &PointMap) -> Result<Landmarks> {
        if gt_full.len() != self.vertex_map.len() {
            return Err(Error::dims(format!(
                "ground truth covers {} vertices, {} has {}",
                gt_full.len(),
                self.source_path.display(),
                self.vertex_map.len()
            )));
        }
        let reps = if self.vertex_map.len() == self.n() && self.vertex_map.iter().enumerate().all(|(i, &v)| i == v) {
            self.vertex_map.clone()
        } else {
            let full = mesh::load_mesh(&self.source_path)?;
            refine::representatives(&self.vertex_map, &self.mesh, &full)?
        };
        let of_vertex = reps.iter().map(|&u| gt_full.get(u)).collect();
        let mut vertex_of = HashMap::new();
        for (u, t) in gt_full.targets().iter().enumerate() {
            if let Some(t) = t {
                vertex_of.entry(*t).or_insert(self.vertex_map[u]);
            }
        }
        Ok(Landmarks { of_vertex, vertex_of })
    }

    /// Network-ready view with the basis truncated to `k`.
    pub fn train_shape(&self, landmarks: Option<Landmarks>, k: usize) -> Result<TrainShape> {
        let name = self.source_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        TrainShape::new(name, self.shot.to_matrix(), &self.basis, self.distances.clone(), landmarks, k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub mesh: PathBuf,
    pub gt: Option<PathBuf>,
}

/// Lines `mesh_path [gt_path]`; blank lines and `#` comments are skipped.
/// Relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            [m] => out.push(ManifestEntry { mesh: resolve(m), gt: None }),
            [m, g] => out.push(ManifestEntry {
                mesh: resolve(m),
                gt: Some(resolve(g)),
            }),
            _ => {
                return Err(Error::Parse(format!(
                    "{} line {}: expected `mesh_path [gt_path]`",
                    path.display(),
                    ln + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{}: manifest lists no shapes", path.display())));
    }
    Ok(out)
}

/// Reads `identity n` or `src tgt` lines into a map over `n_x` source
/// vertices; unlisted sources stay unmatched. Targets are template indices
/// and are checked against `n_y` when given.
pub fn load_ground_truth(path: impl AsRef<Path>, n_x: usize, n_y: Option<usize>) -> Result<PointMap> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |ln: usize, msg: String| Error::Parse(format!("{} line {}: {msg}", path.display(), ln + 1));
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if let Some(&(ln, first)) = lines.first() {
        if let Some(rest) = first.strip_prefix("identity") {
            let n: usize = rest.trim().parse().map_err(|_| err(ln, "expected `identity n`".into()))?;
            if lines.len() > 1 {
                return Err(err(lines[1].0, "unexpected content after `identity`".into()));
            }
            if n != n_x {
                return Err(err(ln, format!("identity over {n} vertices, shape has {n_x}")));
            }
            let m = PointMap::identity(n);
            return match n_y {
                Some(ny) if ny != n => Ok(PointMap::new((0..n).collect(), ny.max(n))?),
                _ => Ok(m),
            };
        }
    }
    let mut targets = vec![None; n_x];
    let mut max_t = 0;
    for &(ln, line) in &lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        let (s, t) = match f.as_slice() {
            [a, b] => a.parse::<usize>().ok().zip(b.parse::<usize>().ok()),
            _ => None,
        }
        .ok_or_else(|| err(ln, format!("expected `src tgt`, got {line:?}")))?;
        if s >= n_x {
            return Err(err(ln, format!("source index {s} ≥ {n_x}")));
        }
        if let Some(ny) = n_y {
            if t >= ny {
                return Err(err(ln, format!("target index {t} ≥ {ny}")));
            }
        }
        if targets[s].replace(t).is_some() {
            return Err(err(ln, format!("source {s} listed twice")));
        }
        max_t = max_t.max(t + 1);
    }
    PointMap::partial(targets, n_y.unwrap_or(max_t))
}
