//! Geodesic error metrics, cumulative accuracy curves, and the
//! supervised/unsupervised loss correlation of a training run.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geodesic::GeodesicMatrix;
use crate::mesh::io::write_file;
use crate::refine::PointMap;
use crate::train::HistoryEntry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// divide by the geodesic diameter of `Y`
    Diameter,
    /// divide by `√area(Y)`; carries the area
    SqrtArea(f64),
    /// absolute units
    None,
}

impl Normalization {
    pub fn name(&self) -> &'static str {
        match self {
            Normalization::Diameter => "diameter",
            Normalization::SqrtArea(_) => "sqrt_area",
            Normalization::None => "none",
        }
    }

    fn constant(&self, d_y: &GeodesicMatrix) -> Result<f64> {
        let c = match *self {
            Normalization::Diameter => d_y.diameter(),
            Normalization::SqrtArea(a) => a.sqrt(),
            Normalization::None => 1.0,
        };
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid(format!("degenerate {} normalization", self.name())));
        }
        Ok(c)
    }
}

/// `d_Y(pred(i), gt(i)) / c` for every source vertex matched in both maps,
/// in source order.
pub fn geodesic_errors(pred: &PointMap, gt: &PointMap, d_y: &GeodesicMatrix, norm: Normalization) -> Result<Vec<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::dims(format!(
            "predicted map covers {} vertices, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let c = norm.constant(d_y)?;
    let n = d_y.n();
    let mut out = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        if let (Some(p), Some(g)) = (pred.get(i), gt.get(i)) {
            if p >= n || g >= n {
                return Err(Error::invalid(format!(
                    "vertex {i}: index {} out of range for {n} target vertices",
                    p.max(g)
                )));
            }
            out.push(d_y.get(p, g) / c);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
    pub mean_error: f64,
}

pub const DEFAULT_CURVE_POINTS: usize = 200;
pub const DEFAULT_CURVE_MAX: f64 = 0.25;

/// `points` evenly spaced thresholds from 0 to `max`, inclusive.
pub fn default_thresholds(points: usize, max: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| max * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Fraction of errors `≤ τ` at each threshold.
pub fn curve(errors: &[f64], thresholds: &[f64]) -> Result<ErrorCurve> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::invalid("thresholds must be ascending"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let fractions = thresholds
        .iter()
        .map(|&t| {
            if n == 0 {
                0.0
            } else {
                sorted.partition_point(|&e| e <= t) as f64 / n as f64
            }
        })
        .collect();
    let mean_error = if n == 0 { 0.0 } else { errors.iter().sum::<f64>() / n as f64 };
    Ok(ErrorCurve {
        thresholds: thresholds.to_vec(),
        fractions,
        mean_error,
    })
}

impl ErrorCurve {
    /// Writes `threshold,fraction` rows to `path` and a JSON sidecar at
    /// `<path>.meta.json`.
    pub fn save(&self, path: impl AsRef<Path>, norm: Normalization, pairs: &[String]) -> Result<()> {
        let path = path.as_ref();
        let mut csv = String::from("threshold,fraction\n");
        for (t, f) in self.thresholds.iter().zip(&self.fractions) {
            writeln!(csv, "{t},{f}").unwrap();
        }
        write_file(path, csv.as_bytes())?;
        let meta = serde_json::json!({
            "normalization": norm.name(),
            "mean_error": self.mean_error,
            "pairs": pairs,
        });
        let meta = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        write_file(&sidecar_path(path), meta.as_bytes())
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCorrelation {
    /// Pearson correlation of log unsupervised vs log supervised loss
    pub pearson: f64,
    pub final_over_initial_sup: f64,
}

pub fn loss_correlation(history: &[HistoryEntry]) -> Result<LossCorrelation> {
    let pairs: Vec<(f64, f64)> = history
        .iter()
        .filter_map(|h| h.sup_loss.map(|s| (h.unsup_loss, s)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::invalid("need at least two iterations with a supervised loss"));
    }
    if pairs.iter().any(|&(u, s)| !(u > 0.0 && s > 0.0)) {
        return Err(Error::invalid("losses must be positive to correlate their logarithms"));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    Ok(LossCorrelation {
        pearson: pearson(&xs, &ys)?,
        final_over_initial_sup: pairs[pairs.len() - 1].1 / pairs[0].1,
    })
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::numerical("zero variance"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
