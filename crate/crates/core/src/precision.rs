//! Arithmetic precision for the heavy dense products.
//!
//! State is always kept in `f64`; in [`Precision::F32`] mode the large
//! matrix products are rounded to `f32`, multiplied, and widened back.
//! Everything else (reductions, solves, elementwise maps) stays in `f64`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    /// fast training mode
    #[default]
    F32,
    /// exact-gradient / determinism test mode
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision {s:?} (expected f32 or f64)")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

fn narrow(a: &DMatrix<f64>) -> DMatrix<f32> {
    a.map(|x| x as f32)
}

fn widen(a: DMatrix<f32>) -> DMatrix<f64> {
    a.map(|x| x as f64)
}

impl Precision {
    /// `a · b`
    pub fn mul(self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Precision::F64 => a * b,
            Precision::F32 => widen(narrow(a) * narrow(b)),
        }
    }

    /// `aᵀ · b`
    pub fn tr_mul(self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Precision::F64 => a.transpose() * b,
            Precision::F32 => widen(narrow(a).transpose() * narrow(b)),
        }
    }

    /// `a · bᵀ`
    pub fn mul_tr(self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Precision::F64 => a * b.transpose(),
            Precision::F32 => widen(narrow(a) * narrow(b).transpose()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_to_single_precision() {
        let a = DMatrix::from_fn(5, 3, |i, j| (i as f64 + 1.0) / (j as f64 + 2.0));
        let b = DMatrix::from_fn(3, 4, |i, j| (i * j) as f64 - 1.5);
        let exact = Precision::F64.mul(&a, &b);
        assert!((Precision::F32.mul(&a, &b) - &exact).abs().max() < 1e-5);
        assert!((Precision::F64.tr_mul(&a.transpose(), &b) - &exact).abs().max() < 1e-12);
        assert!((Precision::F32.mul_tr(&a, &b.transpose()) - &exact).abs().max() < 1e-5);
    }

    #[test]
    fn parses() {
        assert_eq!("f64".parse::<Precision>().unwrap(), Precision::F64);
        assert!("f16".parse::<Precision>().is_err());
    }
}
