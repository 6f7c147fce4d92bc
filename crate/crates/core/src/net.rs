//! Residual descriptor network.
//!
//! `depth` blocks of `x ← x + ELU(x W + b)` with square `width × width`
//! weights, applied row-wise. Parameters live in one flat `f64` buffer so the
//! optimizer can treat them as a single vector:
//! block `l` occupies `W_l` (row-major, `W[i][j]` maps input `i` to output
//! `j`) followed by `b_l`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};
use crate::precision::Precision;

pub const DEFAULT_DEPTH: usize = 7;
pub const DEFAULT_WIDTH: usize = 352;

const CHECKPOINT_MAGIC: &[u8; 8] = b"FMNETCK1";
const CHECKPOINT_VERSION: u32 = 1;
/// dense layers inside each residual block
const LAYERS_PER_BLOCK: u32 = 1;

#[inline]
fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    depth: usize,
    width: usize,
    params: Vec<f64>,
}

/// Activations saved by [`Network::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// block inputs `x_l`
    inputs: Vec<DMatrix<f64>>,
    /// pre-activations `x_l W_l + b_l`
    pre: Vec<DMatrix<f64>>,
}

impl Network {
    /// All-zero parameters: the identity map.
    pub fn zeros(depth: usize, width: usize) -> Self {
        Network {
            depth,
            width,
            params: vec![0.0; depth * (width * width + width)],
        }
    }

    /// Weights uniform in `±1/√width`, biases zero.
    pub fn init(depth: usize, width: usize, seed: u64) -> Self {
        let mut net = Self::zeros(depth, width);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (width as f64).sqrt();
        let block = width * width + width;
        for l in 0..depth {
            for w in &mut net.params[l * block..l * block + width * width] {
                *w = rng.random_range(-scale..scale);
            }
        }
        net
    }

    pub fn from_params(depth: usize, width: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != depth * (width * width + width) {
            return Err(Error::dims(format!(
                "{} parameters for depth {depth}, width {width}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numerical("non-finite network parameter"));
        }
        Ok(Network { depth, width, params })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn block_offset(&self, l: usize) -> usize {
        l * (self.width * self.width + self.width)
    }

    pub fn weight(&self, l: usize) -> DMatrix<f64> {
        let o = self.block_offset(l);
        DMatrix::from_row_slice(self.width, self.width, &self.params[o..o + self.width * self.width])
    }

    pub fn bias(&self, l: usize) -> DVector<f64> {
        let o = self.block_offset(l) + self.width * self.width;
        DVector::from_column_slice(&self.params[o..o + self.width])
    }

    pub fn set_weight(&mut self, l: usize, w: &DMatrix<f64>) {
        let o = self.block_offset(l);
        for i in 0..self.width {
            for j in 0..self.width {
                self.params[o + i * self.width + j] = w[(i, j)];
            }
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>, precision: Precision) -> Result<(DMatrix<f64>, ForwardCache)> {
        if x.ncols() != self.width {
            return Err(Error::dims(format!(
                "network input has width {}, expected {}",
                x.ncols(),
                self.width
            )));
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.depth),
            pre: Vec::with_capacity(self.depth),
        };
        let mut h = x.clone();
        for l in 0..self.depth {
            let b = self.bias(l);
            let mut z = precision.mul(&h, &self.weight(l));
            for mut row in z.row_iter_mut() {
                row += b.transpose();
            }
            let next = &h + z.map(elu);
            cache.inputs.push(h);
            cache.pre.push(z);
            h = next;
        }
        Ok((h, cache))
    }

    /// Output only.
    pub fn apply(&self, x: &DMatrix<f64>, precision: Precision) -> Result<DMatrix<f64>> {
        self.forward(x, precision).map(|(y, _)| y)
    }

    /// Returns `(∂L/∂θ, ∂L/∂x)` given `∂L/∂y`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &DMatrix<f64>,
        precision: Precision,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if cache.inputs.len() != self.depth {
            return Err(Error::invalid("forward cache does not belong to this network"));
        }
        let n = cache.inputs.first().map_or(grad_out.nrows(), |x| x.nrows());
        if grad_out.shape() != (n, self.width) {
            return Err(Error::dims(format!(
                "output gradient is {:?}, expected ({n}, {})",
                grad_out.shape(),
                self.width
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = grad_out.clone();
        for l in (0..self.depth).rev() {
            let dz = g.zip_map(&cache.pre[l], |gi, zi| gi * elu_prime(zi));
            let dw = precision.tr_mul(&cache.inputs[l], &dz);
            let o = self.block_offset(l);
            for i in 0..self.width {
                for j in 0..self.width {
                    grads[o + i * self.width + j] = dw[(i, j)];
                }
            }
            let ob = o + self.width * self.width;
            for (j, col) in dz.column_iter().enumerate() {
                grads[ob + j] = col.sum();
            }
            g += precision.mul_tr(&dz, &self.weight(l));
        }
        Ok((grads, g))
    }
}

/// Network plus optimizer state, as persisted on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Network,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
}

impl Checkpoint {
    pub fn fresh(net: Network) -> Self {
        let p = net.num_params();
        Checkpoint {
            net,
            adam_m: vec![0.0; p],
            adam_v: vec![0.0; p],
            step: 0,
        }
    }

    /// Layout: magic `FMNETCK1`, `version: u32`, `depth: u32`, `width: u32`,
    /// `layers_per_block: u32`, parameters as f32, ADAM first and second
    /// moments as f32, `step: u64`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = Writer::new(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.u32(self.net.depth as u32);
        w.u32(self.net.width as u32);
        w.u32(LAYERS_PER_BLOCK);
        w.f32s(self.net.params.iter().map(|&x| x as f32));
        w.f32s(self.adam_m.iter().map(|&x| x as f32));
        w.f32s(self.adam_v.iter().map(|&x| x as f32));
        w.u64(self.step);
        w.write_atomic(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = Reader::open(path.as_ref(), CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
        }
        let depth = r.u32()? as usize;
        let width = r.u32()? as usize;
        let layers = r.u32()?;
        if layers != LAYERS_PER_BLOCK {
            return Err(Error::Parse(format!("unsupported block layout ({layers} layers per block)")));
        }
        let count = depth
            .checked_mul(width * width + width)
            .ok_or_else(|| Error::Parse("checkpoint shape overflows".into()))?;
        let widen = |v: Vec<f32>| v.into_iter().map(f64::from).collect::<Vec<_>>();
        let params = widen(r.f32s(count)?);
        let adam_m = widen(r.f32s(count)?);
        let adam_v = widen(r.f32s(count)?);
        let step = r.u64()?;
        r.finish()?;
        Ok(Checkpoint {
            net: Network::from_params(depth, width, params)?,
            adam_m,
            adam_v,
            step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_params_is_identity() {
        let net = Network::zeros(3, 5);
        let x = random(4, 5, 1);
        assert_eq!(net.apply(&x, Precision::F64).unwrap(), x);
    }

    #[test]
    fn hand_evaluated_block() {
        let mut net = Network::zeros(1, 3);
        net.set_weight(0, &DMatrix::identity(3, 3));
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let y = net.apply(&x, Precision::F64).unwrap();
        assert_eq!(y[(0, 0)], 2.0);
        assert_eq!(y[(0, 1)], 0.0);
    }

    #[test]
    fn rows_are_independent() {
        let net = Network::init(2, 6, 3);
        let x = random(5, 6, 4);
        let perm = [3, 0, 4, 1, 2];
        let xp = DMatrix::from_fn(5, 6, |i, j| x[(perm[i], j)]);
        let y = net.apply(&x, Precision::F64).unwrap();
        let yp = net.apply(&xp, Precision::F64).unwrap();
        for i in 0..5 {
            for j in 0..6 {
                assert!((yp[(i, j)] - y[(perm[i], j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn wrong_width_rejected() {
        assert!(Network::zeros(1, 4).forward(&random(2, 3, 0), Precision::F64).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (n, d) = (5, 4);
        let net = Network::init(3, d, 11);
        let x = random(n, d, 12);
        let target = random(n, d, 13);
        // L = ½‖y − t‖²
        let loss = |net: &Network, x: &DMatrix<f64>| {
            0.5 * (net.apply(x, Precision::F64).unwrap() - &target).norm_squared()
        };
        let (y, cache) = net.forward(&x, Precision::F64).unwrap();
        let (gp, gx) = net.backward(&cache, &(&y - &target), Precision::F64).unwrap();
        let h = 1e-6;
        for k in 0..net.num_params() {
            let mut a = net.clone();
            a.params_mut()[k] += h;
            let mut b = net.clone();
            b.params_mut()[k] -= h;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!((fd - gp[k]).abs() <= 1e-5 * fd.abs().max(1.0), "param {k}: {fd} vs {}", gp[k]);
        }
        for i in 0..n {
            for j in 0..d {
                let mut xa = x.clone();
                xa[(i, j)] += h;
                let mut xb = x.clone();
                xb[(i, j)] -= h;
                let fd = (loss(&net, &xa) - loss(&net, &xb)) / (2.0 * h);
                assert!((fd - gx[(i, j)]).abs() <= 1e-5 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_output_grad_gives_zero() {
        let net = Network::init(2, 4, 5);
        let (_, cache) = net.forward(&random(3, 4, 6), Precision::F64).unwrap();
        let (gp, gx) = net.backward(&cache, &DMatrix::zeros(3, 4), Precision::F64).unwrap();
        assert!(gp.iter().all(|&g| g == 0.0));
        assert_eq!(gx, DMatrix::zeros(3, 4));
    }

    #[test]
    fn identity_net_passes_gradient() {
        let net = Network::zeros(2, 4);
        let (_, cache) = net.forward(&random(3, 4, 7), Precision::F64).unwrap();
        let g = random(3, 4, 8);
        let (_, gx) = net.backward(&cache, &g, Precision::F64).unwrap();
        assert_eq!(gx, g);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        assert_eq!(Network::init(2, 8, 42), Network::init(2, 8, 42));
        assert_ne!(Network::init(2, 8, 42), Network::init(2, 8, 43));
        let bound = 1.0 / 8f64.sqrt();
        assert!(Network::init(2, 8, 1).params().iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut ck = Checkpoint::fresh(Network::init(2, 3, 9));
        ck.adam_m.iter_mut().enumerate().for_each(|(i, m)| *m = i as f64 * 0.25);
        ck.adam_v.iter_mut().for_each(|v| *v = 0.5);
        ck.step = 17;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.adam_m, ck.adam_m);
        for (a, b) in back.net.params().iter().zip(ck.net.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        std::fs::write(&p, b"FMNETCK1\x02\0\0\0").unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
