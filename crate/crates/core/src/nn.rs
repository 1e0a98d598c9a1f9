//! Named parameter sets, initializers, layer helpers and the Adam optimizer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::autodiff::Var;
use crate::scalar::{lit, Scalar};
use crate::tensor::{ConvGeom, Tensor};

/// Ordered list of named weight arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Trainable leaves for one forward/backward pass.
    pub fn leaves(&self) -> Vec<Var<T>> {
        self.tensors.iter().map(|t| Var::leaf(t.clone())).collect()
    }

    pub fn constants(&self) -> Vec<Var<T>> {
        self.tensors
            .iter()
            .map(|t| Var::constant(t.clone()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            buf.clear();
            for &x in t.data() {
                x.to_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        ParamSet { names, tensors }
    }
}

pub fn randn<T: Scalar>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                lit(z * std)
            })
            .collect(),
    )
}

pub fn uniform<T: Scalar>(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| lit(rng.random_range(lo..hi))).collect(),
    )
}

/// He-style init for a `[fan_in, fan_out]` matrix, scaled by `gain`.
pub fn linear_weight<T: Scalar>(
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    randn(&[fan_in, fan_out], gain * (2.0 / fan_in as f64).sqrt(), rng)
}

pub fn conv_weight<T: Scalar>(
    o: usize,
    c: usize,
    k: usize,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    randn(&[o, c, k, k], gain * (2.0 / (c * k * k) as f64).sqrt(), rng)
}

/// `x @ w + b` for `x: [N, in]`, `w: [in, out]`, `b: [1, out]`.
pub fn linear<T: Scalar>(x: &Var<T>, w: &Var<T>, b: &Var<T>) -> Var<T> {
    x.matmul(w).add(b)
}

/// Convolution plus a per-channel bias `b: [1, O, 1, 1]`.
pub fn conv<T: Scalar>(x: &Var<T>, w: &Var<T>, b: &Var<T>, geom: ConvGeom) -> Var<T> {
    x.conv2d(w, geom).add(b)
}

pub const LRELU: f64 = 0.2;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Hyperparameters for a network whose regularizer runs every
    /// `interval` steps, so that the effective schedule matches the
    /// non-lazy one (`c = interval / (interval + 1)`).
    pub fn lazy(&self, interval: usize) -> AdamConfig {
        if interval <= 1 {
            return *self;
        }
        let c = interval as f64 / (interval as f64 + 1.0);
        AdamConfig {
            lr: self.lr * c,
            beta1: self.beta1.powf(c),
            beta2: self.beta2.powf(c),
            eps: self.eps,
        }
    }
}

/// Adam state for one tensor list.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(like: &[Tensor<T>]) -> Self {
        Adam {
            m: like.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: like.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `None` gradients leave the tensor (and its moments) untouched.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Option<Tensor<T>>],
        cfg: &AdamConfig,
        lr: f64,
    ) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step: T = lit(lr * bc2.sqrt() / bc1.max(1e-300));
        let (b1t, b2t): (T, T) = (lit(b1), lit(b2));
        let eps: T = lit(cfg.eps * bc2.sqrt());
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params[i].data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = b1t * m[j] + (T::one() - b1t) * gj;
                v[j] = b2t * v[j] + (T::one() - b2t) * gj * gj;
                p[j] -= step * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}

/// Converts graph gradients into plain tensors.
pub fn grads_to_tensors<T: Scalar>(g: Vec<Option<Var<T>>>) -> Vec<Option<Tensor<T>>> {
    g.into_iter()
        .map(|v| v.map(|v| v.value().clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![Tensor::<f64>::from_f64(&[3], &[2.0, -1.0, 0.5])];
        let mut opt = Adam::new(&p);
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        for _ in 0..2000 {
            let g: Vec<Option<Tensor<f64>>> = vec![Some(p[0].map(|x| 2.0 * x))];
            opt.step(&mut p, &g, &cfg, cfg.lr);
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-3), "{:?}", p[0]);
    }

    #[test]
    fn lazy_correction_values() {
        let base = AdamConfig {
            lr: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        };
        let l = base.lazy(16);
        assert!((l.lr - 2e-3 * 16.0 / 17.0).abs() < 1e-15);
        assert!((l.beta2 - 0.99f64.powf(16.0 / 17.0)).abs() < 1e-15);
        assert_eq!(l.beta1, 0.0);
        assert_eq!(base.lazy(1), base);
    }

    #[test]
    fn hash_is_content_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::<f32>::new();
        ps.push("a", randn(&[4], 1.0, &mut rng));
        let h0 = ps.content_hash();
        assert_eq!(h0, ps.clone().content_hash());
        ps.tensors_mut()[0].data_mut()[2] += 1e-3;
        assert_ne!(h0, ps.content_hash());
    }
}
