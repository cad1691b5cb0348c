//! Shared numerical primitives: stable softmax, entropy, seeded Gaussian
//! sampling, dense vector helpers and a central-difference gradient checker.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::invalid;
use crate::Result;

/// Default finite-difference step for [`grad_check`].
pub const GRAD_CHECK_EPS: f64 = 1e-5;
/// Default pass threshold for [`grad_check`].
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// A probability vector over relation classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates non-negativity and unit mass (within 1e-9).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid!("probability vector must be non-empty"));
        }
        if values.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid!("probability entries must be finite and non-negative"));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid!("probabilities sum to {total}, expected 1"));
        }
        Ok(Self(values))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(scores: &[f64]) -> Result<ProbVector> {
    if scores.is_empty() {
        return Err(invalid!("softmax of an empty vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid!("softmax input contains non-finite scores"));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(ProbVector(out))
}

/// Log-sum-exp of `scores`.
pub fn log_sum_exp(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(scores.iter().map(|s| libm::exp(s - max)).sum::<f64>())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * libm::log(x)).sum::<f64>()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(sq_norm(a))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

/// `W x + b` for a row-major `rows x cols` matrix.
pub fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    debug_assert_eq!(w.len(), b.len() * cols);
    w.chunks_exact(cols)
        .zip(b)
        .map(|(row, bias)| dot(row, x) + bias)
        .collect()
}

/// `out += W^T g` for a row-major `rows x cols` matrix.
pub fn add_transpose_matvec(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (row, gi) in w.chunks_exact(cols).zip(g) {
        if *gi != 0.0 {
            axpy(*gi, row, out);
        }
    }
}

/// `grad_w += g x^T` for a row-major weight gradient.
pub fn add_outer(g: &[f64], x: &[f64], grad_w: &mut [f64]) {
    let cols = x.len();
    for (row, gi) in grad_w.chunks_exact_mut(cols).zip(g) {
        if *gi != 0.0 {
            axpy(*gi, x, row);
        }
    }
}

/// A reproducible random stream: a ChaCha8 generator tagged with its seed.
///
/// The word position is exposed so a stream can be checkpointed and resumed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named component of a run seeded with `seed`.
    pub fn for_component(seed: u64, component: &str) -> Self {
        Self::new(stream_seed(seed, component))
    }

    /// Resumes a stream at a recorded word position.
    pub fn resume(seed: u64, position: u128) -> Self {
        let mut rng = Self::new(seed);
        rng.inner.set_word_pos(position);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Derives a component stream seed from the run seed and a component name
/// (FNV-1a of the name mixed through splitmix64).
pub fn stream_seed(seed: u64, component: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// `n` i.i.d. standard normal draws.
pub fn sample_standard_normal(rng: &mut SeededRng, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid!("requested zero normal draws"));
    }
    Ok((0..n).map(|_| rng.standard_normal()).collect())
}

/// Central-difference approximation of the gradient of `f` at `x`.
pub fn numeric_gradient<F>(f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let plus = f(&probe);
            probe[i] = x[i] - eps;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Compares an analytic gradient with central differences of `f` at `x`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, analytic: &[f64], x: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(invalid!("finite-difference step must be positive, got {eps}"));
    }
    if analytic.len() != x.len() {
        return Err(invalid!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            x.len()
        ));
    }
    if !f(x).is_finite() {
        return Err(invalid!("function is not finite at the check point"));
    }
    let numeric = numeric_gradient(&f, x, eps);
    if numeric.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("function is not finite in the check neighbourhood"));
    }
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}
