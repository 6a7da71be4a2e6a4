//! Minimal reverse-mode autodiff over NCHW f32 tensors.
//!
//! The design constraint is bit-reproducibility between training and coding:
//! there is exactly one implementation of every kernel, and two engines that
//! drive it. [`DirectEngine`] evaluates forward only (what the codec uses);
//! [`TapedEngine`] records a tape and can backpropagate. Both run the same
//! single-threaded kernels with the same accumulation order, so a network
//! evaluated under either engine yields identical f32 activations, which is
//! what lets the decoder reproduce the encoder's entropy parameters exactly.
//!
//! Rate terms are first-class ops: their forward pass computes exact code
//! lengths in f64 (finite even hundreds of sigmas out in the tail) and their
//! backward pass uses analytic gradients, so the training loss is the real
//! codec objective rather than a surrogate.

mod checkpoint;
mod engines;
pub mod kernels;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use engines::{
    raw_to_mu_b, DirectEngine, Grads, TapedEngine, Var, B_LOG_SCALE, INPUT_SCALE,
    LIKELIHOOD_FLOOR, MU_SCALE,
};
pub use optim::{Adam, GRAD_CLIP};

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense NCHW tensor. Everything in the network stack is rank 4; vectors and
/// matrices use singleton dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "shape/data mismatch");
        Tensor { shape, data }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor { shape: [1, 1, 1, 1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(n, c, y, x)]
    }

    /// Elementwise in-place accumulate; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// Handle to a named parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered, named parameter set for one model. Insertion order is the
/// serialization order, so checkpoints are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, t: Tensor) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let idx = self.entries.len();
        self.index.insert(name.to_string(), idx);
        self.entries.push((name.to_string(), t));
        ParamId(idx)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.entries.iter().enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Total parameter count across all tensors.
    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Uniform init with variance `1/fan_in`.
fn uniform_init(rng: &mut ChaCha8Rng, shape: [usize; 4], fan_in: usize) -> Tensor {
    let bound = (3.0 / fan_in as f32).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Convolution weight `[co, ci, kh, kw]`.
pub fn conv_weight_init(rng: &mut ChaCha8Rng, co: usize, ci: usize, kh: usize, kw: usize) -> Tensor {
    uniform_init(rng, [co, ci, kh, kw], ci * kh * kw)
}

/// Transposed-convolution weight `[ci, co, kh, kw]`.
pub fn convt_weight_init(rng: &mut ChaCha8Rng, ci: usize, co: usize, kh: usize, kw: usize) -> Tensor {
    uniform_init(rng, [ci, co, kh, kw], ci * kh * kw)
}

pub fn bias_init(c: usize) -> Tensor {
    Tensor::zeros([1, c, 1, 1])
}

/// Graph-building interface implemented by both engines. Network definitions
/// are written once against this trait; whether they are differentiable is
/// the caller's choice of engine.
pub trait Engine {
    type T: Copy;

    /// Bind a stored parameter into the graph (cached per id).
    fn param(&mut self, id: ParamId) -> Self::T;
    /// Bind an input tensor (constant; no gradient).
    fn input(&mut self, t: Tensor) -> Self::T;
    fn conv2d(&mut self, x: Self::T, w: Self::T, b: Self::T, stride: usize, pad: usize) -> Self::T;
    fn conv_transpose2d(&mut self, x: Self::T, w: Self::T, b: Self::T, stride: usize) -> Self::T;
    fn leaky_relu(&mut self, x: Self::T) -> Self::T;
    fn add(&mut self, a: Self::T, b: Self::T) -> Self::T;
    fn concat_c(&mut self, parts: &[Self::T]) -> Self::T;
    fn slice_c(&mut self, x: Self::T, from: usize, to: usize) -> Self::T;
    fn scale(&mut self, x: Self::T, k: f32) -> Self::T;
    /// Round to nearest integer; differentiable engines pass the gradient
    /// straight through.
    fn round_ste(&mut self, x: Self::T) -> Self::T;
    /// Sum every element into a scalar.
    fn sum_all(&mut self, x: Self::T) -> Self::T;
    fn value(&self, x: Self::T) -> &Tensor;
}
