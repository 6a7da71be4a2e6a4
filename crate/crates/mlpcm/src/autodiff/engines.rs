//! Forward-only and taped implementations of the [`Engine`] trait.
//!
//! `DirectEngine` is what the codec runs: it evaluates the shared kernels and
//! keeps values only. `TapedEngine` records every op and supports reverse-mode
//! differentiation, including the two rate ops whose forward passes are exact
//! code lengths. Scalar-valued nodes also keep an f64 copy of their value so
//! losses can be logged and finite-difference-checked at full precision.

use std::collections::{BTreeMap, HashMap};

use super::kernels as k;
use super::{Engine, ParamId, ParamStore, Tensor};
use crate::entropy::factorized::{FactorizedChannel, PARAMS_PER_CHANNEL};
use crate::entropy::{B_MAX, B_MIN};
use crate::math::gauss_interval_bits;

/// Networks see coefficients scaled by 1/64, so the mean head is scaled back
/// up by 64 and the scale head passes through `exp(4 * raw)`. The same
/// mapping feeds the snapped coding parameters at inference time.
pub const MU_SCALE: f64 = 64.0;
pub const B_LOG_SCALE: f64 = 4.0;
/// Input-side scaling applied to coefficient tensors before any conv.
pub const INPUT_SCALE: f32 = 1.0 / 64.0;

/// Map the two raw head outputs for one symbol to (mean, unclamped scale).
pub fn raw_to_mu_b(raw_mu: f32, raw_b: f32) -> (f64, f64) {
    (MU_SCALE * raw_mu as f64, (B_LOG_SCALE * raw_b as f64).exp())
}

/// Floor applied to factorized likelihoods before taking the log.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

/// Node handle within one engine instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Forward-only engine backed by shared kernels.
pub struct DirectEngine<'a> {
    store: &'a ParamStore,
    vals: Vec<Tensor>,
    params: HashMap<usize, usize>,
}

impl<'a> DirectEngine<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        DirectEngine { store, vals: Vec::new(), params: HashMap::new() }
    }

    fn push(&mut self, t: Tensor) -> Var {
        self.vals.push(t);
        Var(self.vals.len() - 1)
    }
}

impl Engine for DirectEngine<'_> {
    type T = Var;

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id.0) {
            return Var(i);
        }
        let v = self.push(self.store.tensor(id).clone());
        self.params.insert(id.0, v.0);
        v
    }

    fn input(&mut self, t: Tensor) -> Var {
        self.push(t)
    }

    fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let y = k::conv2d(&self.vals[x.0], &self.vals[w.0], &self.vals[b.0], stride, pad);
        self.push(y)
    }

    fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let y = k::conv_t2d(&self.vals[x.0], &self.vals[w.0], &self.vals[b.0], stride);
        self.push(y)
    }

    fn leaky_relu(&mut self, x: Var) -> Var {
        let y = k::leaky_relu(&self.vals[x.0]);
        self.push(y)
    }

    fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.vals[a.0].clone();
        y.add_assign(&self.vals[b.0]);
        self.push(y)
    }

    fn concat_c(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor> = parts.iter().map(|v| &self.vals[v.0]).collect();
        let y = k::concat_c(&refs);
        self.push(y)
    }

    fn slice_c(&mut self, x: Var, from: usize, to: usize) -> Var {
        let y = k::slice_c(&self.vals[x.0], from, to);
        self.push(y)
    }

    fn scale(&mut self, x: Var, s: f32) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in &mut y.data {
            *v *= s;
        }
        self.push(y)
    }

    fn round_ste(&mut self, x: Var) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in &mut y.data {
            *v = v.round();
        }
        self.push(y)
    }

    fn sum_all(&mut self, x: Var) -> Var {
        let s = self.vals[x.0].sum_f64();
        self.push(Tensor::scalar(s as f32))
    }

    fn value(&self, x: Var) -> &Tensor {
        &self.vals[x.0]
    }
}

enum Node {
    Leaf { store_idx: usize },
    Input,
    Conv2d { x: usize, w: usize, b: usize, stride: usize, pad: usize },
    ConvT2d { x: usize, w: usize, b: usize, stride: usize },
    LeakyRelu { x: usize },
    Add { a: usize, b: usize },
    ConcatC { parts: Vec<usize> },
    SliceC { x: usize, from: usize, to: usize },
    Scale { x: usize, s: f32 },
    RoundSte { x: usize },
    SumAll { x: usize },
    /// Per-element rate gradients are computed during the forward pass and
    /// stored; backward just scales them by the upstream scalar.
    GaussRate { mu: usize, b: usize, gmu: Tensor, gb: Tensor },
    FactorizedRate { z: usize, params: usize, gz: Tensor, gparams: Tensor },
    WeightedSum { terms: Vec<(f32, usize)> },
}

/// Gradients keyed by parameter-store index, in deterministic order.
pub struct Grads {
    by_store: BTreeMap<usize, Tensor>,
}

impl Grads {
    #[cfg(test)]
    pub(crate) fn from_raw(by_store: BTreeMap<usize, Tensor>) -> Self {
        Grads { by_store }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_store.get(&id.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_store.iter().map(|(&i, t)| (ParamId(i), t))
    }

    pub fn len(&self) -> usize {
        self.by_store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_store.is_empty()
    }

    /// Drop gradients whose parameter the predicate rejects (frozen stages).
    pub fn retain(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        self.by_store.retain(|&i, _| keep(ParamId(i)));
    }

    /// L2 norm over every gradient element, accumulated in f64 in key order.
    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for t in self.by_store.values() {
            for &g in &t.data {
                acc += (g as f64) * (g as f64);
            }
        }
        acc.sqrt()
    }
}

/// Recording engine with reverse-mode backward.
pub struct TapedEngine<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    vals: Vec<Tensor>,
    scalars: Vec<Option<f64>>,
    params: HashMap<usize, usize>,
}

impl<'a> TapedEngine<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        TapedEngine {
            store,
            nodes: Vec::new(),
            vals: Vec::new(),
            scalars: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, node: Node, t: Tensor) -> Var {
        self.nodes.push(node);
        self.vals.push(t);
        self.scalars.push(None);
        Var(self.vals.len() - 1)
    }

    fn push_scalar(&mut self, node: Node, v: f64) -> Var {
        let var = self.push(node, Tensor::scalar(v as f32));
        *self.scalars.last_mut().unwrap() = Some(v);
        var
    }

    /// Full-precision value of a scalar node (rates, sums, losses).
    pub fn scalar_f64(&self, x: Var) -> f64 {
        self.scalars[x.0].unwrap_or(self.vals[x.0].data[0] as f64)
    }

    /// Total code length in bits of integer symbols under the Gaussian
    /// entropy model, differentiable in both raw heads. `symbols` holds the
    /// unscaled integers; `raw_mu`/`raw_b` are the head outputs, elementwise
    /// aligned with it. A mask of the same shape restricts the sum to the
    /// elements where it is nonzero (the checkerboard passes need this).
    pub fn gauss_rate(
        &mut self,
        symbols: &Tensor,
        mask: Option<&Tensor>,
        raw_mu: Var,
        raw_b: Var,
    ) -> Var {
        let mu_t = &self.vals[raw_mu.0];
        let b_t = &self.vals[raw_b.0];
        assert_eq!(symbols.shape, mu_t.shape, "gauss_rate symbol/mu shape");
        assert_eq!(symbols.shape, b_t.shape, "gauss_rate symbol/b shape");
        if let Some(m) = mask {
            assert_eq!(symbols.shape, m.shape, "gauss_rate symbol/mask shape");
        }
        let mut gmu = Tensor::zeros(mu_t.shape);
        let mut gb = Tensor::zeros(b_t.shape);
        let mut total = 0.0f64;
        for i in 0..symbols.numel() {
            if let Some(m) = mask {
                if m.data[i] == 0.0 {
                    continue;
                }
            }
            let s = symbols.data[i] as f64;
            let (mu, b_unclamped) = raw_to_mu_b(mu_t.data[i], b_t.data[i]);
            let b = b_unclamped.clamp(B_MIN, B_MAX);
            let (bits, dmu, db) = gauss_interval_bits(s, mu, b);
            total += bits;
            gmu.data[i] = (dmu * MU_SCALE) as f32;
            // Clamp gate: at a boundary the true derivative is zero, but the
            // gradient passes straight through whenever a descent step would
            // pull the scale back inside the legal range.
            let pass = if b_unclamped > B_MAX {
                db > 0.0
            } else if b_unclamped < B_MIN {
                db < 0.0
            } else {
                true
            };
            gb.data[i] = if pass { (db * B_LOG_SCALE * b) as f32 } else { 0.0 };
        }
        self.push_scalar(Node::GaussRate { mu: raw_mu.0, b: raw_b.0, gmu, gb }, total)
    }

    /// Total code length in bits of the hyper-latent under the factorized
    /// prior, differentiable in the latent and in the per-channel CDF
    /// parameters (`[1, c, 28, 1]` tensor).
    pub fn factorized_rate(&mut self, z: Var, params: ParamId) -> Var {
        let pvar = self.param(params);
        let zt = &self.vals[z.0];
        let pt = &self.vals[pvar.0];
        let channels = zt.c();
        assert_eq!(pt.shape, [1, channels, PARAMS_PER_CHANNEL, 1], "factorized param shape");
        let chans: Vec<FactorizedChannel> = (0..channels)
            .map(|c| {
                let base = c * PARAMS_PER_CHANNEL;
                let p: Vec<f64> = pt.data[base..base + PARAMS_PER_CHANNEL]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                FactorizedChannel::from_flat(&p)
            })
            .collect();
        let mut gz = Tensor::zeros(zt.shape);
        let mut gparams = Tensor::zeros(pt.shape);
        // Parameter gradients accumulate over every spatial position; sum in
        // f64 and round once so large grids do not erode precision.
        let mut gp64 = vec![0.0f64; gparams.numel()];
        let mut total = 0.0f64;
        let (n, h, w) = (zt.n(), zt.h(), zt.w());
        for ni in 0..n {
            for c in 0..channels {
                let ch = &chans[c];
                let pbase = c * PARAMS_PER_CHANNEL;
                for yy in 0..h {
                    for xx in 0..w {
                        let i = zt.idx(ni, c, yy, xx);
                        let x = zt.data[i] as f64;
                        let (cu, du, gu) = ch.cdf_with_grads(x + 0.5);
                        let (cl, dl, gl) = ch.cdf_with_grads(x - 0.5);
                        let p = cu - cl;
                        let pf = p.max(LIKELIHOOD_FLOOR);
                        total += -pf.log2();
                        // d(bits)/dp at the floored likelihood. When the raw
                        // likelihood sits below the floor this is exactly the
                        // one-sided gate: the only gradient that flows is the
                        // one that raises p (see backward's sign assert).
                        let coef = -1.0 / (pf * std::f64::consts::LN_2);
                        gz.data[i] = (coef * (du - dl)) as f32;
                        for kk in 0..PARAMS_PER_CHANNEL {
                            gp64[pbase + kk] += coef * (gu[kk] - gl[kk]);
                        }
                    }
                }
            }
        }
        for (out, &acc) in gparams.data.iter_mut().zip(gp64.iter()) {
            *out = acc as f32;
        }
        self.push_scalar(
            Node::FactorizedRate { z: z.0, params: pvar.0, gz, gparams },
            total,
        )
    }

    /// Weighted sum of scalar nodes; the workhorse for assembling losses.
    pub fn weighted_sum(&mut self, terms: &[(f32, Var)]) -> Var {
        let mut total = 0.0f64;
        for &(w, v) in terms {
            assert_eq!(self.vals[v.0].numel(), 1, "weighted_sum needs scalars");
            total += w as f64 * self.scalar_f64(v);
        }
        let node = Node::WeightedSum { terms: terms.iter().map(|&(w, v)| (w, v.0)).collect() };
        self.push_scalar(node, total)
    }

    /// Reverse pass from a scalar loss. Consumes the tape and returns
    /// gradients for every parameter that the loss actually reaches.
    pub fn backward(self, loss: Var) -> Grads {
        assert_eq!(self.vals[loss.0].numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            match &self.nodes[i] {
                Node::Leaf { .. } | Node::Input => {
                    grads[i] = Some(gy); // keep for collection below
                }
                Node::Conv2d { x, w, b, stride, pad } => {
                    let (gx, gw, gb) =
                        k::conv2d_grad(&self.vals[*x], &self.vals[*w], &gy, *stride, *pad);
                    acc(&mut grads[*x], gx);
                    acc(&mut grads[*w], gw);
                    acc(&mut grads[*b], gb);
                }
                Node::ConvT2d { x, w, b, stride } => {
                    let (gx, gw, gb) =
                        k::conv_t2d_grad(&self.vals[*x], &self.vals[*w], &gy, *stride);
                    acc(&mut grads[*x], gx);
                    acc(&mut grads[*w], gw);
                    acc(&mut grads[*b], gb);
                }
                Node::LeakyRelu { x } => {
                    let gx = k::leaky_relu_grad(&self.vals[*x], &gy);
                    acc(&mut grads[*x], gx);
                }
                Node::Add { a, b } => {
                    acc(&mut grads[*a], gy.clone());
                    acc(&mut grads[*b], gy);
                }
                Node::ConcatC { parts } => {
                    let mut from = 0;
                    for &p in parts {
                        let c = self.vals[p].c();
                        acc(&mut grads[p], k::slice_c(&gy, from, from + c));
                        from += c;
                    }
                }
                Node::SliceC { x, from, to } => {
                    let src = &self.vals[*x];
                    let mut gx = Tensor::zeros(src.shape);
                    let (hw, n) = (src.h() * src.w(), src.n());
                    for ni in 0..n {
                        for c in *from..*to {
                            let d = gx.idx(ni, c, 0, 0);
                            let s = gy.idx(ni, c - from, 0, 0);
                            gx.data[d..d + hw].copy_from_slice(&gy.data[s..s + hw]);
                        }
                    }
                    acc(&mut grads[*x], gx);
                }
                Node::Scale { x, s } => {
                    let mut gx = gy;
                    for v in &mut gx.data {
                        *v *= s;
                    }
                    acc(&mut grads[*x], gx);
                }
                Node::RoundSte { x } => {
                    acc(&mut grads[*x], gy);
                }
                Node::SumAll { x } => {
                    let g = gy.data[0];
                    let src = &self.vals[*x];
                    acc(&mut grads[*x], Tensor::from_vec(src.shape, vec![g; src.numel()]));
                }
                Node::GaussRate { mu, b, gmu, gb } => {
                    let g = gy.data[0];
                    debug_assert!(g >= 0.0, "rate terms must enter the loss positively");
                    acc(&mut grads[*mu], scaled(gmu, g));
                    acc(&mut grads[*b], scaled(gb, g));
                }
                Node::FactorizedRate { z, params, gz, gparams } => {
                    let g = gy.data[0];
                    debug_assert!(g >= 0.0, "rate terms must enter the loss positively");
                    acc(&mut grads[*z], scaled(gz, g));
                    acc(&mut grads[*params], scaled(gparams, g));
                }
                Node::WeightedSum { terms } => {
                    let g = gy.data[0];
                    for &(w, v) in terms {
                        acc(&mut grads[v], Tensor::scalar(g * w));
                    }
                }
            }
        }
        let mut by_store = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Leaf { store_idx } = node {
                if let Some(g) = grads[i].take() {
                    by_store.insert(*store_idx, g);
                }
            }
        }
        Grads { by_store }
    }
}

fn acc(slot: &mut Option<Tensor>, add: Tensor) {
    match slot {
        Some(t) => t.add_assign(&add),
        None => *slot = Some(add),
    }
}

fn scaled(t: &Tensor, g: f32) -> Tensor {
    let data = t.data.iter().map(|&v| v * g).collect();
    Tensor { shape: t.shape, data }
}

impl Engine for TapedEngine<'_> {
    type T = Var;

    fn param(&mut self, id: ParamId) -> Var {
        if let Some(&i) = self.params.get(&id.0) {
            return Var(i);
        }
        let t = self.store.tensor(id).clone();
        let v = self.push(Node::Leaf { store_idx: id.0 }, t);
        self.params.insert(id.0, v.0);
        v
    }

    fn input(&mut self, t: Tensor) -> Var {
        self.push(Node::Input, t)
    }

    fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let y = k::conv2d(&self.vals[x.0], &self.vals[w.0], &self.vals[b.0], stride, pad);
        self.push(Node::Conv2d { x: x.0, w: w.0, b: b.0, stride, pad }, y)
    }

    fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let y = k::conv_t2d(&self.vals[x.0], &self.vals[w.0], &self.vals[b.0], stride);
        self.push(Node::ConvT2d { x: x.0, w: w.0, b: b.0, stride }, y)
    }

    fn leaky_relu(&mut self, x: Var) -> Var {
        let y = k::leaky_relu(&self.vals[x.0]);
        self.push(Node::LeakyRelu { x: x.0 }, y)
    }

    fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.vals[a.0].clone();
        y.add_assign(&self.vals[b.0]);
        self.push(Node::Add { a: a.0, b: b.0 }, y)
    }

    fn concat_c(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor> = parts.iter().map(|v| &self.vals[v.0]).collect();
        let y = k::concat_c(&refs);
        self.push(Node::ConcatC { parts: parts.iter().map(|v| v.0).collect() }, y)
    }

    fn slice_c(&mut self, x: Var, from: usize, to: usize) -> Var {
        let y = k::slice_c(&self.vals[x.0], from, to);
        self.push(Node::SliceC { x: x.0, from, to }, y)
    }

    fn scale(&mut self, x: Var, s: f32) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in &mut y.data {
            *v *= s;
        }
        self.push(Node::Scale { x: x.0, s }, y)
    }

    fn round_ste(&mut self, x: Var) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in &mut y.data {
            *v = v.round();
        }
        self.push(Node::RoundSte { x: x.0 }, y)
    }

    fn sum_all(&mut self, x: Var) -> Var {
        let s = self.vals[x.0].sum_f64();
        self.push_scalar(Node::SumAll { x: x.0 }, s)
    }

    fn value(&self, x: Var) -> &Tensor {
        &self.vals[x.0]
    }
}
