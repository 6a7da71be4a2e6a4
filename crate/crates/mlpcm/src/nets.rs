//! The model zoo: hyper encoder/decoder pairs for luma and chroma, the
//! param-nets that turn conditioning features into Gaussian entropy
//! parameters, the pipeline-parallel luma context model with its shifted
//! coding schedule, the compressed-checkerboard chroma context model, and
//! the ablation variants of both.
//!
//! Every forward helper is generic over [`Engine`], so the exact same wiring
//! runs under the inference engine during sequential decode and under the
//! taped engine during teacher-forced training. Entropy parameters produced
//! by the two paths are bit-identical, which is what makes a model trained
//! with teacher forcing decodable at all.
//!
//! Context inputs are always assembled in a fixed order: conditioning
//! features first (h or prior), then symbol slices in schedule order.

use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    bias_init, conv_weight_init, convt_weight_init, load_checkpoint, save_checkpoint,
    CheckpointError, Engine, ParamId, ParamStore, Tensor, B_LOG_SCALE, INPUT_SCALE,
};
use crate::entropy::factorized::PARAMS_PER_CHANNEL;
use crate::layout::{column_offset, ChannelTensor, COLUMN_WIDTHS};
use crate::math::{crc32, fnv1a64};

/// Channels of the stacked luma row tensor (4 rows x 64 frequencies).
pub const LUMA_CHANNELS: usize = 256;
/// Channels of the stacked Cb+Cr tensor.
pub const CHROMA_CHANNELS: usize = 128;
/// Channels of the chroma anchor (and of the non-anchor): two 128-channel
/// location groups stacked.
pub const ANCHOR_CHANNELS: usize = 256;
/// Spatial padding multiple the hyper pairs need: two stride-2 encoder
/// convolutions, mirrored exactly by 2x2 stride-2 transposed convolutions.
pub const HYPER_PAD: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("manifest is not valid model metadata: {0}")]
    BadManifest(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("checkpoint does not match the declared architecture: {0}")]
    ArchitectureMismatch(String),
}

/// The model assemblies: the full codec and the five ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Shifted pipeline-parallel luma context, compressed-checkerboard chroma.
    Full,
    /// Hyper-only luma (no spatial/frequency context), full chroma.
    NoContext,
    /// All four rows of a column coded jointly, nine sequential steps.
    FullParallelPpcm,
    /// Aligned column order for rows 2-4 instead of the shifted schedule.
    NoShift,
    /// Full-resolution two-pass checkerboard chroma instead of CCCM.
    CheckerboardCbcr,
    /// Hyper-only chroma: non-anchor loses its anchor conditioning.
    NoCccm,
}

pub const ALL_VARIANTS: [Variant; 6] = [
    Variant::Full,
    Variant::NoContext,
    Variant::FullParallelPpcm,
    Variant::NoShift,
    Variant::CheckerboardCbcr,
    Variant::NoCccm,
];

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContext => "no_context",
            Variant::FullParallelPpcm => "full_parallel_ppcm",
            Variant::NoShift => "no_shift",
            Variant::CheckerboardCbcr => "checkerboard_cbcr",
            Variant::NoCccm => "no_cccm",
        }
    }

    /// Stable one-byte code used in container headers.
    pub fn code(self) -> u8 {
        ALL_VARIANTS.iter().position(|&v| v == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Variant> {
        ALL_VARIANTS.get(code as usize).copied()
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Variant, ModelError> {
        ALL_VARIANTS
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Layer widths of a param-net modeling an `n`-channel slice at feature
/// width `m`: the hidden widths interpolate from the input toward the
/// 2n-channel output in thirds.
pub fn param_net_dims(m: usize, n: usize) -> (usize, usize, usize) {
    let d = (m as i64 - 2 * n as i64).div_euclid(3);
    let a = m as i64 - d;
    let b = m as i64 - 2 * d;
    let c = 2 * n as i64;
    assert!(a > 0 && b > 0 && c >= 2, "degenerate param-net dims m={m} n={n}");
    (a as usize, b as usize, c as usize)
}

/// Coding schedule for luma rows 2-4: nine steps of one column per lane.
/// The first three steps are aligned; from the fourth step on, the shifted
/// schedule staggers the lanes by one column each, wrapping back to column
/// four, so a lane sees the same frequency at a different spatial phase.
pub fn lane_schedule(shifted: bool) -> [[usize; 3]; 9] {
    let mut s = [[0usize; 3]; 9];
    for (k, step) in s.iter_mut().enumerate() {
        for (r, slot) in step.iter_mut().enumerate() {
            if !shifted || k < 3 {
                *slot = k;
            } else {
                let c = k + r;
                *slot = if c > 8 { c - 9 + 3 } else { c };
            }
        }
    }
    s
}

/// Initial scale estimate for a coefficient channel, by zigzag position
/// (0 = DC). Starting the scale heads near the data scale saves the first
/// few hundred optimizer steps from burning on an order-of-magnitude ramp.
fn freq_b_target(pos: usize) -> f32 {
    match pos {
        0 => 64.0,
        1..=2 => 16.0,
        3..=5 => 8.0,
        6..=9 => 4.0,
        10..=20 => 2.0,
        _ => 0.7,
    }
}

/// Per-channel scale targets for a luma column slice.
fn luma_slice_targets(col: usize) -> Vec<f32> {
    (0..COLUMN_WIDTHS[col])
        .map(|cc| freq_b_target(63 - (column_offset(col) + cc)))
        .collect()
}

/// Per-channel scale targets for stacked chroma groups (each 64-channel
/// block is one plane's frequency channels).
fn chroma_targets(nch: usize) -> Vec<f32> {
    (0..nch).map(|c| freq_b_target(63 - (c % 64))).collect()
}

enum SpecKind {
    ConvW { co: usize, ci: usize, k: usize },
    ConvTW { ci: usize, co: usize, k: usize },
    BiasZero { c: usize },
    /// Param-net output bias: zeros for the mu half, log-scale targets for
    /// the scale half.
    BiasB { targets: Vec<f32> },
    Prior { c: usize },
}

struct ParamSpec {
    name: String,
    kind: SpecKind,
}

impl ParamSpec {
    fn shape(&self) -> [usize; 4] {
        match &self.kind {
            SpecKind::ConvW { co, ci, k } => [*co, *ci, *k, *k],
            SpecKind::ConvTW { ci, co, k } => [*ci, *co, *k, *k],
            SpecKind::BiasZero { c } => [1, *c, 1, 1],
            SpecKind::BiasB { targets } => [1, 2 * targets.len(), 1, 1],
            SpecKind::Prior { c } => [1, *c, PARAMS_PER_CHANNEL, 1],
        }
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Tensor {
        match &self.kind {
            SpecKind::ConvW { co, ci, k } => conv_weight_init(rng, *co, *ci, *k, *k),
            SpecKind::ConvTW { ci, co, k } => convt_weight_init(rng, *ci, *co, *k, *k),
            SpecKind::BiasZero { c } => bias_init(*c),
            SpecKind::BiasB { targets } => {
                let n = targets.len();
                let mut data = vec![0.0f32; 2 * n];
                for (i, &t) in targets.iter().enumerate() {
                    data[n + i] = t.ln() / B_LOG_SCALE as f32;
                }
                Tensor::from_vec([1, 2 * n, 1, 1], data)
            }
            SpecKind::Prior { c } => Tensor::zeros([1, *c, PARAMS_PER_CHANNEL, 1]),
        }
    }
}

fn push_conv(v: &mut Vec<ParamSpec>, name: &str, ci: usize, co: usize, k: usize) {
    v.push(ParamSpec { name: format!("{name}.w"), kind: SpecKind::ConvW { co, ci, k } });
    v.push(ParamSpec { name: format!("{name}.b"), kind: SpecKind::BiasZero { c: co } });
}

fn push_convt(v: &mut Vec<ParamSpec>, name: &str, ci: usize, co: usize, k: usize) {
    v.push(ParamSpec { name: format!("{name}.w"), kind: SpecKind::ConvTW { ci, co, k } });
    v.push(ParamSpec { name: format!("{name}.b"), kind: SpecKind::BiasZero { c: co } });
}

/// 1x1 -> 3x3 -> 1x1 stack with free widths (the prior net uses this).
fn push_mlp(v: &mut Vec<ParamSpec>, prefix: &str, cin: usize, a: usize, b: usize, cout: usize) {
    push_conv(v, &format!("{prefix}.c1"), cin, a, 1);
    push_conv(v, &format!("{prefix}.c2"), a, b, 3);
    push_conv(v, &format!("{prefix}.c3"), b, cout, 1);
}

/// Param-net with the width formula and scale-target output bias.
fn push_param_net(
    v: &mut Vec<ParamSpec>,
    prefix: &str,
    m: usize,
    n: usize,
    cin: usize,
    targets: Vec<f32>,
) {
    assert_eq!(targets.len(), n);
    let (a, b, c) = param_net_dims(m, n);
    push_conv(v, &format!("{prefix}.c1"), cin, a, 1);
    push_conv(v, &format!("{prefix}.c2"), a, b, 3);
    v.push(ParamSpec {
        name: format!("{prefix}.c3.w"),
        kind: SpecKind::ConvW { co: c, ci: b, k: 1 },
    });
    v.push(ParamSpec { name: format!("{prefix}.c3.b"), kind: SpecKind::BiasB { targets } });
}

/// The full parameter list (names, shapes, initializers) of a variant at
/// feature width `m`. Order is the insertion order of the store, which both
/// the seeded init and checkpoint validation rely on.
fn architecture(variant: Variant, m: usize) -> Vec<ParamSpec> {
    let mut v = Vec::new();

    // Luma hyper pair: three encoder convolutions (stride 1, 2, 2), decoder
    // mirrors with two 2x2 transposed convolutions and a final 3x3.
    push_conv(&mut v, "y.enc.c0", LUMA_CHANNELS, m, 3);
    push_conv(&mut v, "y.enc.c1", m, m, 3);
    push_conv(&mut v, "y.enc.c2", m, m, 3);
    push_convt(&mut v, "y.dec.t0", m, m, 2);
    push_convt(&mut v, "y.dec.t1", m, m, 2);
    push_conv(&mut v, "y.dec.c2", m, m, 3);
    v.push(ParamSpec { name: "y.prior".into(), kind: SpecKind::Prior { c: m } });

    match variant {
        Variant::NoContext => {
            push_conv(&mut v, "y.head.c1", m, LUMA_CHANNELS, 1);
            let targets: Vec<f32> = (0..LUMA_CHANNELS).map(|c| freq_b_target(63 - c % 64)).collect();
            v.push(ParamSpec {
                name: "y.head.c2.w".into(),
                kind: SpecKind::ConvW { co: 2 * LUMA_CHANNELS, ci: LUMA_CHANNELS, k: 1 },
            });
            v.push(ParamSpec { name: "y.head.c2.b".into(), kind: SpecKind::BiasB { targets } });
        }
        Variant::FullParallelPpcm => {
            for j in 0..9 {
                let cin = m + if j == 0 { 0 } else { 4 * COLUMN_WIDTHS[j - 1] };
                let targets = luma_slice_targets(j).repeat(4);
                push_param_net(&mut v, &format!("y.par.s{j}"), m, 4 * COLUMN_WIDTHS[j], cin, targets);
            }
        }
        _ => {
            for j in 0..9 {
                let cin = m + column_offset(j);
                push_param_net(
                    &mut v,
                    &format!("y.row1.s{j}"),
                    m,
                    COLUMN_WIDTHS[j],
                    cin,
                    luma_slice_targets(j),
                );
            }
            push_mlp(&mut v, "y.prior_net", 64 + m, m, m, m);
            let sched = lane_schedule(variant != Variant::NoShift);
            for k in 0..9 {
                let cin = m + if k == 0 {
                    0
                } else {
                    sched[k - 1].iter().map(|&c| COLUMN_WIDTHS[c]).sum::<usize>()
                };
                for lane in 0..3 {
                    let col = sched[k][lane];
                    push_param_net(
                        &mut v,
                        &format!("y.lane.s{k}.l{lane}"),
                        m,
                        COLUMN_WIDTHS[col],
                        cin,
                        luma_slice_targets(col),
                    );
                }
            }
        }
    }

    // Chroma hyper pair; the decoder upsamples once (to the group grid)
    // except for the checkerboard variant, which needs full resolution.
    push_conv(&mut v, "c.enc.c0", CHROMA_CHANNELS, m, 3);
    push_conv(&mut v, "c.enc.c1", m, m, 3);
    push_conv(&mut v, "c.enc.c2", m, m, 3);
    if variant == Variant::CheckerboardCbcr {
        push_convt(&mut v, "c.dec.t0", m, m, 2);
        push_convt(&mut v, "c.dec.t1", m, m, 2);
        push_conv(&mut v, "c.dec.c2", m, m, 3);
    } else {
        push_convt(&mut v, "c.dec.t0", m, m, 2);
        push_conv(&mut v, "c.dec.c1", m, m, 3);
    }
    v.push(ParamSpec { name: "c.prior".into(), kind: SpecKind::Prior { c: m } });

    match variant {
        Variant::CheckerboardCbcr => {
            push_conv(&mut v, "c.ctx.c0", CHROMA_CHANNELS, m, 3);
            push_param_net(&mut v, "c.pn_a", m, CHROMA_CHANNELS, m, chroma_targets(CHROMA_CHANNELS));
            push_param_net(
                &mut v,
                "c.pn_na",
                m,
                CHROMA_CHANNELS,
                2 * m,
                chroma_targets(CHROMA_CHANNELS),
            );
        }
        Variant::NoCccm => {
            push_param_net(&mut v, "c.anchor", m, ANCHOR_CHANNELS, m, chroma_targets(ANCHOR_CHANNELS));
            push_param_net(
                &mut v,
                "c.non_anchor",
                m,
                ANCHOR_CHANNELS,
                m,
                chroma_targets(ANCHOR_CHANNELS),
            );
        }
        _ => {
            push_param_net(&mut v, "c.anchor", m, ANCHOR_CHANNELS, m, chroma_targets(ANCHOR_CHANNELS));
            push_param_net(
                &mut v,
                "c.non_anchor",
                m,
                ANCHOR_CHANNELS,
                m + ANCHOR_CHANNELS,
                chroma_targets(ANCHOR_CHANNELS),
            );
        }
    }
    v
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    version: u32,
    variant: String,
    m: usize,
    columns: Vec<usize>,
}

/// A complete model: both nets' parameters in one insertion-ordered store.
#[derive(Debug)]
pub struct Model {
    pub variant: Variant,
    pub m: usize,
    pub seed: u64,
    pub store: ParamStore,
}

/// Entropy parameters of one luma slice, in coding order.
pub struct SliceParams<T> {
    pub row: usize,
    pub col: usize,
    pub mu: T,
    pub b: T,
}

impl Model {
    pub fn new(variant: Variant, m: usize, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for spec in architecture(variant, m) {
            store.add(&spec.name, spec.init(&mut rng));
        }
        Model { variant, m, seed, store }
    }

    /// Resolved id of a named parameter; the names are wired by the
    /// architecture builder, so a miss is a bug.
    fn p(&self, name: &str) -> ParamId {
        self.store.id(name).unwrap_or_else(|| panic!("model parameter `{name}` missing"))
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string(&ModelManifest {
            format: "mlpcm-model".into(),
            version: 1,
            variant: self.variant.as_str().into(),
            m: self.m,
            columns: COLUMN_WIDTHS.to_vec(),
        })
        .expect("manifest serialization")
    }

    /// CRC over all weight bytes in store order.
    pub fn weights_crc(&self) -> u32 {
        let mut bytes = Vec::new();
        for (_, _, t) in self.store.iter() {
            for &v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crc32(&bytes)
    }

    /// Digest binding architecture and weights; bitstreams record it so a
    /// decoder can refuse a mismatched model.
    pub fn digest(&self) -> u64 {
        let mut bytes = self.manifest_json().into_bytes();
        bytes.extend_from_slice(&self.weights_crc().to_le_bytes());
        fnv1a64(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        save_checkpoint(path, &self.store, &self.manifest_json(), self.seed)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let (store, manifest, seed) = load_checkpoint(path)?;
        let parsed: ModelManifest =
            serde_json::from_str(&manifest).map_err(|e| ModelError::BadManifest(e.to_string()))?;
        if parsed.format != "mlpcm-model" || parsed.version != 1 {
            return Err(ModelError::BadManifest(format!(
                "unsupported format/version {}/{}",
                parsed.format, parsed.version
            )));
        }
        let variant = Variant::from_str(&parsed.variant)?;
        let specs = architecture(variant, parsed.m);
        if specs.len() != store.len() {
            return Err(ModelError::ArchitectureMismatch(format!(
                "expected {} parameters, found {}",
                specs.len(),
                store.len()
            )));
        }
        for (spec, (_, name, t)) in specs.iter().zip(store.iter()) {
            if spec.name != name || spec.shape() != t.shape {
                return Err(ModelError::ArchitectureMismatch(format!(
                    "parameter `{}` has shape {:?}, expected `{}` {:?}",
                    name,
                    t.shape,
                    spec.name,
                    spec.shape()
                )));
            }
        }
        Ok(Model { variant, m: parsed.m, seed, store })
    }

    /// The lane schedule this model codes rows 2-4 with.
    pub fn schedule(&self) -> [[usize; 3]; 9] {
        lane_schedule(self.variant != Variant::NoShift)
    }

    /// Sequential step boundaries on the luma side.
    pub fn y_coding_steps(&self) -> usize {
        match self.variant {
            Variant::NoContext => 1,
            Variant::FullParallelPpcm => 9,
            _ => 18,
        }
    }

    /// Sequential step boundaries on the chroma side.
    pub fn c_coding_steps(&self) -> usize {
        match self.variant {
            Variant::NoCccm => 1,
            _ => 2,
        }
    }

    fn conv<E: Engine>(&self, e: &mut E, name: &str, x: E::T, stride: usize, pad: usize) -> E::T {
        let w = e.param(self.p(&format!("{name}.w")));
        let b = e.param(self.p(&format!("{name}.b")));
        e.conv2d(x, w, b, stride, pad)
    }

    fn convt<E: Engine>(&self, e: &mut E, name: &str, x: E::T, stride: usize) -> E::T {
        let w = e.param(self.p(&format!("{name}.w")));
        let b = e.param(self.p(&format!("{name}.b")));
        e.conv_transpose2d(x, w, b, stride)
    }

    fn mlp3<E: Engine>(&self, e: &mut E, prefix: &str, x: E::T) -> E::T {
        let h = self.conv(e, &format!("{prefix}.c1"), x, 1, 0);
        let h = e.leaky_relu(h);
        let h = self.conv(e, &format!("{prefix}.c2"), h, 1, 1);
        let h = e.leaky_relu(h);
        self.conv(e, &format!("{prefix}.c3"), h, 1, 0)
    }

    fn split_heads<E: Engine>(&self, e: &mut E, out: E::T, n: usize) -> (E::T, E::T) {
        (e.slice_c(out, 0, n), e.slice_c(out, n, 2 * n))
    }

    /// Factorized prior parameter ids for the two hyper-latents.
    pub fn y_prior_id(&self) -> ParamId {
        self.p("y.prior")
    }

    pub fn c_prior_id(&self) -> ParamId {
        self.p("c.prior")
    }

    /// Luma hyper encoder: scaled stacked rows (spatially padded to a
    /// multiple of [`HYPER_PAD`]) to the raw continuous latent.
    pub fn y_encode<E: Engine>(&self, e: &mut E, x: E::T) -> E::T {
        let a = self.conv(e, "y.enc.c0", x, 1, 1);
        let a = e.leaky_relu(a);
        let a = self.conv(e, "y.enc.c1", a, 2, 1);
        let a = e.leaky_relu(a);
        self.conv(e, "y.enc.c2", a, 2, 1)
    }

    /// Luma hyper decoder: quantized latent to conditioning features at the
    /// padded row grid (crop to the true grid afterwards).
    pub fn y_decode_h<E: Engine>(&self, e: &mut E, z: E::T) -> E::T {
        let a = self.convt(e, "y.dec.t0", z, 2);
        let a = e.leaky_relu(a);
        let a = self.convt(e, "y.dec.t1", a, 2);
        let a = e.leaky_relu(a);
        self.conv(e, "y.dec.c2", a, 1, 1)
    }

    /// Chroma hyper encoder over the scaled stacked Cb+Cr tensor.
    pub fn c_encode<E: Engine>(&self, e: &mut E, x: E::T) -> E::T {
        let a = self.conv(e, "c.enc.c0", x, 1, 1);
        let a = e.leaky_relu(a);
        let a = self.conv(e, "c.enc.c1", a, 2, 1);
        let a = e.leaky_relu(a);
        self.conv(e, "c.enc.c2", a, 2, 1)
    }

    /// Chroma hyper decoder. The pruned stack upsamples once, landing on the
    /// half-resolution group grid; the checkerboard variant keeps the full
    /// mirror and lands on the full chroma grid.
    pub fn c_decode_h<E: Engine>(&self, e: &mut E, z: E::T) -> E::T {
        if self.variant == Variant::CheckerboardCbcr {
            let a = self.convt(e, "c.dec.t0", z, 2);
            let a = e.leaky_relu(a);
            let a = self.convt(e, "c.dec.t1", a, 2);
            let a = e.leaky_relu(a);
            self.conv(e, "c.dec.c2", a, 1, 1)
        } else {
            let a = self.convt(e, "c.dec.t0", z, 2);
            let a = e.leaky_relu(a);
            self.conv(e, "c.dec.c1", a, 1, 1)
        }
    }

    /// First-row step `j`: context is h plus the previously coded row-1
    /// slices in column order.
    pub fn row1_params<E: Engine>(
        &self,
        e: &mut E,
        j: usize,
        h: E::T,
        prev: &[E::T],
    ) -> (E::T, E::T) {
        assert_eq!(prev.len(), j, "row-1 step {j} context");
        let input = if j == 0 {
            h
        } else {
            let mut parts = vec![h];
            parts.extend_from_slice(prev);
            e.concat_c(&parts)
        };
        let out = self.mlp3(e, &format!("y.row1.s{j}"), input);
        self.split_heads(e, out, COLUMN_WIDTHS[j])
    }

    /// Conditioning tensor for rows 2-4 from the completed first row.
    pub fn prior_tensor<E: Engine>(&self, e: &mut E, row1: E::T, h: E::T) -> E::T {
        let input = e.concat_c(&[row1, h]);
        self.mlp3(e, "y.prior_net", input)
    }

    /// Shared input of the three lane param-nets at one step: the prior,
    /// then the previous step's triple in lane order.
    pub fn lane_step_input<E: Engine>(
        &self,
        e: &mut E,
        prior: E::T,
        prev_triple: Option<[E::T; 3]>,
    ) -> E::T {
        match prev_triple {
            None => prior,
            Some([a, b, c]) => e.concat_c(&[prior, a, b, c]),
        }
    }

    /// Entropy parameters of lane `lane` at step `k`.
    pub fn lane_params<E: Engine>(
        &self,
        e: &mut E,
        k: usize,
        lane: usize,
        input: E::T,
    ) -> (E::T, E::T) {
        let col = self.schedule()[k][lane];
        let out = self.mlp3(e, &format!("y.lane.s{k}.l{lane}"), input);
        self.split_heads(e, out, COLUMN_WIDTHS[col])
    }

    /// Joint parameters for all four rows of column `j` (full-parallel
    /// variant); context is h plus the previous column across all rows.
    pub fn par_params<E: Engine>(
        &self,
        e: &mut E,
        j: usize,
        h: E::T,
        prev_col: Option<E::T>,
    ) -> (E::T, E::T) {
        let input = match prev_col {
            None => h,
            Some(p) => e.concat_c(&[h, p]),
        };
        let out = self.mlp3(e, &format!("y.par.s{j}"), input);
        self.split_heads(e, out, 4 * COLUMN_WIDTHS[j])
    }

    /// Hyper-only parameters for all 256 luma channels (no-context variant),
    /// in stacked row order.
    pub fn head_params_y<E: Engine>(&self, e: &mut E, h: E::T) -> (E::T, E::T) {
        let a = self.conv(e, "y.head.c1", h, 1, 0);
        let a = e.leaky_relu(a);
        let out = self.conv(e, "y.head.c2", a, 1, 0);
        self.split_heads(e, out, LUMA_CHANNELS)
    }

    /// Chroma anchor parameters, conditioned on h only.
    pub fn anchor_params<E: Engine>(&self, e: &mut E, h: E::T) -> (E::T, E::T) {
        let out = self.mlp3(e, "c.anchor", h);
        self.split_heads(e, out, ANCHOR_CHANNELS)
    }

    /// Chroma non-anchor parameters. The hyper-only chroma variant ignores
    /// the anchor; everything else concatenates it after h.
    pub fn non_anchor_params<E: Engine>(&self, e: &mut E, h: E::T, anchor: E::T) -> (E::T, E::T) {
        let input = if self.variant == Variant::NoCccm { h } else { e.concat_c(&[h, anchor]) };
        let out = self.mlp3(e, "c.non_anchor", input);
        self.split_heads(e, out, ANCHOR_CHANNELS)
    }

    /// Checkerboard pass 1: anchor-cell parameters from full-resolution h.
    pub fn ckbd_anchor_params<E: Engine>(&self, e: &mut E, h_full: E::T) -> (E::T, E::T) {
        let out = self.mlp3(e, "c.pn_a", h_full);
        self.split_heads(e, out, CHROMA_CHANNELS)
    }

    /// Checkerboard pass 2: non-anchor parameters from h and a context
    /// convolution over the anchor-masked symbol tensor.
    pub fn ckbd_non_anchor_params<E: Engine>(
        &self,
        e: &mut E,
        h_full: E::T,
        masked_anchor: E::T,
    ) -> (E::T, E::T) {
        let ctx = self.conv(e, "c.ctx.c0", masked_anchor, 1, 1);
        let input = e.concat_c(&[h_full, ctx]);
        let out = self.mlp3(e, "c.pn_na", input);
        self.split_heads(e, out, CHROMA_CHANNELS)
    }

    /// Teacher-forced luma parameters for every slice, in coding order.
    /// `rows` are the scaled row tensors; the sequential decoder reproduces
    /// these exact values step by step.
    pub fn y_context_params<E: Engine>(
        &self,
        e: &mut E,
        h: E::T,
        rows: &[E::T; 4],
    ) -> Vec<SliceParams<E::T>> {
        let mut out = Vec::with_capacity(36);
        match self.variant {
            Variant::NoContext => {
                let (mu_all, b_all) = self.head_params_y(e, h);
                for row in 0..4 {
                    for col in 0..9 {
                        let lo = row * 64 + column_offset(col);
                        let hi = lo + COLUMN_WIDTHS[col];
                        out.push(SliceParams {
                            row,
                            col,
                            mu: e.slice_c(mu_all, lo, hi),
                            b: e.slice_c(b_all, lo, hi),
                        });
                    }
                }
            }
            Variant::FullParallelPpcm => {
                let mut prev: Option<E::T> = None;
                for col in 0..9 {
                    let w = COLUMN_WIDTHS[col];
                    let (mu, b) = self.par_params(e, col, h, prev);
                    for row in 0..4 {
                        out.push(SliceParams {
                            row,
                            col,
                            mu: e.slice_c(mu, row * w, (row + 1) * w),
                            b: e.slice_c(b, row * w, (row + 1) * w),
                        });
                    }
                    let lo = column_offset(col);
                    let parts: Vec<E::T> =
                        rows.iter().map(|&r| e.slice_c(r, lo, lo + w)).collect();
                    prev = Some(e.concat_c(&parts));
                }
            }
            _ => {
                let mut prev: Vec<E::T> = Vec::new();
                for col in 0..9 {
                    let (mu, b) = self.row1_params(e, col, h, &prev);
                    out.push(SliceParams { row: 0, col, mu, b });
                    let lo = column_offset(col);
                    prev.push(e.slice_c(rows[0], lo, lo + COLUMN_WIDTHS[col]));
                }
                let prior = self.prior_tensor(e, rows[0], h);
                let sched = self.schedule();
                let mut prev_triple: Option<[E::T; 3]> = None;
                for k in 0..9 {
                    let input = self.lane_step_input(e, prior, prev_triple);
                    let mut triple = Vec::with_capacity(3);
                    for lane in 0..3 {
                        let col = sched[k][lane];
                        let (mu, b) = self.lane_params(e, k, lane, input);
                        out.push(SliceParams { row: 1 + lane, col, mu, b });
                        let lo = column_offset(col);
                        triple.push(e.slice_c(rows[1 + lane], lo, lo + COLUMN_WIDTHS[col]));
                    }
                    prev_triple = Some([triple[0], triple[1], triple[2]]);
                }
            }
        }
        out
    }
}

/// Multiply-accumulate counts of one model assembly over given grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacCounts {
    pub y_hyper: u64,
    pub y_context: u64,
    pub c_hyper: u64,
    pub c_context: u64,
}

impl MacCounts {
    pub fn total(&self) -> u64 {
        self.y_hyper + self.y_context + self.c_hyper + self.c_context
    }

    pub fn chroma(&self) -> u64 {
        self.c_hyper + self.c_context
    }
}

pub(crate) fn conv_macs(ci: usize, co: usize, k: usize, px: usize) -> u64 {
    (ci * co * k * k * px) as u64
}

pub(crate) fn pn_macs(m: usize, n: usize, cin: usize, px: usize) -> u64 {
    let (a, b, c) = param_net_dims(m, n);
    conv_macs(cin, a, 1, px) + conv_macs(a, b, 3, px) + conv_macs(b, c, 1, px)
}

/// Analytic MAC count for a variant at feature width `m`. `y_grid` is the
/// padded luma row grid, `c_grid` the padded full chroma grid, both
/// multiples of [`HYPER_PAD`].
pub fn mac_count(variant: Variant, m: usize, y_grid: (usize, usize), c_grid: (usize, usize)) -> MacCounts {
    assert!(y_grid.0 % HYPER_PAD == 0 && y_grid.1 % HYPER_PAD == 0);
    assert!(c_grid.0 % HYPER_PAD == 0 && c_grid.1 % HYPER_PAD == 0);
    let ypx = [
        y_grid.0 * y_grid.1,
        (y_grid.0 / 2) * (y_grid.1 / 2),
        (y_grid.0 / 4) * (y_grid.1 / 4),
    ];
    let cpx = [
        c_grid.0 * c_grid.1,
        (c_grid.0 / 2) * (c_grid.1 / 2),
        (c_grid.0 / 4) * (c_grid.1 / 4),
    ];

    let y_hyper = conv_macs(LUMA_CHANNELS, m, 3, ypx[0])
        + conv_macs(m, m, 3, ypx[1])
        + conv_macs(m, m, 3, ypx[2])
        + conv_macs(m, m, 2, ypx[2])
        + conv_macs(m, m, 2, ypx[1])
        + conv_macs(m, m, 3, ypx[0]);

    let y_context = match variant {
        Variant::NoContext => {
            conv_macs(m, LUMA_CHANNELS, 1, ypx[0])
                + conv_macs(LUMA_CHANNELS, 2 * LUMA_CHANNELS, 1, ypx[0])
        }
        Variant::FullParallelPpcm => (0..9)
            .map(|j| {
                let cin = m + if j == 0 { 0 } else { 4 * COLUMN_WIDTHS[j - 1] };
                pn_macs(m, 4 * COLUMN_WIDTHS[j], cin, ypx[0])
            })
            .sum(),
        _ => {
            let row1: u64 = (0..9)
                .map(|j| pn_macs(m, COLUMN_WIDTHS[j], m + column_offset(j), ypx[0]))
                .sum();
            let prior = conv_macs(64 + m, m, 1, ypx[0])
                + conv_macs(m, m, 3, ypx[0])
                + conv_macs(m, m, 1, ypx[0]);
            let sched = lane_schedule(variant != Variant::NoShift);
            let lanes: u64 = (0..9)
                .map(|k| {
                    let cin = m + if k == 0 {
                        0
                    } else {
                        sched[k - 1].iter().map(|&c| COLUMN_WIDTHS[c]).sum::<usize>()
                    };
                    sched[k]
                        .iter()
                        .map(|&col| pn_macs(m, COLUMN_WIDTHS[col], cin, ypx[0]))
                        .sum::<u64>()
                })
                .sum();
            row1 + prior + lanes
        }
    };

    let c_enc = conv_macs(CHROMA_CHANNELS, m, 3, cpx[0])
        + conv_macs(m, m, 3, cpx[1])
        + conv_macs(m, m, 3, cpx[2]);
    let (c_dec, c_context) = match variant {
        Variant::CheckerboardCbcr => {
            let dec = conv_macs(m, m, 2, cpx[2])
                + conv_macs(m, m, 2, cpx[1])
                + conv_macs(m, m, 3, cpx[0]);
            let ctx = conv_macs(CHROMA_CHANNELS, m, 3, cpx[0])
                + pn_macs(m, CHROMA_CHANNELS, m, cpx[0])
                + pn_macs(m, CHROMA_CHANNELS, 2 * m, cpx[0]);
            (dec, ctx)
        }
        Variant::NoCccm => {
            let dec = conv_macs(m, m, 2, cpx[2]) + conv_macs(m, m, 3, cpx[1]);
            let ctx = pn_macs(m, ANCHOR_CHANNELS, m, cpx[1])
                + pn_macs(m, ANCHOR_CHANNELS, m, cpx[1]);
            (dec, ctx)
        }
        _ => {
            let dec = conv_macs(m, m, 2, cpx[2]) + conv_macs(m, m, 3, cpx[1]);
            let ctx = pn_macs(m, ANCHOR_CHANNELS, m, cpx[1])
                + pn_macs(m, ANCHOR_CHANNELS, m + ANCHOR_CHANNELS, cpx[1]);
            (dec, ctx)
        }
    };

    MacCounts { y_hyper, y_context, c_hyper: c_enc + c_dec, c_context }
}

/// Integer symbols as an unscaled f32 tensor (the rate ops want these).
pub fn symbols_tensor(t: &ChannelTensor) -> Tensor {
    Tensor::from_vec([1, t.c, t.h, t.w], t.data.iter().map(|&v| v as f32).collect())
}

/// Integer symbols as a scaled f32 tensor (network context inputs).
pub fn context_input(t: &ChannelTensor) -> Tensor {
    Tensor::from_vec(
        [1, t.c, t.h, t.w],
        t.data.iter().map(|&v| v as f32 * INPUT_SCALE).collect(),
    )
}

/// Zero-pad bottom/right so both spatial dims are multiples of `mult`.
pub fn pad_spatial(t: &Tensor, mult: usize) -> Tensor {
    let ph = t.h().div_ceil(mult) * mult;
    let pw = t.w().div_ceil(mult) * mult;
    if ph == t.h() && pw == t.w() {
        return t.clone();
    }
    let mut out = Tensor::zeros([t.n(), t.c(), ph, pw]);
    for n in 0..t.n() {
        for c in 0..t.c() {
            for y in 0..t.h() {
                for x in 0..t.w() {
                    let i = out.idx(n, c, y, x);
                    out.data[i] = t.at(n, c, y, x);
                }
            }
        }
    }
    out
}

/// Keep the top-left `h x w` spatial window.
pub fn crop_spatial(t: &Tensor, h: usize, w: usize) -> Tensor {
    if h == t.h() && w == t.w() {
        return t.clone();
    }
    let mut out = Tensor::zeros([t.n(), t.c(), h, w]);
    for n in 0..t.n() {
        for c in 0..t.c() {
            for y in 0..h {
                for x in 0..w {
                    let i = out.idx(n, c, y, x);
                    out.data[i] = t.at(n, c, y, x);
                }
            }
        }
    }
    out
}

/// Cells where `(y + x)` is even form the checkerboard anchor.
pub fn ckbd_is_anchor(y: usize, x: usize) -> bool {
    (y + x) % 2 == 0
}

/// 0/1 mask tensor selecting anchor cells (or their complement).
pub fn ckbd_mask(c: usize, h: usize, w: usize, anchor: bool) -> Tensor {
    let mut t = Tensor::zeros([1, c, h, w]);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                if ckbd_is_anchor(y, x) == anchor {
                    let i = t.idx(0, ci, y, x);
                    t.data[i] = 1.0;
                }
            }
        }
    }
    t
}

/// Symbol tensor with every non-anchor cell zeroed, the decoder-visible
/// context for the checkerboard second pass.
pub fn ckbd_masked_anchor(t: &ChannelTensor) -> ChannelTensor {
    let mut out = t.clone();
    for c in 0..t.c {
        for y in 0..t.h {
            for x in 0..t.w {
                if !ckbd_is_anchor(y, x) {
                    out.set(c, y, x, 0);
                }
            }
        }
    }
    out
}
