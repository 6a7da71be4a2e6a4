//! Training loops: the cross-entropy objective over both hyper-latents and
//! all conditional coefficient terms, staged luma training, and single-stage
//! chroma training.
//!
//! The loss is expected code length in bits per luma pixel. The hyper-latent
//! term uses noise-relaxed likelihoods; every conditional term is teacher
//! forced on the exact integer coefficients, with the latent entering the
//! conditioning path through straight-through rounding. The `hyper_only`
//! stage trains the hyper pair against a context-free conditional head: for
//! architectures whose heads are context nets, scaffolding head parameters
//! live in an auxiliary model that shares (and returns) the hyper weights, so
//! the real context nets provably receive no update.

pub mod dataset;

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::autodiff::{raw_to_mu_b, Adam, DirectEngine, Engine, TapedEngine, Tensor};
use crate::entropy::factorized::FactorizedTables;
use crate::entropy::{GaussianParams, GaussianTables};
use crate::jpeg::{JpegError, QuantizedImage};
use crate::layout::{chroma_stacked, luma_layout, ChannelTensor};
use crate::math::gauss_bin_prob;
use crate::nets::{
    ckbd_is_anchor, ckbd_mask, ckbd_masked_anchor, context_input, crop_spatial, pad_spatial,
    symbols_tensor, Model, Variant, HYPER_PAD,
};

pub use dataset::{Dataset, QpSetting, Sample, MIXED_QPS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no usable training images")]
    EmptyDataset,
    #[error("{0}: subsampling differs from the rest of the dataset")]
    MixedSubsampling(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss or gradient at step {step} of stage {stage}: {value}")]
    NonFiniteLoss { stage: &'static str, step: usize, value: f64 },
    #[error("{path}: {source}")]
    Source { path: String, source: JpegError },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    HyperOnly,
    ContextOnly,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::HyperOnly => "hyper_only",
            Stage::ContextOnly => "context_only",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub stage: Stage,
    pub epochs: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Square crop size in pixels; must be a multiple of 64 so every grid in
    /// the graph (blocks, MCU pairs, hyper stride) divides evenly.
    pub patch: usize,
    pub batch: usize,
    pub lr: f64,
    /// Rate used for the final quarter of all steps.
    pub lr_final: f64,
    pub clip_max_norm: f64,
    pub qp: QpSetting,
    pub stages: Vec<StageSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch: 256,
            batch: 16,
            lr: 1e-4,
            lr_final: 1e-5,
            clip_max_norm: 0.5,
            qp: QpSetting::Single(75),
            stages: vec![
                StageSpec { stage: Stage::HyperOnly, epochs: 2 },
                StageSpec { stage: Stage::ContextOnly, epochs: 2 },
                StageSpec { stage: Stage::Finetune, epochs: 4 },
            ],
            seed: 20,
        }
    }
}

impl<'de> Deserialize<'de> for QpSetting {
    fn deserialize<D>(d: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Quality(u8),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Quality(q) => Ok(QpSetting::Single(q)),
            Raw::Name(s) if s == "mixed" => Ok(QpSetting::Mixed),
            Raw::Name(s) => Err(serde::de::Error::custom(format!("unknown qp setting `{s}`"))),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<TrainConfig, TrainError> {
        let cfg: TrainConfig =
            toml::from_str(s).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<TrainConfig, TrainError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::InvalidConfig(m));
        if self.patch == 0 || self.patch % 64 != 0 {
            return fail(format!("patch {} must be a positive multiple of 64", self.patch));
        }
        if self.batch == 0 {
            return fail("batch must be positive".into());
        }
        if self.stages.is_empty() || self.stages.iter().any(|s| s.epochs == 0) {
            return fail("every stage needs a positive epoch count".into());
        }
        if !(self.lr > 0.0 && self.lr_final > 0.0 && self.lr_final <= self.lr) {
            return fail(format!("need 0 < lr_final ({}) <= lr ({})", self.lr_final, self.lr));
        }
        if self.clip_max_norm <= 0.0 {
            return fail("clip_max_norm must be positive".into());
        }
        if let QpSetting::Single(q) = self.qp {
            if !(1..=100).contains(&q) {
                return fail(format!("quality {q} out of range 1..=100"));
            }
        }
        Ok(())
    }
}

/// One logged optimizer step.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: usize,
    pub stage: &'static str,
    pub loss: f64,
    /// Deterministic rate estimate (rounded latent), bits per luma pixel.
    pub bpp: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub bpp_label: &'static str,
}

impl TrainReport {
    pub fn final_bpp(&self) -> f64 {
        self.rows.last().map(|r| r.bpp).unwrap_or(f64::NAN)
    }

    /// Moving average of the loss over `window` steps.
    pub fn smoothed_loss(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        self.rows
            .windows(w)
            .map(|chunk| chunk.iter().map(|r| r.loss).sum::<f64>() / w as f64)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("step,stage,loss_total,{},grad_norm\n", self.bpp_label);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6}\n",
                r.step, r.stage, r.loss, r.bpp, r.grad_norm
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NetKind {
    Luma,
    Chroma,
}

fn is_hyper(name: &str, kind: NetKind) -> bool {
    match kind {
        NetKind::Luma => {
            name.starts_with("y.enc.") || name.starts_with("y.dec.") || name == "y.prior"
        }
        NetKind::Chroma => {
            name.starts_with("c.enc.") || name.starts_with("c.dec.") || name == "c.prior"
        }
    }
}

/// Copy the hyper-pair weights of `kind` between two models that share those
/// parameter names and shapes.
fn copy_hyper(src: &Model, dst: &mut Model, kind: NetKind) {
    let names: Vec<String> = src
        .store
        .iter()
        .filter(|(_, n, _)| is_hyper(n, kind))
        .map(|(_, n, _)| n.to_string())
        .collect();
    for name in names {
        let t = src.store.tensor(src.store.id(&name).unwrap()).clone();
        let id = dst.store.id(&name).expect("paired model lacks a hyper parameter");
        let d = dst.store.tensor_mut(id);
        assert_eq!(d.shape, t.shape, "hyper shape mismatch for {name}");
        d.data = t.data;
    }
}

enum StageMode {
    InPlace { freeze_hyper: bool },
    /// Train hyper weights inside an auxiliary model of this variant, whose
    /// conditional head is context-free, then copy them back.
    Aux(Variant),
}

fn stage_mode(stage: Stage, kind: NetKind, variant: Variant) -> Result<StageMode, TrainError> {
    Ok(match stage {
        Stage::Finetune => StageMode::InPlace { freeze_hyper: false },
        Stage::ContextOnly => StageMode::InPlace { freeze_hyper: true },
        Stage::HyperOnly => match kind {
            NetKind::Luma if variant == Variant::NoContext => {
                StageMode::InPlace { freeze_hyper: false }
            }
            NetKind::Luma => StageMode::Aux(Variant::NoContext),
            NetKind::Chroma if variant == Variant::NoCccm => {
                StageMode::InPlace { freeze_hyper: false }
            }
            NetKind::Chroma if variant == Variant::CheckerboardCbcr => {
                return Err(TrainError::InvalidConfig(
                    "hyper_only is not available for the checkerboard chroma decoder; \
                     its hyper pair only exists in full-resolution form"
                        .into(),
                ));
            }
            NetKind::Chroma => StageMode::Aux(Variant::NoCccm),
        },
    })
}

fn stack_n(parts: &[Tensor]) -> Tensor {
    let s = parts[0].shape;
    assert_eq!(s[0], 1, "stack_n expects unbatched parts");
    let mut data = Vec::with_capacity(parts.len() * parts[0].numel());
    for p in parts {
        assert_eq!(p.shape, s, "ragged batch");
        data.extend_from_slice(&p.data);
    }
    Tensor::from_vec([parts.len(), s[1], s[2], s[3]], data)
}

fn uniform_noise(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data.iter_mut() {
        *v = rng.gen::<f32>() - 0.5;
    }
    t
}

struct BatchLoss {
    loss: crate::autodiff::Var,
    /// Deterministic total bits at the rounded latent (for logging).
    det_bits: f64,
    pixels: f64,
}

fn luma_pixels_per_sample(s: &Sample) -> usize {
    s.luma.rows[0].h * 16 * (s.luma.rows[0].w * 16)
}

fn y_loss(
    e: &mut TapedEngine<'_>,
    model: &Model,
    samples: &[Sample],
    rng: &mut ChaCha8Rng,
) -> BatchLoss {
    let pixels = (samples.len() * luma_pixels_per_sample(&samples[0])) as f64;
    let x = stack_n(
        &samples.iter().map(|s| context_input(&s.luma.stacked())).collect::<Vec<_>>(),
    );
    let xv = e.input(x);
    let z = model.y_encode(e, xv);
    let noise = uniform_noise(rng, e.value(z).shape);
    let nv = e.input(noise);
    let zn = e.add(z, nv);
    let rate_zn = e.factorized_rate(zn, model.y_prior_id());
    let zr = e.round_ste(z);
    // Logging-only node: not part of the loss, so it never contributes
    // gradient.
    let rate_zr = e.factorized_rate(zr, model.y_prior_id());
    let h = model.y_decode_h(e, zr);
    let rows = [0, 1, 2, 3].map(|r| {
        e.input(stack_n(
            &samples.iter().map(|s| context_input(&s.luma.rows[r])).collect::<Vec<_>>(),
        ))
    });
    let params = model.y_context_params(e, h, &rows);
    let inv = (1.0 / pixels) as f32;
    let mut terms = vec![(inv, rate_zn)];
    let mut ctx_bits = 0.0;
    for sp in &params {
        let sym = stack_n(
            &samples
                .iter()
                .map(|s| symbols_tensor(&s.luma.slice(sp.row, sp.col)))
                .collect::<Vec<_>>(),
        );
        let t = e.gauss_rate(&sym, None, sp.mu, sp.b);
        ctx_bits += e.scalar_f64(t);
        terms.push((inv, t));
    }
    let loss = e.weighted_sum(&terms);
    BatchLoss { loss, det_bits: e.scalar_f64(rate_zr) + ctx_bits, pixels }
}

fn c_loss(
    e: &mut TapedEngine<'_>,
    model: &Model,
    samples: &[Sample],
    rng: &mut ChaCha8Rng,
) -> BatchLoss {
    let pixels = (samples.len() * luma_pixels_per_sample(&samples[0])) as f64;
    let x = stack_n(&samples.iter().map(|s| context_input(&s.stacked)).collect::<Vec<_>>());
    let xv = e.input(x);
    let z = model.c_encode(e, xv);
    let noise = uniform_noise(rng, e.value(z).shape);
    let nv = e.input(noise);
    let zn = e.add(z, nv);
    let rate_zn = e.factorized_rate(zn, model.c_prior_id());
    let zr = e.round_ste(z);
    let rate_zr = e.factorized_rate(zr, model.c_prior_id());
    let h = model.c_decode_h(e, zr);

    let (t_a, t_n) = if model.variant == Variant::CheckerboardCbcr {
        let sym =
            stack_n(&samples.iter().map(|s| symbols_tensor(&s.stacked)).collect::<Vec<_>>());
        let (sh, sw) = (samples[0].stacked.h, samples[0].stacked.w);
        let c = samples[0].stacked.c;
        let (mu_a, b_a) = model.ckbd_anchor_params(e, h);
        let mask_a = stack_n(&vec![ckbd_mask(c, sh, sw, true); samples.len()]);
        let t_a = e.gauss_rate(&sym, Some(&mask_a), mu_a, b_a);
        let masked = stack_n(
            &samples
                .iter()
                .map(|s| context_input(&ckbd_masked_anchor(&s.stacked)))
                .collect::<Vec<_>>(),
        );
        let mv = e.input(masked);
        let (mu_n, b_n) = model.ckbd_non_anchor_params(e, h, mv);
        let mask_n = stack_n(&vec![ckbd_mask(c, sh, sw, false); samples.len()]);
        let t_n = e.gauss_rate(&sym, Some(&mask_n), mu_n, b_n);
        (t_a, t_n)
    } else {
        let sym_a =
            stack_n(&samples.iter().map(|s| symbols_tensor(&s.chroma.anchor())).collect::<Vec<_>>());
        let (mu_a, b_a) = model.anchor_params(e, h);
        let t_a = e.gauss_rate(&sym_a, None, mu_a, b_a);
        let av = e.input(stack_n(
            &samples.iter().map(|s| context_input(&s.chroma.anchor())).collect::<Vec<_>>(),
        ));
        let (mu_n, b_n) = model.non_anchor_params(e, h, av);
        let sym_n = stack_n(
            &samples.iter().map(|s| symbols_tensor(&s.chroma.non_anchor())).collect::<Vec<_>>(),
        );
        let t_n = e.gauss_rate(&sym_n, None, mu_n, b_n);
        (t_a, t_n)
    };
    let inv = (1.0 / pixels) as f32;
    let loss = e.weighted_sum(&[(inv, rate_zn), (inv, t_a), (inv, t_n)]);
    BatchLoss {
        loss,
        det_bits: e.scalar_f64(rate_zr) + e.scalar_f64(t_a) + e.scalar_f64(t_n),
        pixels,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    kind: NetKind,
    stage: Stage,
    steps: usize,
    freeze_hyper: bool,
    global: &mut usize,
    decay_from: usize,
    rng: &mut ChaCha8Rng,
    rows: &mut Vec<LogRow>,
) -> Result<(), TrainError> {
    let mut adam = Adam::new();
    for _ in 0..steps {
        let lr = if *global >= decay_from { cfg.lr_final } else { cfg.lr };
        let samples = data.batch(rng, cfg.patch, cfg.batch, cfg.qp)?;
        let mut e = TapedEngine::new(&model.store);
        let bl = match kind {
            NetKind::Luma => y_loss(&mut e, model, &samples, rng),
            NetKind::Chroma => c_loss(&mut e, model, &samples, rng),
        };
        let loss = e.scalar_f64(bl.loss);
        let det_bpp = bl.det_bits / bl.pixels;
        let mut grads = e.backward(bl.loss);
        if freeze_hyper {
            grads.retain(|id| !is_hyper(model.store.name(id), kind));
        }
        let grad_norm = grads.global_norm();
        // The rate ops floor their likelihoods, which can mask a NaN weight
        // in the forward pass; the gradient norm still exposes it.
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                stage: stage.as_str(),
                step: *global,
                value: if loss.is_finite() { grad_norm } else { loss },
            });
        }
        adam.step_with_clip(&mut model.store, &grads, lr, cfg.clip_max_norm);
        rows.push(LogRow {
            step: *global,
            stage: stage.as_str(),
            loss,
            bpp: det_bpp,
            grad_norm,
            lr,
        });
        *global += 1;
    }
    Ok(())
}

const AUX_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn train_net(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    kind: NetKind,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let steps_per_epoch = data.len().div_ceil(cfg.batch).max(1);
    let total: usize = cfg.stages.iter().map(|s| s.epochs * steps_per_epoch).sum();
    let decay_from = total - total / 4;
    let mut rows = Vec::new();
    let mut global = 0usize;
    for spec in &cfg.stages {
        let steps = spec.epochs * steps_per_epoch;
        match stage_mode(spec.stage, kind, model.variant)? {
            StageMode::InPlace { freeze_hyper } => run_stage(
                model, data, cfg, kind, spec.stage, steps, freeze_hyper, &mut global,
                decay_from, &mut rng, &mut rows,
            )?,
            StageMode::Aux(aux_variant) => {
                let mut aux = Model::new(aux_variant, model.m, cfg.seed ^ AUX_SEED_SALT);
                copy_hyper(model, &mut aux, kind);
                run_stage(
                    &mut aux, data, cfg, kind, spec.stage, steps, false, &mut global,
                    decay_from, &mut rng, &mut rows,
                )?;
                copy_hyper(&aux, model, kind);
            }
        }
    }
    Ok(TrainReport {
        rows,
        bpp_label: match kind {
            NetKind::Luma => "bpp_y",
            NetKind::Chroma => "bpp_cbcr",
        },
    })
}

/// Staged luma training per the configured schedule; mutates the model in
/// place and returns the loss log.
pub fn train_y_net(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_net(model, data, cfg, NetKind::Luma)
}

/// Chroma training; single-stage (`finetune`) schedules are the default.
pub fn train_cbcr_net(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_net(model, data, cfg, NetKind::Chroma)
}

// ---------------------------------------------------------------------------
// Rate estimation and baselines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct RateEstimate {
    /// Total luma bits, hyper-latent included.
    pub y_bits: f64,
    /// Total chroma bits, hyper-latent included.
    pub c_bits: f64,
    /// The hyper-latent share of `y_bits`.
    pub y_z_bits: f64,
    /// The hyper-latent share of `c_bits`.
    pub c_z_bits: f64,
}

impl RateEstimate {
    pub fn total_bits(self) -> f64 {
        self.y_bits + self.c_bits
    }
}

fn sum_gauss_bits(
    gauss: &GaussianTables,
    sym: &ChannelTensor,
    mu: &Tensor,
    b: &Tensor,
    parity: Option<bool>,
) -> f64 {
    let mut bits = 0.0;
    for (i, &s) in sym.data.iter().enumerate() {
        if let Some(anchor) = parity {
            let y = (i / sym.w) % sym.h;
            let x = i % sym.w;
            if ckbd_is_anchor(y, x) != anchor {
                continue;
            }
        }
        let (m, bb) = raw_to_mu_b(mu.data[i], b.data[i]);
        bits += gauss.bits_estimate(s as i32, GaussianParams::from_raw(m, bb));
    }
    bits
}

/// Exact-table rate of an image under a frozen model: the sum of
/// `bits_estimate` over every coded symbol at the rounded latent. This is the
/// quantity the range coder realizes up to per-stream flush overhead.
pub fn estimate_image_bits(model: &Model, img: &QuantizedImage) -> RateEstimate {
    let gauss = GaussianTables::new();

    let layout = luma_layout(&img.planes[0]);
    let (rh, rw) = (layout.rows[0].h, layout.rows[0].w);
    let mut e = DirectEngine::new(&model.store);
    let xv = e.input(pad_spatial(&context_input(&layout.stacked()), HYPER_PAD));
    let zv = model.y_encode(&mut e, xv);
    let (ints, zt) = crate::pipeline::round_latent(e.value(zv));
    let yft = FactorizedTables::from_flat(&model.store.tensor(model.y_prior_id()).data, model.m);
    let per = ints.len() / model.m;
    let y_z_bits: f64 = ints.iter().enumerate().map(|(i, &v)| yft.bits_estimate(i / per, v)).sum();
    let mut y_bits = y_z_bits;
    let zvar = e.input(zt);
    let hp = model.y_decode_h(&mut e, zvar);
    let h = crop_spatial(e.value(hp), rh, rw);
    let hv = e.input(h);
    let rows = [0, 1, 2, 3].map(|r| e.input(context_input(&layout.rows[r])));
    for sp in model.y_context_params(&mut e, hv, &rows) {
        let sym = layout.slice(sp.row, sp.col);
        y_bits += sum_gauss_bits(&gauss, &sym, e.value(sp.mu), e.value(sp.b), None);
    }

    let stacked = chroma_stacked(&img.planes[1], &img.planes[2]);
    let (sh, sw) = (stacked.h, stacked.w);
    let mut e = DirectEngine::new(&model.store);
    let xv = e.input(pad_spatial(&context_input(&stacked), HYPER_PAD));
    let zv = model.c_encode(&mut e, xv);
    let (ints, zt) = crate::pipeline::round_latent(e.value(zv));
    let cft = FactorizedTables::from_flat(&model.store.tensor(model.c_prior_id()).data, model.m);
    let per = ints.len() / model.m;
    let c_z_bits: f64 = ints.iter().enumerate().map(|(i, &v)| cft.bits_estimate(i / per, v)).sum();
    let mut c_bits = c_z_bits;
    let zvar = e.input(zt);
    let hp = model.c_decode_h(&mut e, zvar);
    if model.variant == Variant::CheckerboardCbcr {
        let h = crop_spatial(e.value(hp), sh, sw);
        let hv = e.input(h);
        let (mu_a, b_a) = model.ckbd_anchor_params(&mut e, hv);
        c_bits += sum_gauss_bits(&gauss, &stacked, e.value(mu_a), e.value(b_a), Some(true));
        let mv = e.input(context_input(&ckbd_masked_anchor(&stacked)));
        let (mu_n, b_n) = model.ckbd_non_anchor_params(&mut e, hv, mv);
        c_bits += sum_gauss_bits(&gauss, &stacked, e.value(mu_n), e.value(b_n), Some(false));
    } else {
        let groups = crate::layout::chroma_groups(&img.planes[1], &img.planes[2]);
        let h = crop_spatial(e.value(hp), sh / 2, sw / 2);
        let hv = e.input(h);
        let anchor = groups.anchor();
        let (mu_a, b_a) = model.anchor_params(&mut e, hv);
        c_bits += sum_gauss_bits(&gauss, &anchor, e.value(mu_a), e.value(b_a), None);
        let av = e.input(context_input(&anchor));
        let (mu_n, b_n) = model.non_anchor_params(&mut e, hv, av);
        c_bits += sum_gauss_bits(&gauss, &groups.non_anchor(), e.value(mu_n), e.value(b_n), None);
    }

    RateEstimate { y_bits, c_bits, y_z_bits, c_z_bits }
}

/// Bits per luma pixel of a static baseline: one discretized Gaussian per
/// stacked luma channel, fit by moments on the given samples.
pub fn moment_baseline_bpp(samples: &[Sample]) -> f64 {
    const CH: usize = 256;
    const FLOOR: f64 = 1e-9;
    let mut sum = vec![0.0f64; CH];
    let mut sq = vec![0.0f64; CH];
    let mut count = vec![0.0f64; CH];
    for s in samples {
        let st = s.luma.stacked();
        let per = st.h * st.w;
        for (i, &v) in st.data.iter().enumerate() {
            let c = i / per;
            sum[c] += v as f64;
            sq[c] += (v as f64) * (v as f64);
            count[c] += 1.0;
        }
    }
    let stats: Vec<(f64, f64)> = (0..CH)
        .map(|c| {
            let mean = sum[c] / count[c].max(1.0);
            let var = (sq[c] / count[c].max(1.0) - mean * mean).max(0.0);
            (mean, var.sqrt().clamp(0.04, 256.0))
        })
        .collect();
    let mut bits = 0.0;
    let mut pixels = 0.0;
    for s in samples {
        let st = s.luma.stacked();
        let per = st.h * st.w;
        for (i, &v) in st.data.iter().enumerate() {
            let (mean, sd) = stats[i / per];
            bits += -gauss_bin_prob(v as f64, mean, sd).max(FLOOR).log2();
        }
        pixels += luma_pixels_per_sample(s) as f64;
    }
    bits / pixels
}
