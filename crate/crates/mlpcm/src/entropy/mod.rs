//! Quantized entropy models shared by encoder and decoder.
//!
//! Network outputs are snapped onto integer grids before any coding
//! decision: means to a 1/64 grid, scales to a 256-level geometric grid.
//! Tables are then built from the snapped integers only, so both sides of
//! the codec derive bit-identical frequency tables from the same checkpoint
//! without ever comparing floating-point values across the wire.
//!
//! Each table covers an adaptive support around the mean plus one escape
//! bin; symbols outside the support are coded as escape followed by a raw
//! sign + magnitude. Counts always sum to exactly 2^16 with every bin at
//! least 1, so the range coder can consume them directly.

pub mod factorized;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::math::normal_cdf;
use crate::rangecoder::{RangeDecoder, RangeEncoder, RangeError, PROB_BITS, PROB_TOTAL};

pub const B_MIN: f64 = 0.04;
pub const B_MAX: f64 = 256.0;
pub const B_LEVELS: u32 = 256;
/// Mean grid: 64 steps per unit.
pub const MU_STEPS: i32 = 64;

fn ln_b_min() -> f64 {
    B_MIN.ln()
}

fn b_step() -> f64 {
    (B_MAX / B_MIN).ln() / (B_LEVELS - 1) as f64
}

/// Scale value for a grid level.
pub fn b_value(level: u8) -> f64 {
    (ln_b_min() + level as f64 * b_step()).exp()
}

/// Entropy parameters snapped to the transmission grids. This is the only
/// form in which model outputs reach the coder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GaussianParams {
    pub mu_64ths: i32,
    pub b_level: u8,
}

impl GaussianParams {
    /// Snap raw network outputs onto the grids. Nearest-neighbour in the
    /// linear domain for the mean and in the log domain for the scale; both
    /// snaps are idempotent.
    pub fn from_raw(mu: f64, b: f64) -> Self {
        let mu = if mu.is_finite() { mu.clamp(-2048.0, 2048.0) } else { 0.0 };
        let b = if b.is_finite() { b.clamp(B_MIN, B_MAX) } else { B_MAX };
        let level = ((b.ln() - ln_b_min()) / b_step()).round().clamp(0.0, 255.0) as u8;
        GaussianParams { mu_64ths: (mu * MU_STEPS as f64).round() as i32, b_level: level }
    }

    pub fn mu(&self) -> f64 {
        self.mu_64ths as f64 / MU_STEPS as f64
    }

    pub fn b(&self) -> f64 {
        b_value(self.b_level)
    }

    /// Integer part of the mean; tables are built in the shifted domain
    /// `s - shift` so they only depend on the fractional mean.
    fn shift(&self) -> i32 {
        self.mu_64ths.div_euclid(MU_STEPS)
    }

    fn frac(&self) -> u8 {
        self.mu_64ths.rem_euclid(MU_STEPS) as u8
    }
}

/// Frequency table over a contiguous symbol range plus a trailing escape
/// bin. `cdf` is cumulative with `cdf[0] = 0` and `cdf.last() = 2^16`; bin
/// `i` covers the shifted symbol `lo + i`, and the second-to-last interval
/// is the escape.
#[derive(Debug, Clone)]
pub struct CdfTable {
    pub lo: i32,
    pub cdf: Vec<u32>,
}

impl CdfTable {
    pub fn bins(&self) -> usize {
        self.cdf.len() - 2
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.bins() as i32 - 1
    }

    fn escape_index(&self) -> usize {
        self.bins()
    }

    fn index_of(&self, s: i32) -> Option<usize> {
        if s >= self.lo && s <= self.hi() {
            Some((s - self.lo) as usize)
        } else {
            None
        }
    }

    fn freq(&self, idx: usize) -> u32 {
        self.cdf[idx + 1] - self.cdf[idx]
    }

    /// Exact code cost of bin `idx` in bits (escape raw bits not included).
    pub fn bits_for(&self, idx: usize) -> f64 {
        -((self.freq(idx) as f64 / PROB_TOTAL as f64).log2())
    }

    pub fn build(lo: i32, probs: &[f64]) -> Self {
        let counts = quantize_pmf(probs, PROB_TOTAL);
        let mut cdf = Vec::with_capacity(counts.len() + 1);
        cdf.push(0u32);
        for c in counts {
            cdf.push(cdf.last().unwrap() + c);
        }
        CdfTable { lo, cdf }
    }
}

/// Largest-remainder quantization of a nonnegative weight vector to counts
/// summing to exactly `total`, every count at least 1. Deterministic: ties
/// break on the lower index, adjustments always target the first extreme.
pub fn quantize_pmf(probs: &[f64], total: u32) -> Vec<u32> {
    let n = probs.len();
    assert!(n >= 1 && (n as u32) <= total, "pmf with {n} bins cannot fill {total}");
    let clean: Vec<f64> =
        probs.iter().map(|&p| if p.is_finite() && p > 0.0 { p } else { 0.0 }).collect();
    let sum: f64 = clean.iter().sum();
    let mut counts: Vec<u32> = if sum > 0.0 {
        clean.iter().map(|&p| (p / sum * total as f64).floor() as u32).collect()
    } else {
        vec![0; n]
    };
    let assigned: u64 = counts.iter().map(|&c| c as u64).sum();
    if assigned < total as u64 {
        let mut order: Vec<usize> = (0..n).collect();
        let rem: Vec<f64> = clean
            .iter()
            .zip(&counts)
            .map(|(&p, &c)| if sum > 0.0 { p / sum * total as f64 - c as f64 } else { 0.0 })
            .collect();
        order.sort_by(|&a, &b| rem[b].partial_cmp(&rem[a]).unwrap().then(a.cmp(&b)));
        let mut give = total as u64 - assigned;
        let mut i = 0;
        while give > 0 {
            counts[order[i % n]] += 1;
            i += 1;
            give -= 1;
        }
    } else {
        let mut take = assigned - total as u64;
        while take > 0 {
            let i = argmax(&counts);
            debug_assert!(counts[i] > 1);
            counts[i] -= 1;
            take -= 1;
        }
    }
    // Lift zero bins while preserving the total.
    loop {
        let Some(z) = counts.iter().position(|&c| c == 0) else { break };
        let i = argmax(&counts);
        counts[i] -= 1;
        counts[z] += 1;
    }
    debug_assert_eq!(counts.iter().map(|&c| c as u64).sum::<u64>(), total as u64);
    counts
}

fn argmax(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Escape payload for coefficient-domain symbols: sign + 11-bit magnitude.
const COEFF_ESCAPE_MAG_BITS: u32 = 11;

fn encode_escape_value(enc: &mut RangeEncoder, s: i32) {
    let mag = s.unsigned_abs() as u64;
    debug_assert!(mag < (1 << COEFF_ESCAPE_MAG_BITS));
    enc.encode_raw((s < 0) as u64, 1);
    enc.encode_raw(mag, COEFF_ESCAPE_MAG_BITS);
}

fn decode_escape_value(dec: &mut RangeDecoder) -> Result<i32, RangeError> {
    let neg = dec.decode_raw(1)? != 0;
    let mag = dec.decode_raw(COEFF_ESCAPE_MAG_BITS)? as i32;
    Ok(if neg { -mag } else { mag })
}

/// Lazily built, shared cache of Gaussian tables keyed by (fractional mean,
/// scale level). At most 64 * 256 tables exist per process.
pub struct GaussianTables {
    map: Mutex<HashMap<u16, Arc<CdfTable>>>,
}

impl Default for GaussianTables {
    fn default() -> Self {
        Self::new()
    }
}

impl GaussianTables {
    pub fn new() -> Self {
        GaussianTables { map: Mutex::new(HashMap::new()) }
    }

    pub fn table(&self, params: GaussianParams) -> Arc<CdfTable> {
        let key = ((params.frac() as u16) << 8) | params.b_level as u16;
        let mut map = self.map.lock().unwrap();
        map.entry(key).or_insert_with(|| Arc::new(build_gauss_table(params.frac(), params.b_level))).clone()
    }

    pub fn encode(&self, enc: &mut RangeEncoder, s: i32, params: GaussianParams) {
        let t = self.table(params);
        let s1 = s - params.shift();
        match t.index_of(s1) {
            Some(i) => enc.encode(t.cdf[i], t.freq(i), PROB_BITS),
            None => {
                let e = t.escape_index();
                enc.encode(t.cdf[e], t.freq(e), PROB_BITS);
                encode_escape_value(enc, s);
            }
        }
    }

    pub fn decode(
        &self,
        dec: &mut RangeDecoder,
        params: GaussianParams,
    ) -> Result<i32, RangeError> {
        let t = self.table(params);
        let idx = dec.decode_cdf(&t.cdf, PROB_BITS)?;
        if idx == t.escape_index() {
            decode_escape_value(dec)
        } else {
            Ok(t.lo + idx as i32 + params.shift())
        }
    }

    /// Code cost in bits as the range coder will actually pay it (from the
    /// quantized table, raw escape bits included).
    pub fn bits_estimate(&self, s: i32, params: GaussianParams) -> f64 {
        let t = self.table(params);
        match t.index_of(s - params.shift()) {
            Some(i) => t.bits_for(i),
            None => t.bits_for(t.escape_index()) + 1.0 + COEFF_ESCAPE_MAG_BITS as f64,
        }
    }
}

/// Build the table for a fractional mean (`frac`/64) and scale level. The
/// support spans six scales around the mean, clamped to 255 either side of
/// the rounded mean; everything outside feeds the escape bin.
fn build_gauss_table(frac: u8, level: u8) -> CdfTable {
    let muf = frac as f64 / MU_STEPS as f64;
    let b = b_value(level);
    let mu_round = if frac >= 32 { 1 } else { 0 };
    let lo = (mu_round - 255).max((muf - 6.0 * b - 1.0).ceil() as i32);
    let hi = (mu_round + 255).min((muf + 6.0 * b + 1.0).floor() as i32).max(lo);
    let k = (hi - lo + 1) as usize;
    // Shared bin boundaries telescope, so in-support mass plus the two tails
    // sums to exactly 1 before quantization.
    let mut bounds = Vec::with_capacity(k + 1);
    for s in lo..=hi + 1 {
        bounds.push(normal_cdf((s as f64 - 0.5 - muf) / b));
    }
    let mut probs = Vec::with_capacity(k + 1);
    for i in 0..k {
        probs.push((bounds[i + 1] - bounds[i]).max(0.0));
    }
    probs.push((bounds[0] + (1.0 - bounds[k])).max(0.0));
    CdfTable::build(lo, &probs)
}
