//! Factorized prior over hyper-latent channels.
//!
//! Each channel owns a small monotone network (1 -> 3 -> 3 -> 1) whose
//! sigmoid output is a CDF: weights pass through softplus so every slope is
//! positive, and the gated-tanh residual keeps the derivative strictly
//! positive. 28 parameters per channel, stored flat per channel as
//! `w1[3] b1[3] a1[3] w2[9] b2[3] a2[3] w3[3] b3` (w2 row-major, out by in).
//!
//! Tables discretize the CDF over an adaptive support found by quantile
//! bisection (tail mass 2^-17 each side); values outside the support are
//! escape-coded as a raw sign + 31-bit magnitude, so any i32 hyper-latent
//! roundtrips even under a freshly initialized model.

use crate::entropy::CdfTable;
use crate::rangecoder::{RangeDecoder, RangeEncoder, RangeError, PROB_BITS};

pub const PARAMS_PER_CHANNEL: usize = 28;
const TAIL_MASS: f64 = 1.0 / (1u64 << 17) as f64;
const MAX_BINS: i64 = 8192;
const ESCAPE_MAG_BITS: u32 = 31;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One channel's CDF network.
#[derive(Debug, Clone)]
pub struct FactorizedChannel {
    pub w1: [f64; 3],
    pub b1: [f64; 3],
    pub a1: [f64; 3],
    pub w2: [f64; 9],
    pub b2: [f64; 3],
    pub a2: [f64; 3],
    pub w3: [f64; 3],
    pub b3: f64,
}

impl FactorizedChannel {
    pub fn from_flat(p: &[f64]) -> Self {
        assert_eq!(p.len(), PARAMS_PER_CHANNEL);
        let take = |r: std::ops::Range<usize>| -> Vec<f64> { p[r].to_vec() };
        FactorizedChannel {
            w1: take(0..3).try_into().unwrap(),
            b1: take(3..6).try_into().unwrap(),
            a1: take(6..9).try_into().unwrap(),
            w2: take(9..18).try_into().unwrap(),
            b2: take(18..21).try_into().unwrap(),
            a2: take(21..24).try_into().unwrap(),
            w3: take(24..27).try_into().unwrap(),
            b3: p[27],
        }
    }

    /// Strictly increasing CDF evaluated at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_with_grads(x).0
    }

    /// CDF value together with its derivative in `x` and its gradient with
    /// respect to the 28 flat parameters (same order as
    /// [`FactorizedChannel::from_flat`]). The training rate term and the
    /// coding tables both go through this one evaluation.
    pub fn cdf_with_grads(&self, x: f64) -> (f64, f64, [f64; PARAMS_PER_CHANNEL]) {
        let mut sw1 = [0.0f64; 3];
        let mut u1 = [0.0f64; 3];
        let mut tu1 = [0.0f64; 3];
        let mut ta1 = [0.0f64; 3];
        let mut v1 = [0.0f64; 3];
        for i in 0..3 {
            sw1[i] = softplus(self.w1[i]);
            u1[i] = sw1[i] * x + self.b1[i];
            tu1[i] = u1[i].tanh();
            ta1[i] = self.a1[i].tanh();
            v1[i] = u1[i] + ta1[i] * tu1[i];
        }
        let mut sw2 = [0.0f64; 9];
        let mut u2 = [0.0f64; 3];
        let mut tu2 = [0.0f64; 3];
        let mut ta2 = [0.0f64; 3];
        let mut v2 = [0.0f64; 3];
        for i in 0..3 {
            let mut u = self.b2[i];
            for j in 0..3 {
                sw2[i * 3 + j] = softplus(self.w2[i * 3 + j]);
                u += sw2[i * 3 + j] * v1[j];
            }
            u2[i] = u;
            tu2[i] = u.tanh();
            ta2[i] = self.a2[i].tanh();
            v2[i] = u + ta2[i] * tu2[i];
        }
        let mut sw3 = [0.0f64; 3];
        let mut y = self.b3;
        for j in 0..3 {
            sw3[j] = softplus(self.w3[j]);
            y += sw3[j] * v2[j];
        }
        let out = sigmoid(y);

        // Reverse pass seeded with d(out)/dy.
        let dy = out * (1.0 - out);
        let mut g = [0.0f64; PARAMS_PER_CHANNEL];
        g[27] = dy; // b3
        let mut dv2 = [0.0f64; 3];
        for j in 0..3 {
            g[24 + j] = dy * sigmoid(self.w3[j]) * v2[j]; // w3
            dv2[j] = dy * sw3[j];
        }
        let mut dv1 = [0.0f64; 3];
        for i in 0..3 {
            let du2 = dv2[i] * (1.0 + ta2[i] * (1.0 - tu2[i] * tu2[i]));
            g[21 + i] = dv2[i] * (1.0 - ta2[i] * ta2[i]) * tu2[i]; // a2
            g[18 + i] = du2; // b2
            for j in 0..3 {
                g[9 + i * 3 + j] = du2 * sigmoid(self.w2[i * 3 + j]) * v1[j]; // w2
                dv1[j] += du2 * sw2[i * 3 + j];
            }
        }
        let mut dx = 0.0;
        for i in 0..3 {
            let du1 = dv1[i] * (1.0 + ta1[i] * (1.0 - tu1[i] * tu1[i]));
            g[6 + i] = dv1[i] * (1.0 - ta1[i] * ta1[i]) * tu1[i]; // a1
            g[3 + i] = du1; // b1
            g[i] = du1 * sigmoid(self.w1[i]) * x; // w1
            dx += du1 * sw1[i];
        }
        (out, dx, g)
    }
}

/// Largest integer `k` in `[lo, hi]` with `pred(k)` true, assuming `pred`
/// is monotone (true then false). Returns `lo` if none are true.
fn bisect_last_true(lo: i64, hi: i64, pred: impl Fn(i64) -> bool) -> i64 {
    let (mut lo, mut hi) = (lo, hi);
    while lo < hi {
        let mid = lo + (hi - lo + 1) / 2;
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

const SEARCH: i64 = 1 << 30;

fn channel_table(ch: &FactorizedChannel) -> CdfTable {
    // Support: integers whose half-open bins carry all but the tail mass.
    let lo = bisect_last_true(-SEARCH, SEARCH, |k| ch.cdf(k as f64 - 0.5) <= TAIL_MASS);
    let hi = -bisect_last_true(-SEARCH, SEARCH, |k| {
        1.0 - ch.cdf(-(k as f64) + 0.5) <= TAIL_MASS
    });
    let (mut lo, mut hi) = (lo, hi.max(lo));
    if hi - lo + 1 > MAX_BINS {
        // Degenerate (untrained) channels can be arbitrarily wide; keep the
        // table bounded around the median and let escapes carry the rest.
        let median = bisect_last_true(-SEARCH, SEARCH, |k| ch.cdf(k as f64) <= 0.5);
        lo = median - MAX_BINS / 2;
        hi = lo + MAX_BINS - 1;
    }
    let k = (hi - lo + 1) as usize;
    let mut bounds = Vec::with_capacity(k + 1);
    for s in lo..=hi + 1 {
        bounds.push(ch.cdf(s as f64 - 0.5));
    }
    let mut probs = Vec::with_capacity(k + 1);
    for i in 0..k {
        probs.push((bounds[i + 1] - bounds[i]).max(0.0));
    }
    probs.push((bounds[0] + (1.0 - bounds[k])).max(0.0));
    CdfTable::build(lo as i32, &probs)
}

/// Frozen per-channel tables for one hyper-latent tensor.
pub struct FactorizedTables {
    tables: Vec<CdfTable>,
}

impl FactorizedTables {
    /// `flat` holds `channels * 28` values, channel-major.
    pub fn from_flat(flat: &[f32], channels: usize) -> Self {
        assert_eq!(flat.len(), channels * PARAMS_PER_CHANNEL);
        let tables = (0..channels)
            .map(|c| {
                let p: Vec<f64> = flat[c * PARAMS_PER_CHANNEL..(c + 1) * PARAMS_PER_CHANNEL]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                channel_table(&FactorizedChannel::from_flat(&p))
            })
            .collect();
        FactorizedTables { tables }
    }

    pub fn channels(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, channel: usize) -> &CdfTable {
        &self.tables[channel]
    }

    pub fn encode(&self, enc: &mut RangeEncoder, channel: usize, v: i32) {
        let t = &self.tables[channel];
        match t.index_of(v) {
            Some(i) => enc.encode(t.cdf[i], t.freq(i), PROB_BITS),
            None => {
                let e = t.escape_index();
                enc.encode(t.cdf[e], t.freq(e), PROB_BITS);
                enc.encode_raw((v < 0) as u64, 1);
                enc.encode_raw(v.unsigned_abs() as u64, ESCAPE_MAG_BITS);
            }
        }
    }

    pub fn decode(&self, dec: &mut RangeDecoder, channel: usize) -> Result<i32, RangeError> {
        let t = &self.tables[channel];
        let idx = dec.decode_cdf(&t.cdf, PROB_BITS)?;
        if idx == t.escape_index() {
            let neg = dec.decode_raw(1)? != 0;
            let mag = dec.decode_raw(ESCAPE_MAG_BITS)? as i32;
            Ok(if neg { -mag } else { mag })
        } else {
            Ok(t.lo + idx as i32)
        }
    }

    pub fn bits_estimate(&self, channel: usize, v: i32) -> f64 {
        let t = &self.tables[channel];
        match t.index_of(v) {
            Some(i) => t.bits_for(i),
            None => t.bits_for(t.escape_index()) + 1.0 + ESCAPE_MAG_BITS as f64,
        }
    }
}
