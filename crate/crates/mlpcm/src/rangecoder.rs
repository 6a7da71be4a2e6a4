//! Byte-oriented integer range coder.
//!
//! Carry handling follows the classic 64-bit-low / 32-bit-range scheme: the
//! encoder keeps one cached byte plus a run of pending `0xFF` bytes and
//! resolves carries when the next byte is shifted out. All arithmetic is
//! integer, so streams are bit-exact across platforms. Frequencies are
//! expressed against a power-of-two total (2^16 for model tables); the raw
//! bypass channel reuses the same mechanism with single-count symbols, so a
//! raw value of `n` bits occupies exactly `n` bits of code space.
//!
//! FIFO: symbols decode in encode order. A decoder never reads past the
//! encoder's output; truncated input surfaces as [`RangeError::Truncated`].

use thiserror::Error;

const TOP: u32 = 1 << 24;

/// Model totals are fixed at 16 bits.
pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RangeError {
    #[error("range-coded stream truncated")]
    Truncated,
    #[error("range-coded stream has a bad lead byte")]
    BadLeadByte,
}

pub type Result<T> = std::result::Result<T, RangeError>;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        // cache_size starts at 1 so the first shift emits a zero lead byte;
        // the decoder skips it.
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    /// Narrow the interval to `[cum, cum + freq)` out of `total` (a power of
    /// two, at most 2^16). `freq` must be nonzero.
    pub fn encode(&mut self, cum: u32, freq: u32, total_bits: u32) {
        debug_assert!(total_bits <= 16 && freq > 0);
        debug_assert!(cum + freq <= (1 << total_bits));
        let r = self.range >> total_bits;
        self.low += cum as u64 * r as u64;
        self.range = freq * r;
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    /// Raw bypass channel: exactly `nbits` of code space (MSB first).
    pub fn encode_raw(&mut self, value: u64, nbits: u32) {
        debug_assert!(nbits <= 64 && (nbits == 64 || value < (1u64 << nbits)));
        let mut left = nbits;
        while left > 0 {
            let take = left.min(16);
            left -= take;
            let chunk = ((value >> left) & ((1u64 << take) - 1)) as u32;
            self.encode(chunk, 1, take);
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xff00_0000 || self.low > 0xffff_ffff {
            let carry = (self.low >> 32) as u8;
            if self.cache_size > 0 {
                self.out.push(self.cache.wrapping_add(carry));
                for _ in 1..self.cache_size {
                    self.out.push(0xffu8.wrapping_add(carry));
                }
            }
            self.cache = (self.low >> 24) as u8;
            self.cache_size = 0;
        }
        self.cache_size += 1;
        self.low = (self.low << 8) & 0xffff_ffff;
    }

    /// Flush and return the stream.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.is_empty() || data[0] != 0 {
            return Err(RangeError::BadLeadByte);
        }
        let mut d = RangeDecoder { data, pos: 1, range: u32::MAX, code: 0 };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.byte()? as u32;
        }
        Ok(d)
    }

    fn byte(&mut self) -> Result<u8> {
        let b = self.data.get(self.pos).copied().ok_or(RangeError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    /// Total bytes consumed from the input so far (including lead byte).
    pub fn consumed(&self) -> usize {
        self.pos
    }

    /// Cumulative-frequency value of the pending symbol; the caller looks up
    /// which symbol owns it and then calls [`RangeDecoder::commit`].
    pub fn pending(&self, total_bits: u32) -> u32 {
        let r = self.range >> total_bits;
        (self.code / r).min((1 << total_bits) - 1)
    }

    /// Consume the symbol `[cum, cum + freq)` previously identified via
    /// [`RangeDecoder::pending`].
    pub fn commit(&mut self, cum: u32, freq: u32, total_bits: u32) -> Result<()> {
        let r = self.range >> total_bits;
        self.code -= cum * r;
        self.range = freq * r;
        while self.range < TOP {
            self.code = (self.code << 8) | self.byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    /// Decode a symbol against a cumulative table (`cdf[i]..cdf[i+1]` owns
    /// symbol `i`; `cdf[len-1]` equals the total).
    pub fn decode_cdf(&mut self, cdf: &[u32], total_bits: u32) -> Result<usize> {
        let v = self.pending(total_bits);
        // partition_point returns the first index with cdf[i] > v; symbol
        // index is one less.
        let sym = cdf.partition_point(|&c| c <= v) - 1;
        self.commit(cdf[sym], cdf[sym + 1] - cdf[sym], total_bits)?;
        Ok(sym)
    }

    pub fn decode_raw(&mut self, nbits: u32) -> Result<u64> {
        let mut left = nbits;
        let mut v: u64 = 0;
        while left > 0 {
            let take = left.min(16);
            left -= take;
            let chunk = self.pending(take);
            self.commit(chunk, 1, take)?;
            v = (v << take) | chunk as u64;
        }
        Ok(v)
    }
}
