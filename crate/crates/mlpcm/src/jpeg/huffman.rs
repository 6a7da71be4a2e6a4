//! Huffman tables and the stuffed-byte bit I/O used by baseline scans.

use super::{JpegError, Result};

/// One DHT table exactly as it appeared in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanSpec {
    /// 0 = DC, 1 = AC.
    pub class: u8,
    /// Table slot (0..=3 in baseline).
    pub id: u8,
    /// Number of codes of each length 1..=16.
    pub counts: [u8; 16],
    /// Symbol values in code order.
    pub values: Vec<u8>,
}

/// Canonical code assignment shared by the decode and encode tables:
/// codes of each length are handed out in `values` order, starting from
/// `(code_of_previous_length + count) << 1`.
fn assign_codes(spec: &HuffmanSpec) -> Vec<(u16, u8)> {
    let mut out = Vec::with_capacity(spec.values.len());
    let mut code: u16 = 0;
    for (len0, &count) in spec.counts.iter().enumerate() {
        for _ in 0..count {
            out.push((code, len0 as u8 + 1));
            code += 1;
        }
        code <<= 1;
    }
    out
}

/// Decoding view: JPEG's mincode/maxcode/valptr walk, one bit at a time.
#[derive(Debug, Clone)]
pub struct DecTable {
    mincode: [i32; 17],
    maxcode: [i32; 17],
    valptr: [usize; 17],
    values: Vec<u8>,
}

impl DecTable {
    pub fn build(spec: &HuffmanSpec) -> Result<DecTable> {
        let total: usize = spec.counts.iter().map(|&c| c as usize).sum();
        if total != spec.values.len() || total == 0 || total > 256 {
            return Err(JpegError::MalformedStream(format!(
                "Huffman table {}:{} declares {total} codes but carries {} values",
                spec.class,
                spec.id,
                spec.values.len()
            )));
        }
        let mut t = DecTable {
            mincode: [0; 17],
            maxcode: [-1; 17],
            valptr: [0; 17],
            values: spec.values.clone(),
        };
        let mut code: i32 = 0;
        let mut k = 0usize;
        for len in 1..=16 {
            let count = spec.counts[len - 1] as i32;
            if count > 0 {
                t.valptr[len] = k;
                t.mincode[len] = code;
                code += count;
                t.maxcode[len] = code - 1;
                k += count as usize;
            }
            if code > (1 << len) {
                return Err(JpegError::MalformedStream(
                    "oversubscribed Huffman table".into(),
                ));
            }
            code <<= 1;
        }
        Ok(t)
    }

    /// Decode one symbol from the reader.
    pub fn decode(&self, r: &mut BitReader<'_>) -> Result<u8> {
        let mut code: i32 = 0;
        for len in 1..=16 {
            code = (code << 1) | r.bit()? as i32;
            if self.maxcode[len] >= code && code >= self.mincode[len] {
                let idx = self.valptr[len] + (code - self.mincode[len]) as usize;
                return Ok(self.values[idx]);
            }
        }
        Err(JpegError::MalformedStream("invalid Huffman code".into()))
    }
}

/// Encoding view: symbol -> (code, length).
#[derive(Debug, Clone)]
pub struct EncTable {
    codes: [(u16, u8); 256],
}

impl EncTable {
    pub fn build(spec: &HuffmanSpec) -> EncTable {
        let mut codes = [(0u16, 0u8); 256];
        for ((code, len), &sym) in assign_codes(spec).into_iter().zip(&spec.values) {
            codes[sym as usize] = (code, len);
        }
        EncTable { codes }
    }

    pub fn lookup(&self, sym: u8) -> Option<(u16, u8)> {
        let (code, len) = self.codes[sym as usize];
        if len == 0 {
            None
        } else {
            Some((code, len))
        }
    }
}

/// Bit reader over an entropy-coded segment. `0xFF 0x00` is unstuffed to a
/// data byte; `0xFF` followed by anything else (a marker) terminates the
/// segment, and consuming bits past it is an error. Bytes are never
/// prefetched, so [`BitReader::consumed`] is exactly the scan length once the
/// last symbol has been decoded.
pub struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    bits: u32,
    nbits: u32,
}

impl<'a> BitReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        BitReader { data, pos: 0, bits: 0, nbits: 0 }
    }

    /// Bytes consumed so far, including any trailing partially-used byte.
    pub fn consumed(&self) -> usize {
        self.pos
    }

    pub fn bit(&mut self) -> Result<u32> {
        if self.nbits == 0 {
            let b = *self.data.get(self.pos).ok_or_else(|| {
                JpegError::MalformedStream("scan data ended mid-symbol".into())
            })?;
            self.pos += 1;
            if b == 0xff {
                match self.data.get(self.pos) {
                    Some(0x00) => self.pos += 1, // stuffed data byte
                    Some(_) | None => {
                        // Backing up keeps `consumed` pointing at the marker.
                        self.pos -= 1;
                        return Err(JpegError::MalformedStream(
                            "marker encountered inside scan data".into(),
                        ));
                    }
                }
            }
            self.bits = b as u32;
            self.nbits = 8;
        }
        self.nbits -= 1;
        Ok((self.bits >> self.nbits) & 1)
    }

    /// Read `n` bits MSB-first (`n <= 16`).
    pub fn bits(&mut self, n: u32) -> Result<u32> {
        let mut v = 0;
        for _ in 0..n {
            v = (v << 1) | self.bit()?;
        }
        Ok(v)
    }
}

/// Bit writer emitting stuffed scan bytes; flush pads the final byte with 1
/// bits (and stuffs it if the padding produces `0xFF`).
#[derive(Default)]
pub struct BitWriter {
    out: Vec<u8>,
    bits: u32,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, code: u32, len: u32) {
        debug_assert!(len <= 24);
        self.bits = (self.bits << len) | (code & ((1u32 << len) - 1));
        self.nbits += len;
        while self.nbits >= 8 {
            self.nbits -= 8;
            let b = (self.bits >> self.nbits) as u8;
            self.out.push(b);
            if b == 0xff {
                self.out.push(0x00);
            }
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let pad = 8 - self.nbits;
            self.put((1u32 << pad) - 1, pad);
        }
        self.out
    }
}
