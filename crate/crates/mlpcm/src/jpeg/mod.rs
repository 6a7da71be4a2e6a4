//! Baseline JPEG handling at the quantized-coefficient level.
//!
//! Only sequential 8-bit Huffman files with 4:4:4 or 4:2:0 subsampling and a
//! single interleaved scan are in scope. Progressive, arithmetic, 12-bit,
//! restart-interval and other layouts are rejected with
//! [`JpegError::UnsupportedFeature`] so callers can fall back to storing such
//! files untouched.
//!
//! Parsing keeps every marker segment byte verbatim (header and trailer
//! blobs) and decodes the entropy-coded scan into per-component planes of
//! `i16` coefficients in natural (raster) order with non-differential DC.
//! Serialisation re-encodes the scan with the original Huffman tables; for
//! files produced by mainstream encoders the output is byte-identical to the
//! input.

mod huffman;
mod parse;
mod serialize;

pub use huffman::{BitReader, BitWriter, EncTable, HuffmanSpec};
pub use parse::{parse_jpeg, ZIGZAG};
pub use serialize::serialize_jpeg;

pub(crate) use parse::parse_header;

use thiserror::Error;

/// Coefficients of legal baseline streams stay inside this closed range.
pub const COEFF_MIN: i16 = -1024;
pub const COEFF_MAX: i16 = 1023;

#[derive(Debug, Error)]
pub enum JpegError {
    /// Legal JPEG, but outside the supported baseline subset.
    #[error("unsupported JPEG feature: {0}")]
    UnsupportedFeature(String),
    /// Not decodable as a baseline JPEG at all.
    #[error("malformed JPEG stream: {0}")]
    MalformedStream(String),
    /// The in-memory image cannot be serialised (e.g. a coefficient has no
    /// code in the stored Huffman tables).
    #[error("inconsistent image state: {0}")]
    InconsistentState(String),
}

pub type Result<T> = std::result::Result<T, JpegError>;

/// Chroma layout of the three YCbCr components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsampling {
    /// All components at full resolution (1x1 sampling factors).
    Ycbcr444,
    /// Luma 2x2, chroma 1x1.
    Ycbcr420,
}

/// One frame component as declared in SOF0/SOS.
#[derive(Debug, Clone, Copy)]
pub struct Component {
    /// Component identifier byte from SOF0.
    pub id: u8,
    /// Horizontal / vertical sampling factors.
    pub h: u8,
    pub v: u8,
    /// Quantization table slot.
    pub tq: u8,
    /// DC / AC Huffman table slots from SOS.
    pub td: u8,
    pub ta: u8,
}

/// Dense block grid of quantized coefficients for one component.
///
/// Blocks are stored in raster order; each block is 64 `i16` values in
/// natural (row-major frequency) order with DC at index 0, kept
/// non-differential. The grid is MCU-aligned, so for 4:2:0 the luma grid
/// includes any replicated edge blocks the encoder emitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoeffPlane {
    pub blocks_w: usize,
    pub blocks_h: usize,
    pub coeffs: Vec<i16>,
}

impl CoeffPlane {
    pub fn zeroed(blocks_w: usize, blocks_h: usize) -> Self {
        CoeffPlane { blocks_w, blocks_h, coeffs: vec![0; blocks_w * blocks_h * 64] }
    }

    /// Immutable view of one 8x8 block.
    pub fn block(&self, bx: usize, by: usize) -> &[i16] {
        let at = (by * self.blocks_w + bx) * 64;
        &self.coeffs[at..at + 64]
    }

    pub fn block_mut(&mut self, bx: usize, by: usize) -> &mut [i16] {
        let at = (by * self.blocks_w + bx) * 64;
        &mut self.coeffs[at..at + 64]
    }
}

/// A parsed baseline JPEG: verbatim header/trailer plus decoded coefficients.
#[derive(Debug, Clone)]
pub struct QuantizedImage {
    pub width: u32,
    pub height: u32,
    pub subsampling: Subsampling,
    pub components: [Component; 3],
    pub planes: [CoeffPlane; 3],
    /// Quantization table slots (natural order); only slots referenced by a
    /// component are meaningful.
    pub qtables: [[u16; 64]; 4],
    /// Huffman table specs exactly as found in DHT segments.
    pub huffman: Vec<HuffmanSpec>,
    /// All bytes from SOI up to and including the SOS header.
    pub header: Vec<u8>,
    /// All bytes from the marker terminating the scan to end of file.
    pub trailer: Vec<u8>,
}

impl QuantizedImage {
    /// Luma pixel count used as the denominator of every bits-per-pixel
    /// figure.
    pub fn luma_pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    /// Dequantized (real-valued) copy of one component's blocks:
    /// `coeff * step` per position.
    pub fn dequantize_plane(&self, comp: usize) -> Vec<f64> {
        let q = &self.qtables[self.components[comp].tq as usize];
        self.planes[comp]
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * q[i % 64] as f64)
            .collect()
    }
}

/// Re-quantize every component onto new step tables:
/// `round(coeff * old_step / new_step)` with ties away from zero, clamped to
/// the legal coefficient range. `new_tables` is indexed by component; the
/// result's quantization table slots are rewritten accordingly.
pub fn requantize(img: &QuantizedImage, new_tables: &[[u16; 64]; 3]) -> Result<QuantizedImage> {
    let mut out = img.clone();
    // Components sharing a table slot must agree on the replacement.
    for a in 0..3 {
        for b in (a + 1)..3 {
            if img.components[a].tq == img.components[b].tq
                && new_tables[a] != new_tables[b]
            {
                return Err(JpegError::InconsistentState(format!(
                    "components {a} and {b} share quant slot {} but were given \
                     different tables",
                    img.components[a].tq
                )));
            }
        }
    }
    for c in 0..3 {
        let old_q = &img.qtables[img.components[c].tq as usize];
        let new_q = &new_tables[c];
        for (i, step) in new_q.iter().enumerate() {
            if *step == 0 {
                return Err(JpegError::InconsistentState(format!(
                    "zero quantization step at position {i}"
                )));
            }
        }
        for (i, v) in out.planes[c].coeffs.iter_mut().enumerate() {
            let k = i % 64;
            *v = requantize_coeff(*v, old_q[k], new_q[k]);
        }
        out.qtables[img.components[c].tq as usize] = *new_q;
    }
    // Keep the stored header blob in agreement with the new tables.
    out.header = serialize::rewrite_header(&out)?;
    Ok(out)
}

/// `round(c * old / new)` with ties away from zero, clamped to the coefficient
/// range. Exact integer arithmetic.
pub fn requantize_coeff(c: i16, old_step: u16, new_step: u16) -> i16 {
    let num = c as i64 * old_step as i64;
    let den = new_step as i64;
    let mag = (2 * num.abs() + den) / (2 * den);
    let signed = if num < 0 { -mag } else { mag };
    signed.clamp(COEFF_MIN as i64, COEFF_MAX as i64) as i16
}

/// Annex K luminance base table, row-major.
pub const BASE_LUMA_QTABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex K chrominance base table, row-major.
pub const BASE_CHROMA_QTABLE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Scale the Annex K base tables with the widely used libjpeg quality curve
/// (`5000/q` below 50, `200 - 2q` at or above, entries clamped to `[1, 255]`).
/// Returns (luma, chroma) step tables in row-major order.
pub fn tables_for_quality(quality: u8) -> ([u16; 64], [u16; 64]) {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let apply = |base: &[u16; 64]| {
        let mut out = [0u16; 64];
        for (o, &b) in out.iter_mut().zip(base.iter()) {
            *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
        }
        out
    };
    (apply(&BASE_LUMA_QTABLE), apply(&BASE_CHROMA_QTABLE))
}

/// Per-component tables for [`requantize`] at a given quality.
pub fn quality_tables_per_component(quality: u8) -> [[u16; 64]; 3] {
    let (luma, chroma) = tables_for_quality(quality);
    [luma, chroma, chroma]
}
