//! Re-encode a parsed image back to JPEG bytes.
//!
//! The header blob is emitted verbatim except for DQT payloads, which are
//! rewritten from the image's current quantization tables so that
//! re-quantized images stay self-consistent (an unchanged image rewrites the
//! identical bytes). The scan is Huffman-encoded with the stored tables and
//! the final byte is padded with 1 bits, matching mainstream encoders.

use super::huffman::{BitWriter, EncTable, HuffmanSpec};
use super::parse::ZIGZAG;
use super::{JpegError, QuantizedImage, Result, COEFF_MAX, COEFF_MIN};

pub fn serialize_jpeg(img: &QuantizedImage) -> Result<Vec<u8>> {
    let mut out = rewrite_header(img)?;
    out.extend_from_slice(&encode_scan(img)?);
    out.extend_from_slice(&img.trailer);
    Ok(out)
}

/// Copy the header blob, replacing every 8-bit DQT table body with the
/// current table for that slot.
pub(crate) fn rewrite_header(img: &QuantizedImage) -> Result<Vec<u8>> {
    let mut header = img.header.clone();
    let mut pos = 2; // skip SOI
    while pos + 4 <= header.len() {
        if header[pos] != 0xff {
            return Err(JpegError::InconsistentState("corrupt header blob".into()));
        }
        let mut at = pos + 1;
        while at < header.len() && header[at] == 0xff {
            at += 1;
        }
        let marker = header[at];
        if marker == 0x01 {
            pos = at + 1;
            continue;
        }
        let len = ((header[at + 1] as usize) << 8) | header[at + 2] as usize;
        let body = at + 3;
        if marker == 0xdb {
            let mut t = body;
            while t < body + len - 2 {
                let tq = (header[t] & 0xf) as usize;
                for k in 0..64 {
                    header[t + 1 + k] = img.qtables[tq][ZIGZAG[k]] as u8;
                }
                t += 65;
            }
        }
        pos = body + len - 2;
        if marker == 0xda {
            break;
        }
    }
    Ok(header)
}

fn enc_table_for(huffman: &[HuffmanSpec], class: u8, id: u8) -> Result<EncTable> {
    let spec = huffman
        .iter()
        .rev()
        .find(|s| s.class == class && s.id == id)
        .ok_or_else(|| {
            JpegError::InconsistentState(format!("missing Huffman table {class}:{id}"))
        })?;
    Ok(EncTable::build(spec))
}

/// Smallest bit count that can represent `v` in JPEG magnitude coding.
fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

fn magnitude_bits(v: i32, size: u32) -> u32 {
    if v >= 0 {
        v as u32
    } else {
        (v + (1 << size) - 1) as u32
    }
}

fn encode_scan(img: &QuantizedImage) -> Result<Vec<u8>> {
    let hmax = img.components.iter().map(|c| c.h).max().unwrap() as usize;
    let vmax = img.components.iter().map(|c| c.v).max().unwrap() as usize;
    let mcus_x = (img.width as usize).div_ceil(8 * hmax);
    let mcus_y = (img.height as usize).div_ceil(8 * vmax);

    let mut dc_tables = Vec::with_capacity(3);
    let mut ac_tables = Vec::with_capacity(3);
    for comp in &img.components {
        dc_tables.push(enc_table_for(&img.huffman, 0, comp.td)?);
        ac_tables.push(enc_table_for(&img.huffman, 1, comp.ta)?);
    }

    let mut w = BitWriter::new();
    let mut pred = [0i32; 3];
    for my in 0..mcus_y {
        for mx in 0..mcus_x {
            for (ci, comp) in img.components.iter().enumerate() {
                for cy in 0..comp.v as usize {
                    for cx in 0..comp.h as usize {
                        let bx = mx * comp.h as usize + cx;
                        let by = my * comp.v as usize + cy;
                        encode_block(
                            &mut w,
                            &dc_tables[ci],
                            &ac_tables[ci],
                            &mut pred[ci],
                            img.planes[ci].block(bx, by),
                        )?;
                    }
                }
            }
        }
    }
    Ok(w.finish())
}

fn put_symbol(w: &mut BitWriter, table: &EncTable, sym: u8) -> Result<()> {
    let (code, len) = table.lookup(sym).ok_or_else(|| {
        JpegError::InconsistentState(format!("symbol {sym:#04x} has no Huffman code"))
    })?;
    w.put(code as u32, len as u32);
    Ok(())
}

fn encode_block(
    w: &mut BitWriter,
    dc: &EncTable,
    ac: &EncTable,
    pred: &mut i32,
    block: &[i16],
) -> Result<()> {
    for &v in block {
        if v < COEFF_MIN || v > COEFF_MAX {
            return Err(JpegError::InconsistentState("coefficient out of range".into()));
        }
    }
    let diff = block[0] as i32 - *pred;
    *pred = block[0] as i32;
    let size = category(diff);
    put_symbol(w, dc, size as u8)?;
    if size > 0 {
        w.put(magnitude_bits(diff, size), size);
    }

    let mut run = 0u32;
    for k in 1..64 {
        let v = block[ZIGZAG[k]] as i32;
        if v == 0 {
            run += 1;
            continue;
        }
        while run >= 16 {
            put_symbol(w, ac, 0xf0)?; // ZRL
            run -= 16;
        }
        let size = category(v);
        put_symbol(w, ac, ((run as u8) << 4) | size as u8)?;
        w.put(magnitude_bits(v, size), size);
        run = 0;
    }
    if run > 0 {
        put_symbol(w, ac, 0x00)?; // EOB
    }
    Ok(())
}
