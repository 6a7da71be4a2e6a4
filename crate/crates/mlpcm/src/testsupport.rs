//! Synthetic JPEG fixtures shared by unit tests.
//!
//! The Huffman tables are deliberately flat (every symbol at code length 8)
//! rather than the usual optimized tables: they are trivially valid, cover
//! every DC category and (run, size) pair a legal baseline stream can use,
//! and keep the fixture code free of 300-line magic constants. Files built
//! here parse and re-serialize byte-identically.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::jpeg::{
    serialize_jpeg, tables_for_quality, CoeffPlane, Component, HuffmanSpec, QuantizedImage,
    Subsampling, ZIGZAG,
};

fn flat_spec(class: u8, id: u8, values: Vec<u8>) -> HuffmanSpec {
    assert!(values.len() <= 255);
    let mut counts = [0u8; 16];
    counts[7] = values.len() as u8;
    HuffmanSpec { class, id, counts, values }
}

/// DC categories 0..=11 and every AC (run, size) symbol plus EOB and ZRL,
/// all at code length 8, for both table slots.
pub(crate) fn test_huffman() -> Vec<HuffmanSpec> {
    let dc: Vec<u8> = (0..=11).collect();
    let mut ac = vec![0x00u8, 0xf0];
    for run in 0..16u8 {
        for size in 1..=10u8 {
            ac.push((run << 4) | size);
        }
    }
    vec![
        flat_spec(0, 0, dc.clone()),
        flat_spec(1, 0, ac.clone()),
        flat_spec(0, 1, dc),
        flat_spec(1, 1, ac),
    ]
}

fn push_segment(out: &mut Vec<u8>, marker: u8, body: &[u8]) {
    out.push(0xff);
    out.push(marker);
    let len = (body.len() + 2) as u16;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(body);
}

fn header_bytes(
    width: u16,
    height: u16,
    subsampling: Subsampling,
    qtables: &[[u16; 64]; 2],
) -> Vec<u8> {
    let mut out = vec![0xff, 0xd8];
    for (tq, table) in qtables.iter().enumerate() {
        let mut body = vec![tq as u8];
        for k in 0..64 {
            body.push(table[ZIGZAG[k]] as u8);
        }
        push_segment(&mut out, 0xdb, &body);
    }
    let luma_hv = match subsampling {
        Subsampling::Ycbcr444 => 0x11,
        Subsampling::Ycbcr420 => 0x22,
    };
    let mut sof = vec![8];
    sof.extend_from_slice(&height.to_be_bytes());
    sof.extend_from_slice(&width.to_be_bytes());
    sof.extend_from_slice(&[3, 1, luma_hv, 0, 2, 0x11, 1, 3, 0x11, 1]);
    push_segment(&mut out, 0xc0, &sof);
    for spec in test_huffman() {
        let mut body = vec![(spec.class << 4) | spec.id];
        body.extend_from_slice(&spec.counts);
        body.extend_from_slice(&spec.values);
        push_segment(&mut out, 0xc4, &body);
    }
    push_segment(&mut out, 0xda, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);
    out
}

/// Random sparse coefficient planes under a valid header; serializes to a
/// real baseline file and parses back equal.
pub(crate) fn synth_image(
    rng: &mut ChaCha8Rng,
    width: u16,
    height: u16,
    subsampling: Subsampling,
    quality: u8,
) -> QuantizedImage {
    let (luma_q, chroma_q) = tables_for_quality(quality);
    let (mcus_x, mcus_y, lh) = match subsampling {
        Subsampling::Ycbcr444 => {
            ((width as usize).div_ceil(8), (height as usize).div_ceil(8), 1)
        }
        Subsampling::Ycbcr420 => {
            ((width as usize).div_ceil(16), (height as usize).div_ceil(16), 2)
        }
    };
    let dims = [(mcus_x * lh, mcus_y * lh), (mcus_x, mcus_y), (mcus_x, mcus_y)];
    let planes: [CoeffPlane; 3] = dims.map(|(bw, bh)| {
        let mut p = CoeffPlane::zeroed(bw, bh);
        for by in 0..bh {
            for bx in 0..bw {
                let block = p.block_mut(bx, by);
                block[0] = rng.gen_range(-300..=300);
                for k in 1..64 {
                    // Energy concentrates at low frequencies, like real scans.
                    if rng.gen_bool(0.8 / (1.0 + k as f64 * 0.4)) {
                        block[ZIGZAG[k]] = rng.gen_range(-60..=60);
                    }
                }
            }
        }
        p
    });
    let hv = if subsampling == Subsampling::Ycbcr420 { 2 } else { 1 };
    let components = [
        Component { id: 1, h: hv, v: hv, tq: 0, td: 0, ta: 0 },
        Component { id: 2, h: 1, v: 1, tq: 1, td: 1, ta: 1 },
        Component { id: 3, h: 1, v: 1, tq: 1, td: 1, ta: 1 },
    ];
    let mut qtables = [[0u16; 64]; 4];
    qtables[0] = luma_q;
    qtables[1] = chroma_q;
    QuantizedImage {
        width: width as u32,
        height: height as u32,
        subsampling,
        components,
        planes,
        qtables,
        huffman: test_huffman(),
        header: header_bytes(width, height, subsampling, &[luma_q, chroma_q]),
        trailer: vec![0xff, 0xd9],
    }
}

/// A full synthetic file: `serialize_jpeg` of [`synth_image`].
pub(crate) fn synth_jpeg(
    rng: &mut ChaCha8Rng,
    width: u16,
    height: u16,
    subsampling: Subsampling,
    quality: u8,
) -> Vec<u8> {
    serialize_jpeg(&synth_image(rng, width, height, subsampling, quality)).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jpeg::parse_jpeg;
    use rand::SeedableRng;

    #[test]
    fn synthetic_files_parse_back_to_the_same_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for (w, h, sub) in [
            (8u16, 8u16, Subsampling::Ycbcr444),
            (24, 17, Subsampling::Ycbcr444),
            (33, 50, Subsampling::Ycbcr420),
        ] {
            let img = synth_image(&mut rng, w, h, sub, 75);
            let bytes = serialize_jpeg(&img).unwrap();
            let back = parse_jpeg(&bytes).unwrap();
            assert_eq!(back.planes, img.planes);
            assert_eq!(back.qtables, img.qtables);
            assert_eq!(back.width, img.width);
            assert_eq!(back.subsampling, img.subsampling);
            // The file is stable under a second parse/serialize cycle.
            assert_eq!(serialize_jpeg(&back).unwrap(), bytes);
        }
    }
}
