//! Marker walk and scan decode for baseline files.

use super::huffman::{BitReader, DecTable, HuffmanSpec};
use super::{
    Component, CoeffPlane, JpegError, QuantizedImage, Result, Subsampling, COEFF_MAX, COEFF_MIN,
};

/// Zigzag scan: index = scan position, value = natural (row-major) position.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, //
    17, 24, 32, 25, 18, 11, 4, 5, //
    12, 19, 26, 33, 40, 48, 41, 34, //
    27, 20, 13, 6, 7, 14, 21, 28, //
    35, 42, 49, 56, 57, 50, 43, 36, //
    29, 22, 15, 23, 30, 37, 44, 51, //
    58, 59, 52, 45, 38, 31, 39, 46, //
    53, 60, 61, 54, 47, 55, 62, 63,
];

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8> {
        let b = self
            .data
            .get(self.pos)
            .copied()
            .ok_or_else(|| JpegError::MalformedStream("unexpected end of file".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(((self.u8()? as u16) << 8) | self.u8()? as u16)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(JpegError::MalformedStream("segment overruns file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

struct Frame {
    width: u32,
    height: u32,
    components: [Component; 3],
    subsampling: Subsampling,
}

/// Everything the marker segments up to and including SOS declare. The
/// container decoder re-parses a stored header blob through this to rebuild
/// image metadata without any scan data present.
pub(crate) struct HeaderInfo {
    pub width: u32,
    pub height: u32,
    pub subsampling: Subsampling,
    pub components: [Component; 3],
    pub qtables: [[u16; 64]; 4],
    pub q_defined: [bool; 4],
    pub huffman: Vec<HuffmanSpec>,
    /// Offset of the first entropy-coded scan byte; equals the header blob
    /// length.
    pub scan_start: usize,
}

/// Parse a baseline JPEG into coefficient planes plus verbatim header and
/// trailer bytes.
pub fn parse_jpeg(data: &[u8]) -> Result<QuantizedImage> {
    let info = parse_header(data)?;
    decode_scan(data, info)
}

/// Walk the marker segments up to SOS without touching scan data.
pub(crate) fn parse_header(data: &[u8]) -> Result<HeaderInfo> {
    if data.len() < 4 || data[0] != 0xff || data[1] != 0xd8 {
        return Err(JpegError::MalformedStream("missing SOI marker".into()));
    }
    let mut c = Cursor { data, pos: 2 };
    let mut qtables = [[0u16; 64]; 4];
    let mut q_defined = [false; 4];
    let mut huffman: Vec<HuffmanSpec> = Vec::new();
    let mut frame: Option<Frame> = None;

    // ---- marker segments up to SOS -------------------------------------
    loop {
        // Markers may be preceded by fill bytes.
        let mut m = c.u8()?;
        if m != 0xff {
            return Err(JpegError::MalformedStream(format!(
                "expected marker, found byte {m:#04x}"
            )));
        }
        while m == 0xff {
            m = c.u8()?;
        }
        match m {
            0xc0 => {
                let seg = read_segment(&mut c)?;
                if frame.is_some() {
                    return Err(JpegError::MalformedStream("duplicate SOF marker".into()));
                }
                frame = Some(parse_sof(seg)?);
            }
            0xc1 => return unsupported("extended sequential DCT"),
            0xc2 => return unsupported("progressive DCT"),
            0xc3 | 0xc7 | 0xcb | 0xcf => return unsupported("lossless JPEG"),
            0xc5 | 0xc6 => return unsupported("differential sequential/progressive DCT"),
            0xc9 | 0xca | 0xcd | 0xce => return unsupported("arithmetic-coded JPEG"),
            0xcc => return unsupported("arithmetic conditioning tables"),
            0xc4 => parse_dht(read_segment(&mut c)?, &mut huffman)?,
            0xdb => parse_dqt(read_segment(&mut c)?, &mut qtables, &mut q_defined)?,
            0xdd => {
                let seg = read_segment(&mut c)?;
                if seg.len() != 2 {
                    return Err(JpegError::MalformedStream("bad DRI length".into()));
                }
                if u16::from_be_bytes([seg[0], seg[1]]) != 0 {
                    return unsupported("restart intervals");
                }
            }
            0xdc => return unsupported("DNL segment"),
            0xda => {
                let seg = read_segment(&mut c)?;
                let frame = frame.as_ref().ok_or_else(|| {
                    JpegError::MalformedStream("SOS before SOF".into())
                })?;
                let components = parse_sos(seg, &frame.components)?;
                return Ok(HeaderInfo {
                    width: frame.width,
                    height: frame.height,
                    subsampling: frame.subsampling,
                    components,
                    qtables,
                    q_defined,
                    huffman,
                    scan_start: c.pos,
                });
            }
            0xd9 => return Err(JpegError::MalformedStream("EOI before scan data".into())),
            0xd0..=0xd7 => {
                return Err(JpegError::MalformedStream("restart marker outside scan".into()))
            }
            0x01 => {} // TEM, standalone
            // APPn, COM and anything else with a length field is carried
            // verbatim in the header blob.
            _ => {
                read_segment(&mut c)?;
            }
        }
    }
}

fn unsupported<T>(what: &str) -> Result<T> {
    Err(JpegError::UnsupportedFeature(what.into()))
}

fn read_segment<'a>(c: &mut Cursor<'a>) -> Result<&'a [u8]> {
    let len = c.u16()? as usize;
    if len < 2 {
        return Err(JpegError::MalformedStream("segment length below 2".into()));
    }
    c.take(len - 2)
}

fn parse_sof(seg: &[u8]) -> Result<Frame> {
    if seg.len() < 6 {
        return Err(JpegError::MalformedStream("truncated SOF".into()));
    }
    if seg[0] != 8 {
        return unsupported("sample precision other than 8 bits");
    }
    let height = u16::from_be_bytes([seg[1], seg[2]]) as u32;
    let width = u16::from_be_bytes([seg[3], seg[4]]) as u32;
    if width == 0 || height == 0 {
        return Err(JpegError::MalformedStream("zero image dimension".into()));
    }
    let nf = seg[5] as usize;
    if nf != 3 {
        return unsupported("component count other than 3 (grayscale/CMYK)");
    }
    if seg.len() != 6 + 3 * nf {
        return Err(JpegError::MalformedStream("bad SOF length".into()));
    }
    let mut components = [Component { id: 0, h: 0, v: 0, tq: 0, td: 0, ta: 0 }; 3];
    for (i, comp) in components.iter_mut().enumerate() {
        let at = 6 + 3 * i;
        comp.id = seg[at];
        comp.h = seg[at + 1] >> 4;
        comp.v = seg[at + 1] & 0xf;
        comp.tq = seg[at + 2];
        if comp.tq > 3 {
            return Err(JpegError::MalformedStream("quant table slot above 3".into()));
        }
    }
    let hv = |c: &Component| (c.h, c.v);
    let subsampling = match (hv(&components[0]), hv(&components[1]), hv(&components[2])) {
        ((1, 1), (1, 1), (1, 1)) => Subsampling::Ycbcr444,
        ((2, 2), (1, 1), (1, 1)) => Subsampling::Ycbcr420,
        _ => return unsupported("subsampling other than 4:4:4 or 4:2:0"),
    };
    Ok(Frame { width, height, components, subsampling })
}

fn parse_dqt(seg: &[u8], tables: &mut [[u16; 64]; 4], defined: &mut [bool; 4]) -> Result<()> {
    let mut at = 0;
    while at < seg.len() {
        let pq = seg[at] >> 4;
        let tq = (seg[at] & 0xf) as usize;
        if pq != 0 {
            return unsupported("16-bit quantization table");
        }
        if tq > 3 {
            return Err(JpegError::MalformedStream("quant table slot above 3".into()));
        }
        if at + 65 > seg.len() {
            return Err(JpegError::MalformedStream("truncated DQT".into()));
        }
        for k in 0..64 {
            let v = seg[at + 1 + k] as u16;
            if v == 0 {
                return Err(JpegError::MalformedStream("zero quantization step".into()));
            }
            tables[tq][ZIGZAG[k]] = v;
        }
        defined[tq] = true;
        at += 65;
    }
    Ok(())
}

fn parse_dht(seg: &[u8], out: &mut Vec<HuffmanSpec>) -> Result<()> {
    let mut at = 0;
    while at < seg.len() {
        if at + 17 > seg.len() {
            return Err(JpegError::MalformedStream("truncated DHT".into()));
        }
        let class = seg[at] >> 4;
        let id = seg[at] & 0xf;
        if class > 1 || id > 3 {
            return Err(JpegError::MalformedStream("bad Huffman table class/slot".into()));
        }
        let mut counts = [0u8; 16];
        counts.copy_from_slice(&seg[at + 1..at + 17]);
        let total: usize = counts.iter().map(|&c| c as usize).sum();
        if at + 17 + total > seg.len() {
            return Err(JpegError::MalformedStream("truncated DHT values".into()));
        }
        let values = seg[at + 17..at + 17 + total].to_vec();
        out.push(HuffmanSpec { class, id, counts, values });
        at += 17 + total;
    }
    Ok(())
}

/// Fill Td/Ta into the frame components from the SOS header, preserving the
/// frame's component order (which is also the interleave order).
fn parse_sos(seg: &[u8], frame_comps: &[Component; 3]) -> Result<[Component; 3]> {
    if seg.len() < 6 {
        return Err(JpegError::MalformedStream("truncated SOS".into()));
    }
    let ns = seg[0] as usize;
    if ns != 3 {
        return unsupported("scans that do not interleave all three components");
    }
    if seg.len() != 1 + 2 * ns + 3 {
        return Err(JpegError::MalformedStream("bad SOS length".into()));
    }
    let mut comps = *frame_comps;
    let mut seen = [false; 3];
    for i in 0..ns {
        let cs = seg[1 + 2 * i];
        let idx = comps
            .iter()
            .position(|c| c.id == cs)
            .ok_or_else(|| JpegError::MalformedStream("SOS names unknown component".into()))?;
        if seen[idx] {
            return Err(JpegError::MalformedStream("component repeated in SOS".into()));
        }
        seen[idx] = true;
        comps[idx].td = seg[2 + 2 * i] >> 4;
        comps[idx].ta = seg[2 + 2 * i] & 0xf;
    }
    let (ss, se, ahal) = (seg[1 + 2 * ns], seg[2 + 2 * ns], seg[3 + 2 * ns]);
    if ss != 0 || se != 63 || ahal != 0 {
        return Err(JpegError::MalformedStream(
            "baseline scan must cover the full spectral range".into(),
        ));
    }
    Ok(comps)
}

fn dec_table_for(huffman: &[HuffmanSpec], class: u8, id: u8) -> Result<DecTable> {
    // Later DHT definitions override earlier ones.
    let spec = huffman
        .iter()
        .rev()
        .find(|s| s.class == class && s.id == id)
        .ok_or_else(|| {
            JpegError::MalformedStream(format!(
                "scan references undefined Huffman table {class}:{id}"
            ))
        })?;
    DecTable::build(spec)
}

fn extend(v: u32, size: u32) -> i32 {
    if (v as i32) < (1 << (size - 1)) {
        v as i32 - (1 << size) + 1
    } else {
        v as i32
    }
}

fn decode_scan(data: &[u8], info: HeaderInfo) -> Result<QuantizedImage> {
    let hmax = info.components.iter().map(|c| c.h).max().unwrap() as usize;
    let vmax = info.components.iter().map(|c| c.v).max().unwrap() as usize;
    let mcus_x = (info.width as usize).div_ceil(8 * hmax);
    let mcus_y = (info.height as usize).div_ceil(8 * vmax);

    let mut planes = Vec::with_capacity(3);
    let mut dc_tables = Vec::with_capacity(3);
    let mut ac_tables = Vec::with_capacity(3);
    for comp in &info.components {
        if !info.q_defined[comp.tq as usize] {
            return Err(JpegError::MalformedStream(format!(
                "component references undefined quant table {}",
                comp.tq
            )));
        }
        planes.push(CoeffPlane::zeroed(mcus_x * comp.h as usize, mcus_y * comp.v as usize));
        dc_tables.push(dec_table_for(&info.huffman, 0, comp.td)?);
        ac_tables.push(dec_table_for(&info.huffman, 1, comp.ta)?);
    }

    let mut r = BitReader::new(&data[info.scan_start..]);
    let mut pred = [0i32; 3];
    for my in 0..mcus_y {
        for mx in 0..mcus_x {
            for (ci, comp) in info.components.iter().enumerate() {
                for cy in 0..comp.v as usize {
                    for cx in 0..comp.h as usize {
                        let bx = mx * comp.h as usize + cx;
                        let by = my * comp.v as usize + cy;
                        decode_block(
                            &mut r,
                            &dc_tables[ci],
                            &ac_tables[ci],
                            &mut pred[ci],
                            planes[ci].block_mut(bx, by),
                        )?;
                    }
                }
            }
        }
    }

    let scan_end = info.scan_start + r.consumed();
    if scan_end + 2 > data.len() || data[scan_end] != 0xff {
        return Err(JpegError::MalformedStream("scan not terminated by a marker".into()));
    }

    let planes: [CoeffPlane; 3] = planes.try_into().unwrap();
    Ok(QuantizedImage {
        width: info.width,
        height: info.height,
        subsampling: info.subsampling,
        components: info.components,
        planes,
        qtables: info.qtables,
        huffman: info.huffman,
        header: data[..info.scan_start].to_vec(),
        trailer: data[scan_end..].to_vec(),
    })
}

fn decode_block(
    r: &mut BitReader<'_>,
    dc: &DecTable,
    ac: &DecTable,
    pred: &mut i32,
    block: &mut [i16],
) -> Result<()> {
    let size = dc.decode(r)? as u32;
    if size > 11 {
        return Err(JpegError::MalformedStream("DC category above 11".into()));
    }
    let diff = if size == 0 { 0 } else { extend(r.bits(size)?, size) };
    *pred += diff;
    if *pred < COEFF_MIN as i32 || *pred > COEFF_MAX as i32 {
        return Err(JpegError::MalformedStream("DC coefficient out of range".into()));
    }
    block[0] = *pred as i16;

    let mut k = 1;
    while k < 64 {
        let sym = ac.decode(r)?;
        let run = (sym >> 4) as usize;
        let size = (sym & 0xf) as u32;
        if size == 0 {
            if sym == 0x00 {
                break; // EOB
            }
            if sym == 0xf0 {
                k += 16; // ZRL
                if k > 64 {
                    return Err(JpegError::MalformedStream("ZRL overruns block".into()));
                }
                continue;
            }
            return Err(JpegError::MalformedStream("invalid AC symbol".into()));
        }
        if size > 10 {
            return Err(JpegError::MalformedStream("AC category above 10".into()));
        }
        k += run;
        if k > 63 {
            return Err(JpegError::MalformedStream("AC run overruns block".into()));
        }
        block[ZIGZAG[k]] = extend(r.bits(size)?, size) as i16;
        k += 1;
    }
    Ok(())
}
