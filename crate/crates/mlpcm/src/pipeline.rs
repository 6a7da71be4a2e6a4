//! Container format, decode schedule, and the end-to-end codec.
//!
//! A container binds one JPEG to one exact model. Layout (all integers
//! little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MLPM"
//! 4       2     version (1)
//! 6       1     subsampling (0 = 4:4:4, 1 = 4:2:0)
//! 7       1     variant code
//! 8       2     feature width m
//! 10      8     model digest
//! 18      4     image width          22   4  image height
//! 26      4     luma blocks_w        30   4  luma blocks_h
//! 34      4     chroma blocks_w      38   4  chroma blocks_h
//! 42      2     section count
//! 44      ...   sections: id u8, length u32, bytes
//! end-4   4     CRC32 of everything before it
//! ```
//!
//! Every independently decodable unit gets its own section: the verbatim
//! header/trailer blobs, one stream per hyper-latent, the luma row-1 stream,
//! one stream per luma lane, the chroma anchor and non-anchor streams, and
//! an optional byte patch for files whose scan our serializer would pad
//! differently. Separate sections mean luma/chroma (and the three lanes
//! within a luma step) decode concurrently without interleaving hazards; the
//! parallelism is semantically invisible, so any worker count produces
//! identical output.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::autodiff::{raw_to_mu_b, DirectEngine, Engine, Tensor};
use crate::entropy::factorized::FactorizedTables;
use crate::entropy::{GaussianParams, GaussianTables};
use crate::jpeg::{
    parse_header, parse_jpeg, requantize, serialize_jpeg, CoeffPlane, JpegError, QuantizedImage,
    Subsampling,
};
use crate::layout::{
    channels_to_blocks, chroma_groups, chroma_stacked, column_offset, luma_layout, luma_restore,
    ChannelTensor, ChromaGroups, LumaLayout, COLUMN_WIDTHS, FREQ_CHANNELS,
};
use crate::math::crc32;
use crate::nets::{
    ckbd_is_anchor, ckbd_masked_anchor, context_input, crop_spatial, pad_spatial, Model, Variant,
    HYPER_PAD,
};
use crate::rangecoder::{RangeDecoder, RangeEncoder, RangeError};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Jpeg(#[from] JpegError),
    /// The container was produced under different weights or architecture.
    #[error("model mismatch: container needs digest {want:#018x}, model has {have:#018x}")]
    ManifestMismatch { want: u64, have: u64 },
    /// Structurally unusable container or stream data.
    #[error("corrupt container: {0}")]
    CorruptStream(String),
    /// Structure parsed but the trailing CRC32 does not match.
    #[error("container checksum mismatch")]
    ChecksumMismatch,
}

impl From<RangeError> for CodecError {
    fn from(e: RangeError) -> Self {
        CodecError::CorruptStream(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CodecError>;

const MAGIC: [u8; 4] = *b"MLPM";
const VERSION: u16 = 1;

/// Section ids. Each id appears at most once per container.
pub const SEC_HEADER: u8 = 0;
pub const SEC_TRAILER: u8 = 1;
pub const SEC_Z_Y: u8 = 2;
pub const SEC_Y_ROW1: u8 = 3;
pub const SEC_Y_LANE0: u8 = 4; // lanes 0..3 occupy 4..=6
pub const SEC_Z_C: u8 = 7;
pub const SEC_ANCHOR: u8 = 8;
pub const SEC_NON_ANCHOR: u8 = 9;
pub const SEC_PATCH: u8 = 10;

const PATCH_FULL: u8 = 0;
const PATCH_SPARSE: u8 = 1;

// ---------------------------------------------------------------------------
// Decode schedule
// ---------------------------------------------------------------------------

/// One conditioning input of a lane task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dep {
    /// The hyper tensor, available before any coefficient step.
    Hyper,
    /// A previously decoded slice `(row, col)`, 0-based.
    Slice(usize, usize),
}

/// Work assigned to one lane within a step: which slices it decodes, from
/// which section, and the symbol slices its parameters (transitively) depend
/// on.
#[derive(Debug, Clone)]
pub struct LaneTask {
    pub lane: usize,
    pub stream: u8,
    pub slices: Vec<(usize, usize)>,
    pub deps: Vec<Dep>,
}

/// Tasks that may run concurrently; a barrier follows every step.
#[derive(Debug, Clone)]
pub struct ScheduleStep {
    pub tasks: Vec<LaneTask>,
}

/// The complete decode-side dependency structure of a variant.
#[derive(Debug, Clone)]
pub struct DecodeSchedule {
    pub y_steps: Vec<ScheduleStep>,
    pub c_passes: usize,
}

/// Explicit step list the luma decoder executes; also the input of the
/// latency analyzer.
pub fn decode_schedule(variant: Variant) -> DecodeSchedule {
    let mut y_steps = Vec::new();
    match variant {
        Variant::NoContext => {
            let tasks = (0..4)
                .map(|row| LaneTask {
                    lane: row,
                    stream: if row == 0 { SEC_Y_ROW1 } else { SEC_Y_LANE0 + row as u8 - 1 },
                    slices: (0..9).map(|col| (row, col)).collect(),
                    deps: vec![Dep::Hyper],
                })
                .collect();
            y_steps.push(ScheduleStep { tasks });
        }
        Variant::FullParallelPpcm => {
            for col in 0..9 {
                let mut deps = vec![Dep::Hyper];
                if col > 0 {
                    deps.extend((0..4).map(|row| Dep::Slice(row, col - 1)));
                }
                y_steps.push(ScheduleStep {
                    tasks: vec![LaneTask {
                        lane: 0,
                        stream: SEC_Y_ROW1,
                        slices: (0..4).map(|row| (row, col)).collect(),
                        deps,
                    }],
                });
            }
        }
        _ => {
            for col in 0..9 {
                let mut deps = vec![Dep::Hyper];
                deps.extend((0..col).map(|c| Dep::Slice(0, c)));
                y_steps.push(ScheduleStep {
                    tasks: vec![LaneTask {
                        lane: 0,
                        stream: SEC_Y_ROW1,
                        slices: vec![(0, col)],
                        deps,
                    }],
                });
            }
            let sched = crate::nets::lane_schedule(variant != Variant::NoShift);
            for k in 0..9 {
                // The prior folds in h and the whole first row; each lane
                // additionally sees the previous step's triple.
                let mut deps = vec![Dep::Hyper];
                deps.extend((0..9).map(|c| Dep::Slice(0, c)));
                if k > 0 {
                    deps.extend((0..3).map(|l| Dep::Slice(1 + l, sched[k - 1][l])));
                }
                let tasks = (0..3)
                    .map(|lane| LaneTask {
                        lane,
                        stream: SEC_Y_LANE0 + lane as u8,
                        slices: vec![(1 + lane, sched[k][lane])],
                        deps: deps.clone(),
                    })
                    .collect();
                y_steps.push(ScheduleStep { tasks });
            }
        }
    }
    let c_passes = if variant == Variant::NoCccm { 1 } else { 2 };
    DecodeSchedule { y_steps, c_passes }
}

/// Check that every dependency is produced by a strictly earlier step and
/// that the steps produce each of the 36 slices exactly once.
pub fn validate_schedule(s: &DecodeSchedule) -> std::result::Result<(), String> {
    let mut produced = std::collections::HashSet::new();
    for (i, step) in s.y_steps.iter().enumerate() {
        for task in &step.tasks {
            for dep in &task.deps {
                if let Dep::Slice(r, c) = dep {
                    if !produced.contains(&(*r, *c)) {
                        return Err(format!(
                            "step {i} lane {} needs slice ({r}, {c}) before it is decoded",
                            task.lane
                        ));
                    }
                }
            }
        }
        for task in &step.tasks {
            for &slice in &task.slices {
                if !produced.insert(slice) {
                    return Err(format!("slice {slice:?} decoded twice"));
                }
            }
        }
    }
    if produced.len() != 36 {
        return Err(format!("{} of 36 slices decoded", produced.len()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Container reader/writer
// ---------------------------------------------------------------------------

fn subsampling_code(s: Subsampling) -> u8 {
    match s {
        Subsampling::Ycbcr444 => 0,
        Subsampling::Ycbcr420 => 1,
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(CodecError::CorruptStream("truncated container".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Container<'a> {
    subsampling: Subsampling,
    variant_code: u8,
    m: usize,
    digest: u64,
    width: u32,
    height: u32,
    /// (blocks_w, blocks_h) of the luma / chroma planes.
    y_grid: (usize, usize),
    c_grid: (usize, usize),
    sections: Vec<(u8, &'a [u8])>,
}

impl<'a> Container<'a> {
    fn parse(data: &'a [u8]) -> Result<Container<'a>> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CodecError::CorruptStream("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(CodecError::CorruptStream(format!(
                "unsupported container version {version}"
            )));
        }
        let subsampling = match r.u8()? {
            0 => Subsampling::Ycbcr444,
            1 => Subsampling::Ycbcr420,
            v => return Err(CodecError::CorruptStream(format!("bad subsampling code {v}"))),
        };
        let variant_code = r.u8()?;
        let m = r.u16()? as usize;
        let digest = r.u64()?;
        let width = r.u32()?;
        let height = r.u32()?;
        let mut grid = || -> Result<(usize, usize)> {
            let w = r.u32()? as usize;
            let h = r.u32()? as usize;
            if w == 0 || h == 0 || w > 1 << 16 || h > 1 << 16 {
                return Err(CodecError::CorruptStream(format!("implausible block grid {w}x{h}")));
            }
            Ok((w, h))
        };
        let y_grid = grid()?;
        let c_grid = grid()?;
        let count = r.u16()?;
        let mut sections: Vec<(u8, &[u8])> = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id = r.u8()?;
            let len = r.u32()? as usize;
            let bytes = r.take(len)?;
            if sections.iter().any(|&(i, _)| i == id) {
                return Err(CodecError::CorruptStream(format!("duplicate section {id}")));
            }
            if id > SEC_PATCH {
                return Err(CodecError::CorruptStream(format!("unknown section {id}")));
            }
            sections.push((id, bytes));
        }
        let crc = r.u32()?;
        if r.pos != data.len() {
            return Err(CodecError::CorruptStream("trailing bytes after checksum".into()));
        }
        if crc != crc32(&data[..data.len() - 4]) {
            return Err(CodecError::ChecksumMismatch);
        }
        Ok(Container {
            subsampling,
            variant_code,
            m,
            digest,
            width,
            height,
            y_grid,
            c_grid,
            sections,
        })
    }

    fn section(&self, id: u8) -> Option<&'a [u8]> {
        self.sections.iter().find(|&&(i, _)| i == id).map(|&(_, b)| b)
    }

    fn require(&self, id: u8) -> Result<&'a [u8]> {
        self.section(id)
            .ok_or_else(|| CodecError::CorruptStream(format!("missing section {id}")))
    }
}

/// Parsed container metadata, exposed for tooling and reports.
#[derive(Debug, Clone)]
pub struct ContainerInfo {
    pub subsampling: Subsampling,
    pub variant_code: u8,
    pub m: usize,
    pub digest: u64,
    pub width: u32,
    pub height: u32,
    pub y_grid: (usize, usize),
    pub c_grid: (usize, usize),
    /// (section id, byte length) in file order.
    pub sections: Vec<(u8, usize)>,
}

impl ContainerInfo {
    /// Total payload bytes of the listed section ids.
    pub fn section_bytes(&self, ids: &[u8]) -> usize {
        self.sections.iter().filter(|(id, _)| ids.contains(id)).map(|&(_, n)| n).sum()
    }
}

/// Structural parse without a model (sizes, digest, geometry).
pub fn inspect(container: &[u8]) -> Result<ContainerInfo> {
    let c = Container::parse(container)?;
    Ok(ContainerInfo {
        subsampling: c.subsampling,
        variant_code: c.variant_code,
        m: c.m,
        digest: c.digest,
        width: c.width,
        height: c.height,
        y_grid: c.y_grid,
        c_grid: c.c_grid,
        sections: c.sections.iter().map(|&(id, b)| (id, b.len())).collect(),
    })
}

fn assemble(model: &Model, img: &QuantizedImage, sections: &[(u8, Vec<u8>)]) -> Vec<u8> {
    assert!(model.m <= u16::MAX as usize);
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(subsampling_code(img.subsampling));
    out.push(model.variant.code());
    out.extend_from_slice(&(model.m as u16).to_le_bytes());
    out.extend_from_slice(&model.digest().to_le_bytes());
    out.extend_from_slice(&img.width.to_le_bytes());
    out.extend_from_slice(&img.height.to_le_bytes());
    for p in [&img.planes[0], &img.planes[1]] {
        out.extend_from_slice(&(p.blocks_w as u32).to_le_bytes());
        out.extend_from_slice(&(p.blocks_h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(sections.len() as u16).to_le_bytes());
    for (id, bytes) in sections {
        out.push(*id);
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

// ---------------------------------------------------------------------------
// Shared coding helpers
// ---------------------------------------------------------------------------

fn even(x: usize) -> usize {
    x + x % 2
}

fn padded(x: usize) -> usize {
    x.next_multiple_of(HYPER_PAD)
}

/// Round a raw latent to integers. The top negative value is excluded so the
/// 31-bit escape magnitude can always carry the symbol.
pub(crate) fn round_latent(raw: &Tensor) -> (Vec<i32>, Tensor) {
    let ints: Vec<i32> = raw.data.iter().map(|&v| (v.round() as i32).max(-i32::MAX)).collect();
    let t = Tensor::from_vec(raw.shape, ints.iter().map(|&v| v as f32).collect());
    (ints, t)
}

fn encode_z(values: &[i32], channels: usize, tables: &FactorizedTables) -> Vec<u8> {
    let per = values.len() / channels;
    let mut enc = RangeEncoder::new();
    for (i, &v) in values.iter().enumerate() {
        tables.encode(&mut enc, i / per, v);
    }
    enc.finish()
}

fn decode_z(
    bytes: &[u8],
    channels: usize,
    h: usize,
    w: usize,
    tables: &FactorizedTables,
) -> Result<Tensor> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut data = Vec::with_capacity(channels * h * w);
    for c in 0..channels {
        for _ in 0..h * w {
            data.push(tables.decode(&mut dec, c)? as f32);
        }
    }
    Ok(Tensor::from_vec([1, channels, h, w], data))
}

/// Cells selected by `parity`: all (None), anchor (Some(true)) or non-anchor
/// (Some(false)) checkerboard positions.
fn cell_selected(i: usize, h: usize, w: usize, parity: Option<bool>) -> bool {
    match parity {
        None => true,
        Some(anchor) => {
            let y = (i / w) % h;
            let x = i % w;
            ckbd_is_anchor(y, x) == anchor
        }
    }
}

fn encode_symbols(
    enc: &mut RangeEncoder,
    tables: &GaussianTables,
    sym: &ChannelTensor,
    mu: &Tensor,
    b: &Tensor,
    parity: Option<bool>,
) {
    assert_eq!(sym.data.len(), mu.numel());
    assert_eq!(sym.data.len(), b.numel());
    for (i, &s) in sym.data.iter().enumerate() {
        if !cell_selected(i, sym.h, sym.w, parity) {
            continue;
        }
        let (m, bb) = raw_to_mu_b(mu.data[i], b.data[i]);
        tables.encode(enc, s as i32, GaussianParams::from_raw(m, bb));
    }
}

fn decode_symbols(
    dec: &mut RangeDecoder,
    tables: &GaussianTables,
    mu: &Tensor,
    b: &Tensor,
    parity: Option<bool>,
    out: &mut ChannelTensor,
) -> Result<()> {
    assert_eq!(out.data.len(), mu.numel());
    assert_eq!(out.data.len(), b.numel());
    let (h, w) = (out.h, out.w);
    for i in 0..out.data.len() {
        if !cell_selected(i, h, w, parity) {
            continue;
        }
        let (m, bb) = raw_to_mu_b(mu.data[i], b.data[i]);
        let v = tables.decode(dec, GaussianParams::from_raw(m, bb))?;
        out.data[i] = v as i16;
    }
    Ok(())
}

fn write_slice(target: &mut ChannelTensor, col: usize, t: &ChannelTensor) {
    let off = column_offset(col);
    for c in 0..t.c {
        for y in 0..t.h {
            for x in 0..t.w {
                target.set(off + c, y, x, t.at(c, y, x));
            }
        }
    }
}

/// Decode worker unit: decodes some slices, returns them keyed by (row, col).
type LaneResult = Vec<(usize, usize, ChannelTensor)>;
type TaskFn<'x> = Box<dyn FnOnce() -> Result<LaneResult> + Send + 'x>;

/// Run one step's tasks on up to `workers` threads. Every task owns its own
/// decoder state, so the partition cannot change any decoded value; the
/// barrier is the function return.
fn run_tasks(tasks: Vec<TaskFn<'_>>, workers: usize) -> Result<LaneResult> {
    let workers = workers.max(1).min(tasks.len().max(1));
    if workers == 1 {
        let mut out = Vec::new();
        for t in tasks {
            out.extend(t()?);
        }
        return Ok(out);
    }
    let mut groups: Vec<Vec<TaskFn>> = (0..workers).map(|_| Vec::new()).collect();
    for (i, t) in tasks.into_iter().enumerate() {
        groups[i % workers].push(t);
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = groups
            .into_iter()
            .map(|g| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for t in g {
                        out.extend(t()?);
                    }
                    Ok::<_, CodecError>(out)
                })
            })
            .collect();
        let mut out = Vec::new();
        for h in handles {
            out.extend(h.join().expect("decode worker panicked")?);
        }
        Ok(out)
    })
}

// ---------------------------------------------------------------------------
// Luma path
// ---------------------------------------------------------------------------

/// Map each slice to the section its symbols live in.
fn stream_routes(variant: Variant) -> BTreeMap<(usize, usize), u8> {
    let mut map = BTreeMap::new();
    for step in decode_schedule(variant).y_steps {
        for task in step.tasks {
            for slice in task.slices {
                map.insert(slice, task.stream);
            }
        }
    }
    map
}

fn y_factorized(model: &Model) -> FactorizedTables {
    FactorizedTables::from_flat(&model.store.tensor(model.y_prior_id()).data, model.m)
}

fn c_factorized(model: &Model) -> FactorizedTables {
    FactorizedTables::from_flat(&model.store.tensor(model.c_prior_id()).data, model.m)
}

fn encode_y(model: &Model, tables: &GaussianTables, plane: &CoeffPlane) -> Vec<(u8, Vec<u8>)> {
    let layout = luma_layout(plane);
    let (rh, rw) = (layout.rows[0].h, layout.rows[0].w);
    let mut e = DirectEngine::new(&model.store);
    let xv = e.input(pad_spatial(&context_input(&layout.stacked()), HYPER_PAD));
    let zr = model.y_encode(&mut e, xv);
    let (z_ints, z_tensor) = round_latent(e.value(zr));
    let z_sec = encode_z(&z_ints, model.m, &y_factorized(model));

    let zv = e.input(z_tensor);
    let hp = model.y_decode_h(&mut e, zv);
    let h = crop_spatial(e.value(hp), rh, rw);
    let hv = e.input(h);
    let rows = [0, 1, 2, 3].map(|r| e.input(context_input(&layout.rows[r])));
    let params = model.y_context_params(&mut e, hv, &rows);

    let routes = stream_routes(model.variant);
    let mut encoders: BTreeMap<u8, RangeEncoder> = BTreeMap::new();
    for &stream in routes.values() {
        encoders.entry(stream).or_insert_with(RangeEncoder::new);
    }
    for sp in &params {
        let enc = encoders.get_mut(&routes[&(sp.row, sp.col)]).unwrap();
        let sym = layout.slice(sp.row, sp.col);
        encode_symbols(enc, tables, &sym, e.value(sp.mu), e.value(sp.b), None);
    }
    let mut out = vec![(SEC_Z_Y, z_sec)];
    out.extend(encoders.into_iter().map(|(id, enc)| (id, enc.finish())));
    out
}

fn decode_y(
    model: &Model,
    tables: &GaussianTables,
    c: &Container<'_>,
    lanes: usize,
) -> Result<CoeffPlane> {
    let (bw, bh) = c.y_grid;
    let (rh, rw) = (even(bh) / 2, even(bw) / 2);
    let z = decode_z(
        c.require(SEC_Z_Y)?,
        model.m,
        padded(rh) / 4,
        padded(rw) / 4,
        &y_factorized(model),
    )?;
    let h = {
        let mut e = DirectEngine::new(&model.store);
        let zv = e.input(z);
        let hp = model.y_decode_h(&mut e, zv);
        crop_spatial(e.value(hp), rh, rw)
    };

    let sched = decode_schedule(model.variant);
    let mut row1_dec = RangeDecoder::new(c.require(SEC_Y_ROW1)?)?;
    let lane_streams: Vec<u8> = {
        let mut set = std::collections::BTreeSet::new();
        for step in &sched.y_steps {
            for task in &step.tasks {
                if task.stream != SEC_Y_ROW1 {
                    set.insert(task.stream);
                }
            }
        }
        set.into_iter().collect()
    };
    let mut lane_decs = Vec::with_capacity(lane_streams.len());
    for &s in &lane_streams {
        lane_decs.push(RangeDecoder::new(c.require(s)?)?);
    }

    let mut rows: [ChannelTensor; 4] =
        [0; 4].map(|_| ChannelTensor::zeroed(FREQ_CHANNELS, rh, rw));

    match model.variant {
        Variant::NoContext => {
            // One step, four independent tasks; parameters all come from h.
            let mut e = DirectEngine::new(&model.store);
            let hv = e.input(h);
            let (mu_all, b_all) = model.head_params_y(&mut e, hv);
            let step = &sched.y_steps[0];
            let mut jobs: Vec<Vec<(usize, usize, Tensor, Tensor)>> = Vec::new();
            for task in &step.tasks {
                let mut list = Vec::new();
                for &(row, col) in &task.slices {
                    let lo = row * FREQ_CHANNELS + column_offset(col);
                    let hi = lo + COLUMN_WIDTHS[col];
                    let mu = e.slice_c(mu_all, lo, hi);
                    let b = e.slice_c(b_all, lo, hi);
                    list.push((row, col, e.value(mu).clone(), e.value(b).clone()));
                }
                jobs.push(list);
            }
            let mut tasks: Vec<TaskFn> = Vec::new();
            let mut decs: Vec<&mut RangeDecoder> = Vec::with_capacity(4);
            decs.push(&mut row1_dec);
            decs.extend(lane_decs.iter_mut());
            for (dec, list) in decs.into_iter().zip(jobs) {
                tasks.push(Box::new(move || {
                    let mut out = Vec::new();
                    for (row, col, mu, b) in list {
                        let mut t = ChannelTensor::zeroed(COLUMN_WIDTHS[col], rh, rw);
                        decode_symbols(dec, tables, &mu, &b, None, &mut t)?;
                        out.push((row, col, t));
                    }
                    Ok(out)
                }));
            }
            for (row, col, t) in run_tasks(tasks, lanes)? {
                write_slice(&mut rows[row], col, &t);
            }
        }
        Variant::FullParallelPpcm => {
            // One task per step; all four rows of a column decode jointly.
            let mut prev: Option<Tensor> = None;
            for step in &sched.y_steps {
                let task = &step.tasks[0];
                let col = task.slices[0].1;
                let w = COLUMN_WIDTHS[col];
                let mut e = DirectEngine::new(&model.store);
                let hv = e.input(h.clone());
                let pv = prev.as_ref().map(|t| e.input(t.clone()));
                let (mu, b) = model.par_params(&mut e, col, hv, pv);
                let mut decoded = Vec::with_capacity(4);
                for &(row, _) in &task.slices {
                    let mu_r = e.slice_c(mu, row * w, (row + 1) * w);
                    let b_r = e.slice_c(b, row * w, (row + 1) * w);
                    let (mu_t, b_t) = (e.value(mu_r).clone(), e.value(b_r).clone());
                    let mut t = ChannelTensor::zeroed(w, rh, rw);
                    decode_symbols(&mut row1_dec, tables, &mu_t, &b_t, None, &mut t)?;
                    write_slice(&mut rows[row], col, &t);
                    decoded.push(t);
                }
                let refs: Vec<&ChannelTensor> = decoded.iter().collect();
                prev = Some(context_input(&ChannelTensor::concat(&refs)));
            }
        }
        _ => {
            // Nine serial row-1 steps, then nine three-lane wave steps.
            let mut prev_scaled: Vec<Tensor> = Vec::new();
            for step in &sched.y_steps[..9] {
                let task = &step.tasks[0];
                let (row, col) = task.slices[0];
                let mut e = DirectEngine::new(&model.store);
                let hv = e.input(h.clone());
                let prev: Vec<_> = prev_scaled.iter().map(|t| e.input(t.clone())).collect();
                let (mu, b) = model.row1_params(&mut e, col, hv, &prev);
                let mut t = ChannelTensor::zeroed(COLUMN_WIDTHS[col], rh, rw);
                decode_symbols(&mut row1_dec, tables, e.value(mu), e.value(b), None, &mut t)?;
                write_slice(&mut rows[row], col, &t);
                prev_scaled.push(context_input(&t));
            }
            let prior = {
                let mut e = DirectEngine::new(&model.store);
                let r0 = e.input(context_input(&rows[0]));
                let hv = e.input(h.clone());
                let pv = model.prior_tensor(&mut e, r0, hv);
                e.value(pv).clone()
            };
            let mut prev_triple: Option<[Tensor; 3]> = None;
            for (k, step) in sched.y_steps[9..].iter().enumerate() {
                let prior_ref = &prior;
                let prev_ref = prev_triple.as_ref();
                let mut tasks: Vec<TaskFn> = Vec::new();
                for (task, dec) in step.tasks.iter().zip(lane_decs.iter_mut()) {
                    let lane = task.lane;
                    let (row, col) = task.slices[0];
                    debug_assert_eq!(task.stream, SEC_Y_LANE0 + lane as u8);
                    tasks.push(Box::new(move || {
                        let mut e = DirectEngine::new(&model.store);
                        let pv = e.input(prior_ref.clone());
                        let trip = prev_ref
                            .map(|[a, b, c]| [a, b, c].map(|t| e.input(t.clone())));
                        let input = model.lane_step_input(&mut e, pv, trip);
                        let (mu, b) = model.lane_params(&mut e, k, lane, input);
                        let mut t = ChannelTensor::zeroed(COLUMN_WIDTHS[col], rh, rw);
                        decode_symbols(dec, tables, e.value(mu), e.value(b), None, &mut t)?;
                        Ok(vec![(row, col, t)])
                    }));
                }
                let mut triple: [Option<Tensor>; 3] = [None, None, None];
                for (row, col, t) in run_tasks(tasks, lanes)? {
                    triple[row - 1] = Some(context_input(&t));
                    write_slice(&mut rows[row], col, &t);
                }
                prev_triple = Some(triple.map(|t| t.expect("lane produced no slice")));
            }
        }
    }

    Ok(luma_restore(&LumaLayout { rows, grid_h: bh, grid_w: bw }))
}

// ---------------------------------------------------------------------------
// Chroma path
// ---------------------------------------------------------------------------

fn encode_c(
    model: &Model,
    tables: &GaussianTables,
    cb: &CoeffPlane,
    cr: &CoeffPlane,
) -> Vec<(u8, Vec<u8>)> {
    let stacked = chroma_stacked(cb, cr);
    let (sh, sw) = (stacked.h, stacked.w);
    let mut e = DirectEngine::new(&model.store);
    let xv = e.input(pad_spatial(&context_input(&stacked), HYPER_PAD));
    let zr = model.c_encode(&mut e, xv);
    let (z_ints, z_tensor) = round_latent(e.value(zr));
    let z_sec = encode_z(&z_ints, model.m, &c_factorized(model));
    let zv = e.input(z_tensor);
    let hp = model.c_decode_h(&mut e, zv);

    let mut anchor_enc = RangeEncoder::new();
    let mut na_enc = RangeEncoder::new();
    if model.variant == Variant::CheckerboardCbcr {
        let h = crop_spatial(e.value(hp), sh, sw);
        let hv = e.input(h);
        let (mu_a, b_a) = model.ckbd_anchor_params(&mut e, hv);
        encode_symbols(&mut anchor_enc, tables, &stacked, e.value(mu_a), e.value(b_a), Some(true));
        let mv = e.input(context_input(&ckbd_masked_anchor(&stacked)));
        let (mu_n, b_n) = model.ckbd_non_anchor_params(&mut e, hv, mv);
        encode_symbols(&mut na_enc, tables, &stacked, e.value(mu_n), e.value(b_n), Some(false));
    } else {
        let groups = chroma_groups(cb, cr);
        let (gh, gw) = (sh / 2, sw / 2);
        let h = crop_spatial(e.value(hp), gh, gw);
        let hv = e.input(h);
        let anchor = groups.anchor();
        let (mu_a, b_a) = model.anchor_params(&mut e, hv);
        encode_symbols(&mut anchor_enc, tables, &anchor, e.value(mu_a), e.value(b_a), None);
        let av = e.input(context_input(&anchor));
        let (mu_n, b_n) = model.non_anchor_params(&mut e, hv, av);
        encode_symbols(&mut na_enc, tables, &groups.non_anchor(), e.value(mu_n), e.value(b_n), None);
    }
    vec![
        (SEC_Z_C, z_sec),
        (SEC_ANCHOR, anchor_enc.finish()),
        (SEC_NON_ANCHOR, na_enc.finish()),
    ]
}

fn decode_c(
    model: &Model,
    tables: &GaussianTables,
    c: &Container<'_>,
) -> Result<(CoeffPlane, CoeffPlane)> {
    let (bw, bh) = c.c_grid;
    let (sh, sw) = (even(bh), even(bw));
    let z = decode_z(
        c.require(SEC_Z_C)?,
        model.m,
        padded(sh) / 4,
        padded(sw) / 4,
        &c_factorized(model),
    )?;
    let mut e = DirectEngine::new(&model.store);
    let zv = e.input(z);
    let hp = model.c_decode_h(&mut e, zv);

    let mut anchor_dec = RangeDecoder::new(c.require(SEC_ANCHOR)?)?;
    let mut na_dec = RangeDecoder::new(c.require(SEC_NON_ANCHOR)?)?;
    if model.variant == Variant::CheckerboardCbcr {
        let h = crop_spatial(e.value(hp), sh, sw);
        let hv = e.input(h);
        let mut stacked = ChannelTensor::zeroed(2 * FREQ_CHANNELS, sh, sw);
        let (mu_a, b_a) = model.ckbd_anchor_params(&mut e, hv);
        let (mu_t, b_t) = (e.value(mu_a).clone(), e.value(b_a).clone());
        decode_symbols(&mut anchor_dec, tables, &mu_t, &b_t, Some(true), &mut stacked)?;
        // Non-anchor cells are still zero, so this is the masked tensor.
        let mv = e.input(context_input(&stacked));
        let (mu_n, b_n) = model.ckbd_non_anchor_params(&mut e, hv, mv);
        let (mu_t, b_t) = (e.value(mu_n).clone(), e.value(b_n).clone());
        decode_symbols(&mut na_dec, tables, &mu_t, &b_t, Some(false), &mut stacked)?;
        let full = stacked.crop(bh, bw);
        let cb = full.slice_channels(0, FREQ_CHANNELS);
        let cr = full.slice_channels(FREQ_CHANNELS, FREQ_CHANNELS);
        Ok((channels_to_blocks(&cb), channels_to_blocks(&cr)))
    } else {
        let (gh, gw) = (sh / 2, sw / 2);
        let h = crop_spatial(e.value(hp), gh, gw);
        let hv = e.input(h);
        let (mu_a, b_a) = model.anchor_params(&mut e, hv);
        let mut anchor = ChannelTensor::zeroed(4 * FREQ_CHANNELS, gh, gw);
        let (mu_t, b_t) = (e.value(mu_a).clone(), e.value(b_a).clone());
        decode_symbols(&mut anchor_dec, tables, &mu_t, &b_t, None, &mut anchor)?;
        let av = e.input(context_input(&anchor));
        let (mu_n, b_n) = model.non_anchor_params(&mut e, hv, av);
        let mut non_anchor = ChannelTensor::zeroed(4 * FREQ_CHANNELS, gh, gw);
        let (mu_t, b_t) = (e.value(mu_n).clone(), e.value(b_n).clone());
        decode_symbols(&mut na_dec, tables, &mu_t, &b_t, None, &mut non_anchor)?;
        let groups = ChromaGroups::from_anchor_pair(&anchor, &non_anchor, bh, bw);
        Ok(crate::layout::chroma_restore(&groups))
    }
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

/// Encode a parsed image into a container. Deterministic: the same image and
/// model always yield identical bytes. Luma and chroma share no state and run
/// concurrently.
pub fn encode_image(img: &QuantizedImage, model: &Model) -> Vec<u8> {
    assert_eq!(img.planes[1].blocks_w, img.planes[2].blocks_w);
    assert_eq!(img.planes[1].blocks_h, img.planes[2].blocks_h);
    let tables = GaussianTables::new();
    let (y_secs, c_secs) = std::thread::scope(|s| {
        let ty = s.spawn(|| encode_y(model, &tables, &img.planes[0]));
        let tc = s.spawn(|| encode_c(model, &tables, &img.planes[1], &img.planes[2]));
        (ty.join().expect("luma encoder panicked"), tc.join().expect("chroma encoder panicked"))
    });
    let mut sections = vec![(SEC_HEADER, img.header.clone()), (SEC_TRAILER, img.trailer.clone())];
    sections.extend(y_secs);
    sections.extend(c_secs);
    sections.sort_by_key(|&(id, _)| id);
    assemble(model, img, &sections)
}

fn decode_parsed(c: &Container<'_>, model: &Model, lanes: usize) -> Result<QuantizedImage> {
    if c.digest != model.digest() {
        return Err(CodecError::ManifestMismatch { want: c.digest, have: model.digest() });
    }
    if c.variant_code != model.variant.code() || c.m != model.m {
        return Err(CodecError::CorruptStream(
            "variant or width field disagrees with the model digest".into(),
        ));
    }
    let header = c.require(SEC_HEADER)?;
    let trailer = c.require(SEC_TRAILER)?;
    let info = parse_header(header)?;
    if info.scan_start != header.len() {
        return Err(CodecError::CorruptStream("header blob has trailing bytes".into()));
    }
    if info.width != c.width || info.height != c.height || info.subsampling != c.subsampling {
        return Err(CodecError::CorruptStream("header disagrees with container fields".into()));
    }
    for comp in &info.components {
        if !info.q_defined[comp.tq as usize] {
            return Err(CodecError::CorruptStream("undefined quantization table".into()));
        }
    }
    // MCU-aligned grids are a function of dims and subsampling; the stored
    // grids must agree.
    let (mcus_x, mcus_y, lh) = match c.subsampling {
        Subsampling::Ycbcr444 => {
            ((c.width as usize).div_ceil(8), (c.height as usize).div_ceil(8), 1)
        }
        Subsampling::Ycbcr420 => {
            ((c.width as usize).div_ceil(16), (c.height as usize).div_ceil(16), 2)
        }
    };
    if c.y_grid != (mcus_x * lh, mcus_y * lh) || c.c_grid != (mcus_x, mcus_y) {
        return Err(CodecError::CorruptStream("block grids disagree with dims".into()));
    }

    let tables = GaussianTables::new();
    let (y_res, c_res) = std::thread::scope(|s| {
        let ty = s.spawn(|| decode_y(model, &tables, c, lanes));
        let tc = s.spawn(|| decode_c(model, &tables, c));
        (ty.join().expect("luma decoder panicked"), tc.join().expect("chroma decoder panicked"))
    });
    let (cb, cr) = c_res?;
    Ok(QuantizedImage {
        width: c.width,
        height: c.height,
        subsampling: c.subsampling,
        components: info.components,
        planes: [y_res?, cb, cr],
        qtables: info.qtables,
        huffman: info.huffman,
        header: header.to_vec(),
        trailer: trailer.to_vec(),
    })
}

/// Decode a container back to the exact image it was encoded from. `lanes`
/// bounds the worker count for the luma wave steps (1..=3); any value yields
/// identical output.
pub fn decode_image(container: &[u8], model: &Model, lanes: usize) -> Result<QuantizedImage> {
    decode_parsed(&Container::parse(container)?, model, lanes)
}

/// Encode a JPEG file. The container reproduces the input byte-for-byte: if
/// re-serialization of the parsed image would differ from the original (padding
/// bits, unusual encoder quirks), a patch section carries the difference.
pub fn encode_file(jpeg: &[u8], model: &Model) -> Result<Vec<u8>> {
    let img = parse_jpeg(jpeg)?;
    let mut container = encode_image(&img, model);
    let ser = serialize_jpeg(&img)?;
    if ser != jpeg {
        // Rebuild with the patch section; sections stay id-sorted.
        let c = Container::parse(&container).expect("fresh container parses");
        let mut sections: Vec<(u8, Vec<u8>)> =
            c.sections.iter().map(|&(id, b)| (id, b.to_vec())).collect();
        sections.push((SEC_PATCH, build_patch(&ser, jpeg)));
        container = assemble(model, &img, &sections);
    }
    Ok(container)
}

/// Decode a container to JPEG file bytes.
pub fn decode_file(container: &[u8], model: &Model, lanes: usize) -> Result<Vec<u8>> {
    let c = Container::parse(container)?;
    let img = decode_parsed(&c, model, lanes)?;
    let ser = serialize_jpeg(&img)?;
    match c.section(SEC_PATCH) {
        None => Ok(ser),
        Some(p) => apply_patch(ser, p),
    }
}

/// Requantize onto per-component tables and encode. With the source tables
/// this degenerates to the lossless path; the container always decodes to the
/// requantized image exactly.
pub fn transcode_image(
    img: &QuantizedImage,
    tables: &[[u16; 64]; 3],
    model: &Model,
) -> Result<Vec<u8>> {
    let rq = requantize(img, tables)?;
    Ok(encode_image(&rq, model))
}

/// Full round trip: encode the file, decode it back, compare bytes.
pub fn verify_file(jpeg: &[u8], model: &Model, lanes: usize) -> Result<bool> {
    let container = encode_file(jpeg, model)?;
    Ok(decode_file(&container, model, lanes)? == jpeg)
}

// ---------------------------------------------------------------------------
// Scan patch
// ---------------------------------------------------------------------------

/// Byte patch turning `serialized` into `original`. Equal-length inputs with
/// localized differences get a sparse run list; anything else stores the
/// original outright.
fn build_patch(serialized: &[u8], original: &[u8]) -> Vec<u8> {
    if serialized.len() == original.len() {
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for i in 0..original.len() {
            if serialized[i] != original[i] {
                match runs.last_mut() {
                    // Merging across short gaps beats paying another header.
                    Some((_, end)) if i - *end <= 8 => *end = i + 1,
                    _ => runs.push((i, i + 1)),
                }
            }
        }
        let sparse_len = 5 + runs.iter().map(|&(s, e)| 8 + (e - s)).sum::<usize>();
        if sparse_len < 5 + original.len() {
            let mut out = vec![PATCH_SPARSE];
            out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
            for &(s, e) in &runs {
                out.extend_from_slice(&(s as u32).to_le_bytes());
                out.extend_from_slice(&((e - s) as u32).to_le_bytes());
                out.extend_from_slice(&original[s..e]);
            }
            return out;
        }
    }
    let mut out = vec![PATCH_FULL];
    out.extend_from_slice(&(original.len() as u32).to_le_bytes());
    out.extend_from_slice(original);
    out
}

fn apply_patch(mut serialized: Vec<u8>, patch: &[u8]) -> Result<Vec<u8>> {
    let mut r = Reader { data: patch, pos: 0 };
    match r.u8()? {
        PATCH_FULL => {
            let len = r.u32()? as usize;
            let bytes = r.take(len)?.to_vec();
            if r.pos != patch.len() {
                return Err(CodecError::CorruptStream("trailing patch bytes".into()));
            }
            Ok(bytes)
        }
        PATCH_SPARSE => {
            let runs = r.u32()?;
            for _ in 0..runs {
                let offset = r.u32()? as usize;
                let len = r.u32()? as usize;
                let bytes = r.take(len)?;
                if offset + len > serialized.len() {
                    return Err(CodecError::CorruptStream("patch run out of range".into()));
                }
                serialized[offset..offset + len].copy_from_slice(bytes);
            }
            if r.pos != patch.len() {
                return Err(CodecError::CorruptStream("trailing patch bytes".into()));
            }
            Ok(serialized)
        }
        k => Err(CodecError::CorruptStream(format!("unknown patch kind {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::ALL_VARIANTS;
    use crate::testsupport::{synth_image, synth_jpeg};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(variant: Variant) -> Model {
        Model::new(variant, 8, 70 + variant.code() as u64)
    }

    fn assert_same_image(a: &QuantizedImage, b: &QuantizedImage) {
        assert_eq!(a.width, b.width);
        assert_eq!(a.height, b.height);
        assert_eq!(a.subsampling, b.subsampling);
        assert_eq!(a.planes, b.planes);
        assert_eq!(a.qtables, b.qtables);
        assert_eq!(a.header, b.header);
        assert_eq!(a.trailer, b.trailer);
    }

    #[test]
    fn schedule_structure_is_pinned() {
        let full = decode_schedule(Variant::Full);
        assert_eq!(full.y_steps.len(), 18);
        for (j, step) in full.y_steps[..9].iter().enumerate() {
            assert_eq!(step.tasks.len(), 1);
            assert_eq!(step.tasks[0].slices, vec![(0, j)]);
        }
        for step in &full.y_steps[9..] {
            assert_eq!(step.tasks.len(), 3);
        }
        // Fifth wave step decodes columns 5, 6, 7 (1-based) across rows 2-4.
        let step5 = &full.y_steps[9 + 4];
        let slices: Vec<(usize, usize)> =
            step5.tasks.iter().map(|t| t.slices[0]).collect();
        assert_eq!(slices, vec![(1, 4), (2, 5), (3, 6)]);
        assert_eq!(full.c_passes, 2);

        let aligned = decode_schedule(Variant::NoShift);
        for (k, step) in aligned.y_steps[9..].iter().enumerate() {
            for task in &step.tasks {
                assert_eq!(task.slices[0].1, k);
            }
        }

        let par = decode_schedule(Variant::FullParallelPpcm);
        assert_eq!(par.y_steps.len(), 9);
        for (j, step) in par.y_steps.iter().enumerate() {
            assert_eq!(step.tasks.len(), 1);
            assert_eq!(step.tasks[0].slices.len(), 4);
            assert!(step.tasks[0].slices.iter().all(|&(_, c)| c == j));
        }

        let flat = decode_schedule(Variant::NoContext);
        assert_eq!(flat.y_steps.len(), 1);
        assert_eq!(flat.y_steps[0].tasks.len(), 4);

        assert_eq!(decode_schedule(Variant::CheckerboardCbcr).c_passes, 2);
        assert_eq!(decode_schedule(Variant::NoCccm).c_passes, 1);
    }

    #[test]
    fn schedules_are_topologically_sound() {
        for v in ALL_VARIANTS {
            let s = decode_schedule(v);
            validate_schedule(&s).unwrap_or_else(|e| panic!("{v}: {e}"));
        }
        // The validator actually rejects broken orderings.
        let mut bad = decode_schedule(Variant::Full);
        bad.y_steps.swap(2, 3);
        assert!(validate_schedule(&bad).is_err());
        let mut twice = decode_schedule(Variant::Full);
        let dup = twice.y_steps[0].clone();
        twice.y_steps.push(dup);
        assert!(validate_schedule(&twice).is_err());
    }

    #[test]
    fn containers_roundtrip_for_every_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for variant in ALL_VARIANTS {
            let model = tiny_model(variant);
            let img = synth_image(&mut rng, 24, 20, Subsampling::Ycbcr444, 75);
            let container = encode_image(&img, &model);
            let back = decode_image(&container, &model, 3).unwrap();
            assert_same_image(&back, &img);
        }
    }

    #[test]
    fn subsampled_images_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        for variant in [Variant::Full, Variant::CheckerboardCbcr] {
            let model = tiny_model(variant);
            let img = synth_image(&mut rng, 33, 50, Subsampling::Ycbcr420, 75);
            let container = encode_image(&img, &model);
            let back = decode_image(&container, &model, 3).unwrap();
            assert_same_image(&back, &img);
        }
    }

    #[test]
    fn one_block_images_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let model = tiny_model(Variant::Full);
        for sub in [Subsampling::Ycbcr444, Subsampling::Ycbcr420] {
            let img = synth_image(&mut rng, 8, 8, sub, 75);
            let back = decode_image(&encode_image(&img, &model), &model, 3).unwrap();
            assert_same_image(&back, &img);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let model = tiny_model(Variant::Full);
        let img = synth_image(&mut rng, 24, 20, Subsampling::Ycbcr444, 75);
        assert_eq!(encode_image(&img, &model), encode_image(&img, &model));
    }

    #[test]
    fn worker_count_does_not_change_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        for variant in [Variant::Full, Variant::NoContext] {
            let model = tiny_model(variant);
            let img = synth_image(&mut rng, 24, 20, Subsampling::Ycbcr444, 75);
            let container = encode_image(&img, &model);
            let one = decode_image(&container, &model, 1).unwrap();
            let two = decode_image(&container, &model, 2).unwrap();
            let three = decode_image(&container, &model, 3).unwrap();
            assert_same_image(&one, &img);
            assert_same_image(&two, &one);
            assert_same_image(&three, &one);
        }
    }

    #[test]
    fn mismatched_models_are_refused() {
        let mut rng = ChaCha8Rng::seed_from_u64(106);
        let model = tiny_model(Variant::Full);
        let img = synth_image(&mut rng, 16, 16, Subsampling::Ycbcr444, 75);
        let container = encode_image(&img, &model);
        let other_seed = Model::new(Variant::Full, 8, 9999);
        assert!(matches!(
            decode_image(&container, &other_seed, 3),
            Err(CodecError::ManifestMismatch { .. })
        ));
        let other_variant = Model::new(Variant::NoShift, 8, model.seed);
        assert!(matches!(
            decode_image(&container, &other_variant, 3),
            Err(CodecError::ManifestMismatch { .. })
        ));
    }

    #[test]
    fn truncated_containers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let model = tiny_model(Variant::Full);
        let img = synth_image(&mut rng, 16, 16, Subsampling::Ycbcr444, 75);
        let container = encode_image(&img, &model);
        let mut cut = 0;
        while cut < container.len() {
            let err = decode_image(&container[..cut], &model, 3).unwrap_err();
            assert!(
                matches!(err, CodecError::CorruptStream(_)),
                "cut at {cut}: unexpected {err}"
            );
            cut += 11;
        }
    }

    #[test]
    fn flipped_bytes_fail_the_checksum() {
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        let model = tiny_model(Variant::Full);
        let img = synth_image(&mut rng, 16, 16, Subsampling::Ycbcr444, 75);
        let container = encode_image(&img, &model);
        for at in [6usize, 18, container.len() / 2, container.len() - 5] {
            let mut bad = container.clone();
            bad[at] ^= 0x40;
            let err = decode_image(&bad, &model, 3).unwrap_err();
            assert!(
                matches!(err, CodecError::ChecksumMismatch | CodecError::CorruptStream(_)),
                "flip at {at}: unexpected {err}"
            );
        }
    }

    #[test]
    fn file_roundtrip_is_byte_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        let model = tiny_model(Variant::Full);
        for (w, h, sub) in [
            (24u16, 17u16, Subsampling::Ycbcr444),
            (33, 50, Subsampling::Ycbcr420),
        ] {
            let file = synth_jpeg(&mut rng, w, h, sub, 75);
            let container = encode_file(&file, &model).unwrap();
            assert_eq!(decode_file(&container, &model, 3).unwrap(), file);
            let info = inspect(&container).unwrap();
            assert!(
                info.sections.iter().all(|&(id, _)| id != SEC_PATCH),
                "regular files need no patch"
            );
            assert!(verify_file(&file, &model, 3).unwrap());
        }
    }

    #[test]
    fn padding_bit_differences_engage_the_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let model = tiny_model(Variant::Full);
        let file = synth_jpeg(&mut rng, 24, 17, Subsampling::Ycbcr444, 75);
        let img = parse_jpeg(&file).unwrap();
        // Flip a padding bit in the final scan byte: the file parses to the
        // same coefficients, but our serializer pads with 1 bits, so the
        // bytes differ and only the patch can reproduce them.
        let last_scan = file.len() - img.trailer.len() - 1;
        let mut modified = None;
        for bit in 0..7 {
            let mut m = file.clone();
            m[last_scan] ^= 1 << bit;
            if let Ok(p) = parse_jpeg(&m) {
                if p.planes == img.planes {
                    modified = Some(m);
                    break;
                }
            }
        }
        let modified = modified.expect("no flippable padding bit found");
        assert_ne!(modified, file);
        let container = encode_file(&modified, &model).unwrap();
        let info = inspect(&container).unwrap();
        assert!(info.sections.iter().any(|&(id, _)| id == SEC_PATCH));
        assert_eq!(decode_file(&container, &model, 3).unwrap(), modified);
    }

    #[test]
    fn patches_cover_sparse_full_and_resized_cases() {
        let base = vec![7u8; 4096];
        let mut sparse = base.clone();
        sparse[100] = 1;
        sparse[101] = 2;
        sparse[900] = 3;
        let p = build_patch(&base, &sparse);
        assert_eq!(p[0], PATCH_SPARSE);
        assert!(p.len() < 64);
        assert_eq!(apply_patch(base.clone(), &p).unwrap(), sparse);

        let noisy: Vec<u8> = (0..4096u32).map(|i| (i * 31 % 251) as u8).collect();
        let p = build_patch(&base, &noisy);
        assert_eq!(p[0], PATCH_FULL);
        assert_eq!(apply_patch(base.clone(), &p).unwrap(), noisy);

        let longer = vec![1u8; 5000];
        let p = build_patch(&base, &longer);
        assert_eq!(p[0], PATCH_FULL);
        assert_eq!(apply_patch(base.clone(), &p).unwrap(), longer);

        // Out-of-range run offsets are rejected, not applied.
        let mut bad = vec![PATCH_SPARSE];
        bad.extend_from_slice(&1u32.to_le_bytes());
        bad.extend_from_slice(&5000u32.to_le_bytes());
        bad.extend_from_slice(&2u32.to_le_bytes());
        bad.extend_from_slice(&[1, 2]);
        assert!(matches!(
            apply_patch(base, &bad),
            Err(CodecError::CorruptStream(_))
        ));
    }

    #[test]
    fn transcode_decodes_to_the_requantized_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let model = tiny_model(Variant::Full);
        let img = synth_image(&mut rng, 24, 20, Subsampling::Ycbcr444, 75);
        let target = crate::jpeg::quality_tables_per_component(50);
        let container = transcode_image(&img, &target, &model).unwrap();
        let decoded = decode_image(&container, &model, 3).unwrap();
        let expected = requantize(&img, &target).unwrap();
        assert_same_image(&decoded, &expected);
        // The decoded image serializes to a valid JPEG carrying the target
        // tables.
        let ser = serialize_jpeg(&decoded).unwrap();
        let back = parse_jpeg(&ser).unwrap();
        assert_eq!(back.qtables[0], target[0]);
        assert_eq!(back.qtables[1], target[1]);
        assert_eq!(back.planes, expected.planes);

        // Identity tables degenerate to the lossless path.
        let same: [[u16; 64]; 3] =
            [img.qtables[0], img.qtables[1], img.qtables[1]];
        let container = transcode_image(&img, &same, &model).unwrap();
        let decoded = decode_image(&container, &model, 3).unwrap();
        assert_eq!(decoded.planes, img.planes);
    }

    #[test]
    fn inspect_reports_geometry_and_sections() {
        let mut rng = ChaCha8Rng::seed_from_u64(112);
        let model = tiny_model(Variant::Full);
        let img = synth_image(&mut rng, 33, 50, Subsampling::Ycbcr420, 75);
        let container = encode_image(&img, &model);
        let info = inspect(&container).unwrap();
        assert_eq!(info.width, 33);
        assert_eq!(info.height, 50);
        assert_eq!(info.subsampling, Subsampling::Ycbcr420);
        assert_eq!(info.variant_code, Variant::Full.code());
        assert_eq!(info.m, 8);
        assert_eq!(info.digest, model.digest());
        assert_eq!(info.y_grid, (6, 8));
        assert_eq!(info.c_grid, (3, 4));
        for id in [
            SEC_HEADER,
            SEC_TRAILER,
            SEC_Z_Y,
            SEC_Y_ROW1,
            SEC_Y_LANE0,
            SEC_Y_LANE0 + 1,
            SEC_Y_LANE0 + 2,
            SEC_Z_C,
            SEC_ANCHOR,
            SEC_NON_ANCHOR,
        ] {
            assert!(info.sections.iter().any(|&(i, _)| i == id), "missing section {id}");
        }
        let total: usize = info.sections.iter().map(|&(_, n)| n).sum();
        assert!(total < container.len());
    }
}
