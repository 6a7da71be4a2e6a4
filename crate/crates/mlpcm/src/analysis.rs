//! Reports over images, corpora, and models: bpp/savings benches, zero-count
//! analysis in the transform and pixel domains, per-column entropy, block and
//! frequency similarity maps, and per-step MAC schedules.
//!
//! Every report is deterministic given (model, corpus, flags) except for the
//! wall-time fields of [`BenchReport`]. CSV schemas are documented on the
//! respective `to_csv` methods.

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::{raw_to_mu_b, DirectEngine, Engine};
use crate::entropy::{GaussianParams, GaussianTables};
use crate::jpeg::{
    parse_jpeg, quality_tables_per_component, requantize, serialize_jpeg, CoeffPlane,
    QuantizedImage,
};
use crate::layout::{column_offset, luma_layout, COLUMN_WIDTHS};
use crate::math::idct8x8;
use crate::nets::{
    conv_macs, context_input, crop_spatial, lane_schedule, mac_count, pad_spatial, pn_macs,
    MacCounts, Model, Variant, CHROMA_CHANNELS, HYPER_PAD, LUMA_CHANNELS,
};
use crate::pipeline::{
    decode_file, encode_file, inspect, CodecError, SEC_ANCHOR, SEC_NON_ANCHOR, SEC_PATCH,
    SEC_Y_LANE0, SEC_Y_ROW1, SEC_Z_C, SEC_Z_Y,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no inputs in {0}")]
    NoInputs(String),
    #[error("{path}: {source}")]
    File { path: String, source: CodecError },
    #[error("{0}: decoded bytes differ from the source file")]
    Mismatch(String),
    #[error("io: {0}")]
    Io(String),
}

// ---------------------------------------------------------------------------
// Savings and bench reports
// ---------------------------------------------------------------------------

/// Percentage saved by `ours_bpp` relative to `jpeg_bpp`.
pub fn savings_percent(jpeg_bpp: f64, ours_bpp: f64) -> f64 {
    100.0 * (1.0 - ours_bpp / jpeg_bpp)
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub file: String,
    /// Requantization quality for sweep rows; `None` means the file's own
    /// tables.
    pub qp: Option<u8>,
    pub width: u32,
    pub height: u32,
    /// Entropy-coded scan bytes of the JPEG (headers excluded).
    pub jpeg_scan_bytes: u64,
    /// Coded payload bytes of our container (headers excluded).
    pub payload_bytes: u64,
    /// Everything else in the container: framing, JPEG header/trailer copies.
    pub header_bytes: u64,
    pub jpeg_bpp: f64,
    pub ours_bpp: f64,
    pub savings_pct: f64,
    pub encode_ms: f64,
    pub decode_ms: f64,
    pub lanes: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub variant: Variant,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn mean_savings(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.savings_pct).sum::<f64>() / self.rows.len() as f64
    }

    /// Schema: `file,qp,width,height,jpeg_scan_bytes,payload_bytes,
    /// header_bytes,jpeg_bpp,ours_bpp,savings_pct,encode_ms,decode_ms,lanes,
    /// variant`. `qp` is `native` for rows coded under the file's own tables.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "file,qp,width,height,jpeg_scan_bytes,payload_bytes,header_bytes,\
             jpeg_bpp,ours_bpp,savings_pct,encode_ms,decode_ms,lanes,variant\n",
        );
        for r in &self.rows {
            let qp = r.qp.map_or_else(|| "native".to_string(), |q| q.to_string());
            out.push_str(&format!(
                "{},{qp},{},{},{},{},{},{:.6},{:.6},{:.4},{:.3},{:.3},{},{}\n",
                r.file,
                r.width,
                r.height,
                r.jpeg_scan_bytes,
                r.payload_bytes,
                r.header_bytes,
                r.jpeg_bpp,
                r.ours_bpp,
                r.savings_pct,
                r.encode_ms,
                r.decode_ms,
                r.lanes,
                self.variant,
            ));
        }
        out
    }

    /// Aligned text table with a trailing mean-savings line.
    pub fn to_table(&self) -> String {
        let header =
            ["file", "qp", "jpeg bpp", "ours bpp", "savings %", "enc ms", "dec ms"];
        let mut cells: Vec<[String; 7]> = vec![header.map(str::to_string)];
        for r in &self.rows {
            cells.push([
                r.file.clone(),
                r.qp.map_or_else(|| "native".to_string(), |q| q.to_string()),
                format!("{:.4}", r.jpeg_bpp),
                format!("{:.4}", r.ours_bpp),
                format!("{:.2}", r.savings_pct),
                format!("{:.1}", r.encode_ms),
                format!("{:.1}", r.decode_ms),
            ]);
        }
        let mut width = [0usize; 7];
        for row in &cells {
            for (w, c) in width.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        for row in &cells {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                // Left-align the first column, right-align numbers.
                if i == 0 {
                    out.push_str(&format!("{c:<w$}", w = width[i]));
                } else {
                    out.push_str(&format!("{c:>w$}", w = width[i]));
                }
            }
            out.push('\n');
        }
        out.push_str(&format!("mean savings: {:.2}%\n", self.mean_savings()));
        out
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub lanes: usize,
    /// Empty: bench each file under its own tables. Otherwise one row per
    /// (file, qp), requantized through that quality's tables first.
    pub qp_sweep: Vec<u8>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { lanes: 3, qp_sweep: Vec::new() }
    }
}

/// The coded payload sections of a container, headers excluded.
pub const PAYLOAD_SECTIONS: [u8; 9] = [
    SEC_Z_Y,
    SEC_Y_ROW1,
    SEC_Y_LANE0,
    SEC_Y_LANE0 + 1,
    SEC_Y_LANE0 + 2,
    SEC_Z_C,
    SEC_ANCHOR,
    SEC_NON_ANCHOR,
    SEC_PATCH,
];

fn bench_bytes(
    name: &str,
    qp: Option<u8>,
    bytes: &[u8],
    model: &Model,
    lanes: usize,
) -> Result<BenchRow, BenchError> {
    let wrap = |source: CodecError| BenchError::File { path: name.to_string(), source };
    let img = parse_jpeg(bytes).map_err(|e| wrap(e.into()))?;
    let t = Instant::now();
    let container = encode_file(bytes, model).map_err(wrap)?;
    let encode_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let back = decode_file(&container, model, lanes).map_err(wrap)?;
    let decode_ms = t.elapsed().as_secs_f64() * 1e3;
    if back != bytes {
        return Err(BenchError::Mismatch(name.to_string()));
    }
    let info = inspect(&container).map_err(wrap)?;
    let payload = info.section_bytes(&PAYLOAD_SECTIONS) as u64;
    let header = container.len() as u64 - payload;
    let scan = (bytes.len() - img.header.len() - img.trailer.len()) as u64;
    let px = img.luma_pixels() as f64;
    let jpeg_bpp = 8.0 * scan as f64 / px;
    let ours_bpp = 8.0 * payload as f64 / px;
    Ok(BenchRow {
        file: name.to_string(),
        qp,
        width: img.width,
        height: img.height,
        jpeg_scan_bytes: scan,
        payload_bytes: payload,
        header_bytes: header,
        jpeg_bpp,
        ours_bpp,
        savings_pct: savings_percent(jpeg_bpp, ours_bpp),
        encode_ms,
        decode_ms,
        lanes,
    })
}

/// JPEG files in a directory, sorted by name.
pub fn jpeg_paths(dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| BenchError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|r| r.ok().map(|d| d.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "jpg" || e == "jpeg"
            )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Bench every JPEG in `dir`: full file round trip per row, with optional
/// requantization sweep. Rows are ordered by filename, then sweep order.
pub fn bench_dir(
    dir: &Path,
    model: &Model,
    opts: &BenchOptions,
) -> Result<BenchReport, BenchError> {
    let paths = jpeg_paths(dir)?;
    if paths.is_empty() {
        return Err(BenchError::NoInputs(dir.display().to_string()));
    }
    let mut rows = Vec::new();
    for path in paths {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let bytes =
            std::fs::read(&path).map_err(|e| BenchError::Io(format!("{}: {e}", path.display())))?;
        if opts.qp_sweep.is_empty() {
            rows.push(bench_bytes(&name, None, &bytes, model, opts.lanes)?);
        } else {
            let wrap = |source: CodecError| BenchError::File { path: name.clone(), source };
            let img = parse_jpeg(&bytes).map_err(|e| wrap(e.into()))?;
            for &qp in &opts.qp_sweep {
                let req = requantize(&img, &quality_tables_per_component(qp))
                    .map_err(|e| wrap(e.into()))?;
                let rebytes = serialize_jpeg(&req).map_err(|e| wrap(e.into()))?;
                rows.push(bench_bytes(&name, Some(qp), &rebytes, model, opts.lanes)?);
            }
        }
    }
    Ok(BenchReport { variant: model.variant, rows })
}

// ---------------------------------------------------------------------------
// Zero-count (rho) analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// The exact orthonormal 8x8 DCT pair.
    Dct8x8,
    /// Identity control: skip the inverse transform entirely.
    Identity,
}

/// Zero counts of one image in both domains under a chosen transform.
#[derive(Debug, Clone, Copy)]
pub struct RhoReport {
    pub transform: Transform,
    /// Coefficients across all three components.
    pub total: usize,
    /// Zeros among the quantized coefficients.
    pub zeros_dct: usize,
    /// Zeros after inverse-transforming the dequantized coefficients and
    /// rounding to integers.
    pub zeros_pixel: usize,
}

impl RhoReport {
    pub fn dct_zero_fraction(&self) -> f64 {
        self.zeros_dct as f64 / self.total as f64
    }

    pub fn pixel_zero_fraction(&self) -> f64 {
        self.zeros_pixel as f64 / self.total as f64
    }
}

pub fn analyze_rho(img: &QuantizedImage) -> RhoReport {
    analyze_rho_with(img, Transform::Dct8x8)
}

pub fn analyze_rho_with(img: &QuantizedImage, transform: Transform) -> RhoReport {
    let mut total = 0usize;
    let mut zeros_dct = 0usize;
    let mut zeros_pixel = 0usize;
    for c in 0..3 {
        let plane = &img.planes[c];
        let q = &img.qtables[img.components[c].tq as usize];
        for block in plane.coeffs.chunks_exact(64) {
            total += 64;
            zeros_dct += block.iter().filter(|&&v| v == 0).count();
            let mut f = [0.0f64; 64];
            for (k, &v) in block.iter().enumerate() {
                f[k] = v as f64 * q[k] as f64;
            }
            let x = match transform {
                Transform::Dct8x8 => idct8x8(&f),
                Transform::Identity => f,
            };
            zeros_pixel += x.iter().filter(|v| v.round() == 0.0).count();
        }
    }
    RhoReport { transform, total, zeros_dct, zeros_pixel }
}

// ---------------------------------------------------------------------------
// Per-column entropy
// ---------------------------------------------------------------------------

/// Modeled luma bits bucketed by frequency column, summed over the four
/// space-to-depth rows and the whole corpus.
#[derive(Debug, Clone, Copy)]
pub struct ColumnEntropyReport {
    pub bits: [f64; 9],
    pub symbols: [u64; 9],
}

impl ColumnEntropyReport {
    /// Total conditional luma bits (the Y rate minus the hyper-latent).
    pub fn total_bits(&self) -> f64 {
        self.bits.iter().sum()
    }

    pub fn bits_per_symbol(&self, col: usize) -> f64 {
        self.bits[col] / self.symbols[col] as f64
    }

    /// Schema: `column,width,bits,symbols,bits_per_symbol`; columns are
    /// 1-based to match the coding order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("column,width,bits,symbols,bits_per_symbol\n");
        for j in 0..9 {
            out.push_str(&format!(
                "{},{},{:.3},{},{:.6}\n",
                j + 1,
                COLUMN_WIDTHS[j],
                self.bits[j],
                self.symbols[j],
                self.bits_per_symbol(j)
            ));
        }
        out
    }
}

/// Bucket the conditional luma rate of each image by frequency column. The
/// column totals partition the conditional Y-stream estimate exactly.
pub fn column_entropy_report(model: &Model, imgs: &[QuantizedImage]) -> ColumnEntropyReport {
    let gauss = GaussianTables::new();
    let mut bits = [0.0f64; 9];
    let mut symbols = [0u64; 9];
    for img in imgs {
        let layout = luma_layout(&img.planes[0]);
        let (rh, rw) = (layout.rows[0].h, layout.rows[0].w);
        let mut e = DirectEngine::new(&model.store);
        let xv = e.input(pad_spatial(&context_input(&layout.stacked()), HYPER_PAD));
        let zv = model.y_encode(&mut e, xv);
        let (_, zt) = crate::pipeline::round_latent(e.value(zv));
        let zvar = e.input(zt);
        let hp = model.y_decode_h(&mut e, zvar);
        let h = crop_spatial(e.value(hp), rh, rw);
        let hv = e.input(h);
        let rows = [0, 1, 2, 3].map(|r| e.input(context_input(&layout.rows[r])));
        for sp in model.y_context_params(&mut e, hv, &rows) {
            let sym = layout.slice(sp.row, sp.col);
            let (mu, b) = (e.value(sp.mu), e.value(sp.b));
            for (i, &s) in sym.data.iter().enumerate() {
                let (m, bb) = raw_to_mu_b(mu.data[i], b.data[i]);
                bits[sp.col] += gauss.bits_estimate(s as i32, GaussianParams::from_raw(m, bb));
            }
            symbols[sp.col] += sym.data.len() as u64;
        }
    }
    ColumnEntropyReport { bits, symbols }
}

// ---------------------------------------------------------------------------
// Similarity maps
// ---------------------------------------------------------------------------

/// Cosine similarity; zero vectors map to 0 by convention.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone)]
pub struct SimilarityReport {
    /// Luma block grid (rows, cols).
    pub grid: (usize, usize),
    /// The reference block for the map: the central block.
    pub center: (usize, usize),
    /// Row-major cosine of each block's 64-vector against the center block.
    pub block_map: Vec<f64>,
    /// 64x64 cosine between per-frequency vectors taken across all blocks,
    /// indexed in natural (row-major) frequency order.
    pub freq: Vec<f64>,
}

impl SimilarityReport {
    pub fn block_at(&self, by: usize, bx: usize) -> f64 {
        self.block_map[by * self.grid.1 + bx]
    }

    pub fn freq_at(&self, k1: usize, k2: usize) -> f64 {
        self.freq[k1 * 64 + k2]
    }

    /// Mean similarity over unordered distinct pairs of the given natural
    /// frequency indices.
    pub fn mean_pair_similarity(&self, freqs: &[usize]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (i, &a) in freqs.iter().enumerate() {
            for &b in &freqs[i + 1..] {
                sum += self.freq_at(a, b);
                n += 1;
            }
        }
        sum / n as f64
    }

    /// Schema: `by,bx,cosine` (block map against the center block).
    pub fn block_csv(&self) -> String {
        let mut out = String::from("by,bx,cosine\n");
        for by in 0..self.grid.0 {
            for bx in 0..self.grid.1 {
                out.push_str(&format!("{by},{bx},{:.6}\n", self.block_at(by, bx)));
            }
        }
        out
    }

    /// Schema: `k1,k2,cosine` (frequency-to-frequency map, natural order).
    pub fn freq_csv(&self) -> String {
        let mut out = String::from("k1,k2,cosine\n");
        for k1 in 0..64 {
            for k2 in 0..64 {
                out.push_str(&format!("{k1},{k2},{:.6}\n", self.freq_at(k1, k2)));
            }
        }
        out
    }
}

/// Inter-block and inter-frequency cosine maps of the luma plane.
pub fn similarity_report(img: &QuantizedImage) -> SimilarityReport {
    plane_similarity(&img.planes[0])
}

fn plane_similarity(plane: &CoeffPlane) -> SimilarityReport {
    let (bh, bw) = (plane.blocks_h, plane.blocks_w);
    let center = (bh / 2, bw / 2);
    let block = |by: usize, bx: usize| -> Vec<f64> {
        let base = (by * bw + bx) * 64;
        plane.coeffs[base..base + 64].iter().map(|&v| v as f64).collect()
    };
    let center_vec = block(center.0, center.1);
    let mut block_map = Vec::with_capacity(bh * bw);
    for by in 0..bh {
        for bx in 0..bw {
            block_map.push(cosine(&block(by, bx), &center_vec));
        }
    }
    let freq_vec = |k: usize| -> Vec<f64> {
        (0..bh * bw).map(|b| plane.coeffs[b * 64 + k] as f64).collect()
    };
    let per_freq: Vec<Vec<f64>> = (0..64).map(freq_vec).collect();
    let mut freq = vec![0.0; 64 * 64];
    for k1 in 0..64 {
        for k2 in 0..64 {
            freq[k1 * 64 + k2] = cosine(&per_freq[k1], &per_freq[k2]);
        }
    }
    SimilarityReport { grid: (bh, bw), center, block_map, freq }
}

// ---------------------------------------------------------------------------
// Schedule / MAC report
// ---------------------------------------------------------------------------

/// One decode step; multi-lane steps list the MACs of each lane.
#[derive(Debug, Clone)]
pub struct StepCost {
    pub label: String,
    pub lanes: Vec<u64>,
    /// Whether the step's networks consume previously decoded symbols of the
    /// same plane (as opposed to hyper features alone).
    pub symbol_context: bool,
}

#[derive(Debug, Clone)]
pub struct ScheduleReport {
    pub variant: Variant,
    pub m: usize,
    pub steps: Vec<StepCost>,
    /// Whole-model totals (encoders included) over the same grids.
    pub totals: MacCounts,
}

impl ScheduleReport {
    /// Latency proxy: per step, only the widest lane counts.
    pub fn critical_path_macs(&self) -> u64 {
        self.steps.iter().map(|s| s.lanes.iter().copied().max().unwrap_or(0)).sum()
    }

    /// All work executed one lane at a time.
    pub fn serial_macs(&self) -> u64 {
        self.steps.iter().map(|s| s.lanes.iter().sum::<u64>()).sum()
    }

    /// MACs of symbol-conditioned networks only.
    pub fn context_macs(&self) -> u64 {
        self.luma_context_macs() + self.chroma_context_macs()
    }

    fn prefixed_context_macs(&self, prefix: &str) -> u64 {
        self.steps
            .iter()
            .filter(|s| s.symbol_context && s.label.starts_with(prefix))
            .map(|s| s.lanes.iter().sum::<u64>())
            .sum()
    }

    pub fn luma_context_macs(&self) -> u64 {
        self.prefixed_context_macs("y.")
    }

    pub fn chroma_context_macs(&self) -> u64 {
        self.prefixed_context_macs("c.")
    }

    /// Schema: `step,label,lane,macs,symbol_context` (one line per lane).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,label,lane,macs,symbol_context\n");
        for (i, s) in self.steps.iter().enumerate() {
            for (lane, macs) in s.lanes.iter().enumerate() {
                out.push_str(&format!("{i},{},{lane},{macs},{}\n", s.label, s.symbol_context));
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("variant {} at m={}\n", self.variant, self.m));
        let w = self.steps.iter().map(|s| s.label.len()).max().unwrap_or(4).max(4);
        for s in &self.steps {
            let lanes: Vec<String> = s.lanes.iter().map(|m| m.to_string()).collect();
            out.push_str(&format!("{:<w$}  {}\n", s.label, lanes.join(" | ")));
        }
        out.push_str(&format!(
            "critical path {} MACs, serial {} MACs, total (enc+dec) {} MACs\n",
            self.critical_path_macs(),
            self.serial_macs(),
            self.totals.total()
        ));
        out
    }
}

/// Per-step decode MAC table from the real network shapes. `y_grid` is the
/// padded luma row grid and `c_grid` the padded full chroma grid, both
/// multiples of [`HYPER_PAD`] (the container reports both via `inspect`).
pub fn schedule_report(
    variant: Variant,
    m: usize,
    y_grid: (usize, usize),
    c_grid: (usize, usize),
) -> ScheduleReport {
    assert!(y_grid.0 % HYPER_PAD == 0 && y_grid.1 % HYPER_PAD == 0);
    assert!(c_grid.0 % HYPER_PAD == 0 && c_grid.1 % HYPER_PAD == 0);
    let ypx = [
        y_grid.0 * y_grid.1,
        (y_grid.0 / 2) * (y_grid.1 / 2),
        (y_grid.0 / 4) * (y_grid.1 / 4),
    ];
    let cpx = [
        c_grid.0 * c_grid.1,
        (c_grid.0 / 2) * (c_grid.1 / 2),
        (c_grid.0 / 4) * (c_grid.1 / 4),
    ];
    let mut steps = Vec::new();
    let mut push = |label: String, lanes: Vec<u64>, symbol_context: bool| {
        steps.push(StepCost { label, lanes, symbol_context });
    };

    let y_dec = conv_macs(m, m, 2, ypx[2]) + conv_macs(m, m, 2, ypx[1]) + conv_macs(m, m, 3, ypx[0]);
    push("y.dec".into(), vec![y_dec], false);
    match variant {
        Variant::NoContext => {
            let head = conv_macs(m, LUMA_CHANNELS, 1, ypx[0])
                + conv_macs(LUMA_CHANNELS, 2 * LUMA_CHANNELS, 1, ypx[0]);
            push("y.head".into(), vec![head], false);
        }
        Variant::FullParallelPpcm => {
            for j in 0..9 {
                let cin = m + if j == 0 { 0 } else { 4 * COLUMN_WIDTHS[j - 1] };
                push(
                    format!("y.par.s{j}"),
                    vec![pn_macs(m, 4 * COLUMN_WIDTHS[j], cin, ypx[0])],
                    j > 0,
                );
            }
        }
        _ => {
            for j in 0..9 {
                push(
                    format!("y.row1.s{j}"),
                    vec![pn_macs(m, COLUMN_WIDTHS[j], m + column_offset(j), ypx[0])],
                    j > 0,
                );
            }
            let prior = conv_macs(64 + m, m, 1, ypx[0])
                + conv_macs(m, m, 3, ypx[0])
                + conv_macs(m, m, 1, ypx[0]);
            push("y.prior_net".into(), vec![prior], true);
            let sched = lane_schedule(variant != Variant::NoShift);
            for k in 0..9 {
                let cin = m + if k == 0 {
                    0
                } else {
                    sched[k - 1].iter().map(|&c| COLUMN_WIDTHS[c]).sum::<usize>()
                };
                let lanes = sched[k]
                    .iter()
                    .map(|&col| pn_macs(m, COLUMN_WIDTHS[col], cin, ypx[0]))
                    .collect();
                push(format!("y.lane.s{k}"), lanes, true);
            }
        }
    }

    match variant {
        Variant::CheckerboardCbcr => {
            let c_dec = conv_macs(m, m, 2, cpx[2])
                + conv_macs(m, m, 2, cpx[1])
                + conv_macs(m, m, 3, cpx[0]);
            push("c.dec".into(), vec![c_dec], false);
            push("c.pn_a".into(), vec![pn_macs(m, CHROMA_CHANNELS, m, cpx[0])], false);
            push("c.ctx".into(), vec![conv_macs(CHROMA_CHANNELS, m, 3, cpx[0])], true);
            push("c.pn_na".into(), vec![pn_macs(m, CHROMA_CHANNELS, 2 * m, cpx[0])], true);
        }
        Variant::NoCccm => {
            let c_dec = conv_macs(m, m, 2, cpx[2]) + conv_macs(m, m, 3, cpx[1]);
            push("c.dec".into(), vec![c_dec], false);
            push("c.anchor".into(), vec![pn_macs(m, 2 * CHROMA_CHANNELS, m, cpx[1])], false);
            push("c.non_anchor".into(), vec![pn_macs(m, 2 * CHROMA_CHANNELS, m, cpx[1])], false);
        }
        _ => {
            let c_dec = conv_macs(m, m, 2, cpx[2]) + conv_macs(m, m, 3, cpx[1]);
            push("c.dec".into(), vec![c_dec], false);
            push("c.anchor".into(), vec![pn_macs(m, 2 * CHROMA_CHANNELS, m, cpx[1])], false);
            push(
                "c.non_anchor".into(),
                vec![pn_macs(m, 2 * CHROMA_CHANNELS, m + 2 * CHROMA_CHANNELS, cpx[1])],
                true,
            );
        }
    }

    ScheduleReport { variant, m, steps, totals: mac_count(variant, m, y_grid, c_grid) }
}
