//! Rearranging coefficient planes into the tensors the models consume.
//!
//! A block plane becomes a 64-channel tensor over the block grid. Channels
//! are ordered by descending frequency: channel `c` holds the coefficient at
//! zigzag position `63 - c`, so channel 0 is the highest-frequency
//! coefficient and channel 63 is DC. Luma is then split 2x2 space-to-depth
//! into four row tensors; chroma planes are stacked to 128 channels and
//! grouped 2x2 into four location groups, two of which (the diagonal pair)
//! form the anchor.
//!
//! Odd grid dimensions are edge-replicated up to even before any 2x2
//! regrouping; original dimensions travel alongside so decode can crop.

use crate::jpeg::{CoeffPlane, ZIGZAG};

/// Channel count of one block plane.
pub const FREQ_CHANNELS: usize = 64;

/// Column widths of the luma frequency partition, highest frequencies first;
/// the final single-channel column is DC. Sums to 64.
pub const COLUMN_WIDTHS: [usize; 9] = [28, 8, 7, 6, 5, 4, 3, 2, 1];

/// First channel of (0-based) column `j`.
pub fn column_offset(j: usize) -> usize {
    COLUMN_WIDTHS[..j].iter().sum()
}

/// Channel-major integer tensor `[c][h][w]` over a block grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelTensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<i16>,
}

impl ChannelTensor {
    pub fn zeroed(c: usize, h: usize, w: usize) -> Self {
        ChannelTensor { c, h, w, data: vec![0; c * h * w] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> i16 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: i16) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    /// Copy of channels `[start, start + len)`.
    pub fn slice_channels(&self, start: usize, len: usize) -> ChannelTensor {
        let plane = self.h * self.w;
        ChannelTensor {
            c: len,
            h: self.h,
            w: self.w,
            data: self.data[start * plane..(start + len) * plane].to_vec(),
        }
    }

    /// Stack channel-wise; all inputs must share the spatial grid.
    pub fn concat(parts: &[&ChannelTensor]) -> ChannelTensor {
        let (h, w) = (parts[0].h, parts[0].w);
        debug_assert!(parts.iter().all(|p| p.h == h && p.w == w));
        let c = parts.iter().map(|p| p.c).sum();
        let mut data = Vec::with_capacity(c * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        ChannelTensor { c, h, w, data }
    }

    /// Edge-replicate to even height/width (no-op when already even).
    pub fn pad_to_even(&self) -> ChannelTensor {
        let nh = self.h + self.h % 2;
        let nw = self.w + self.w % 2;
        if nh == self.h && nw == self.w {
            return self.clone();
        }
        let mut out = ChannelTensor::zeroed(self.c, nh, nw);
        for c in 0..self.c {
            for y in 0..nh {
                let sy = y.min(self.h - 1);
                for x in 0..nw {
                    let sx = x.min(self.w - 1);
                    out.set(c, y, x, self.at(c, sy, sx));
                }
            }
        }
        out
    }

    /// Keep the top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> ChannelTensor {
        if h == self.h && w == self.w {
            return self.clone();
        }
        let mut out = ChannelTensor::zeroed(self.c, h, w);
        for c in 0..self.c {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.at(c, y, x));
                }
            }
        }
        out
    }
}

/// Block plane -> frequency-ordered channel tensor.
pub fn blocks_to_channels(plane: &CoeffPlane) -> ChannelTensor {
    let mut out = ChannelTensor::zeroed(FREQ_CHANNELS, plane.blocks_h, plane.blocks_w);
    for c in 0..FREQ_CHANNELS {
        let pos = ZIGZAG[63 - c];
        for by in 0..plane.blocks_h {
            for bx in 0..plane.blocks_w {
                out.set(c, by, bx, plane.block(bx, by)[pos]);
            }
        }
    }
    out
}

/// Inverse of [`blocks_to_channels`].
pub fn channels_to_blocks(t: &ChannelTensor) -> CoeffPlane {
    debug_assert_eq!(t.c, FREQ_CHANNELS);
    let mut plane = CoeffPlane::zeroed(t.w, t.h);
    for c in 0..FREQ_CHANNELS {
        let pos = ZIGZAG[63 - c];
        for by in 0..t.h {
            for bx in 0..t.w {
                plane.block_mut(bx, by)[pos] = t.at(c, by, bx);
            }
        }
    }
    plane
}

/// 2x2 space-to-depth on an even grid. Row order is raster: top-left,
/// top-right, bottom-left, bottom-right.
pub fn space_to_depth(t: &ChannelTensor) -> [ChannelTensor; 4] {
    debug_assert!(t.h % 2 == 0 && t.w % 2 == 0);
    let (h2, w2) = (t.h / 2, t.w / 2);
    let mut rows: [ChannelTensor; 4] = std::array::from_fn(|_| ChannelTensor::zeroed(t.c, h2, w2));
    for (i, row) in rows.iter_mut().enumerate() {
        let (dy, dx) = (i / 2, i % 2);
        for c in 0..t.c {
            for y in 0..h2 {
                for x in 0..w2 {
                    row.set(c, y, x, t.at(c, 2 * y + dy, 2 * x + dx));
                }
            }
        }
    }
    rows
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(rows: &[ChannelTensor; 4]) -> ChannelTensor {
    let (c, h2, w2) = (rows[0].c, rows[0].h, rows[0].w);
    let mut out = ChannelTensor::zeroed(c, h2 * 2, w2 * 2);
    for (i, row) in rows.iter().enumerate() {
        let (dy, dx) = (i / 2, i % 2);
        for ch in 0..c {
            for y in 0..h2 {
                for x in 0..w2 {
                    out.set(ch, 2 * y + dy, 2 * x + dx, row.at(ch, y, x));
                }
            }
        }
    }
    out
}

/// Luma coefficients arranged as four 64-channel row tensors over half the
/// (padded) block grid.
#[derive(Debug, Clone)]
pub struct LumaLayout {
    pub rows: [ChannelTensor; 4],
    /// Block-grid dimensions before padding, for the decode-side crop.
    pub grid_h: usize,
    pub grid_w: usize,
}

impl LumaLayout {
    /// All four rows stacked to 256 channels (hyper-encoder input view).
    pub fn stacked(&self) -> ChannelTensor {
        ChannelTensor::concat(&[&self.rows[0], &self.rows[1], &self.rows[2], &self.rows[3]])
    }

    /// Channels of one column slice of one row (0-based indices).
    pub fn slice(&self, row: usize, col: usize) -> ChannelTensor {
        self.rows[row].slice_channels(column_offset(col), COLUMN_WIDTHS[col])
    }
}

pub fn luma_layout(plane: &CoeffPlane) -> LumaLayout {
    let t = blocks_to_channels(plane).pad_to_even();
    LumaLayout { rows: space_to_depth(&t), grid_h: plane.blocks_h, grid_w: plane.blocks_w }
}

pub fn luma_restore(layout: &LumaLayout) -> CoeffPlane {
    let t = depth_to_space(&layout.rows).crop(layout.grid_h, layout.grid_w);
    channels_to_blocks(&t)
}

/// Chroma coefficients: Cb and Cr stacked to 128 channels, then grouped 2x2
/// into four location groups over half the (padded) chroma grid.
#[derive(Debug, Clone)]
pub struct ChromaGroups {
    pub groups: [ChannelTensor; 4],
    pub grid_h: usize,
    pub grid_w: usize,
}

impl ChromaGroups {
    /// The diagonal pair (groups 2 and 3), coded first.
    pub fn anchor(&self) -> ChannelTensor {
        ChannelTensor::concat(&[&self.groups[1], &self.groups[2]])
    }

    /// Groups 1 and 4, coded second.
    pub fn non_anchor(&self) -> ChannelTensor {
        ChannelTensor::concat(&[&self.groups[0], &self.groups[3]])
    }

    pub fn from_anchor_pair(
        anchor: &ChannelTensor,
        non_anchor: &ChannelTensor,
        grid_h: usize,
        grid_w: usize,
    ) -> ChromaGroups {
        let g2 = anchor.slice_channels(0, 128);
        let g3 = anchor.slice_channels(128, 128);
        let g1 = non_anchor.slice_channels(0, 128);
        let g4 = non_anchor.slice_channels(128, 128);
        ChromaGroups { groups: [g1, g2, g3, g4], grid_h, grid_w }
    }
}

/// Cb and Cr stacked channel-wise, padded to an even grid. This is both the
/// grouping input and the chroma hyper-encoder input.
pub fn chroma_stacked(cb: &CoeffPlane, cr: &CoeffPlane) -> ChannelTensor {
    let tcb = blocks_to_channels(cb);
    let tcr = blocks_to_channels(cr);
    ChannelTensor::concat(&[&tcb, &tcr]).pad_to_even()
}

pub fn chroma_groups(cb: &CoeffPlane, cr: &CoeffPlane) -> ChromaGroups {
    let stacked = chroma_stacked(cb, cr);
    ChromaGroups {
        groups: space_to_depth(&stacked),
        grid_h: cb.blocks_h,
        grid_w: cb.blocks_w,
    }
}

pub fn chroma_restore(groups: &ChromaGroups) -> (CoeffPlane, CoeffPlane) {
    let stacked = depth_to_space(&groups.groups).crop(groups.grid_h, groups.grid_w);
    let cb = stacked.slice_channels(0, FREQ_CHANNELS);
    let cr = stacked.slice_channels(FREQ_CHANNELS, FREQ_CHANNELS);
    (channels_to_blocks(&cb), channels_to_blocks(&cr))
}
