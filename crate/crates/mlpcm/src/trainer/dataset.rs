//! Training data pipeline: decoded source pixels, aligned random crops, and
//! re-quantization at the configured quality.
//!
//! Sources are JPEG files; they are fully decoded to pixel planes once at
//! load time. Each drawn sample crops a patch on a 16-pixel boundary (so the
//! block and MCU grids of the crop are exact), forward-transforms it, and
//! quantizes with the tables of the sample's quality setting. Sampling is
//! driven entirely by the caller's seeded generator, so a seed pins the whole
//! batch sequence.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::jpeg::{
    parse_jpeg, tables_for_quality, CoeffPlane, QuantizedImage, Subsampling, COEFF_MAX, COEFF_MIN,
};
use crate::layout::{chroma_groups, chroma_stacked, luma_layout, ChannelTensor, ChromaGroups, LumaLayout};
use crate::math::{dct8x8, idct8x8};

use super::TrainError;

/// Qualities of the mixed setting, drawn uniformly per sample.
pub const MIXED_QPS: [u8; 5] = [96, 97, 98, 99, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpSetting {
    Single(u8),
    Mixed,
}

impl QpSetting {
    pub fn draw(self, rng: &mut ChaCha8Rng) -> u8 {
        match self {
            QpSetting::Single(q) => q,
            QpSetting::Mixed => MIXED_QPS[rng.gen_range(0..MIXED_QPS.len())],
        }
    }
}

/// One full-resolution pixel plane, levels 0..=255 stored as f32.
#[derive(Debug, Clone)]
pub struct PixelPlane {
    pub w: usize,
    pub h: usize,
    pub data: Vec<f32>,
}

impl PixelPlane {
    fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }
}

struct SourceImage {
    path: PathBuf,
    y: PixelPlane,
    cb: PixelPlane,
    cr: PixelPlane,
}

/// One training sample: the luma layout, the chroma groups, and the stacked
/// chroma tensor the hyper encoder and checkerboard passes consume.
pub struct Sample {
    pub luma: LumaLayout,
    pub chroma: ChromaGroups,
    pub stacked: ChannelTensor,
    pub qp: u8,
}

pub struct Dataset {
    images: Vec<SourceImage>,
    pub subsampling: Subsampling,
}

/// Reconstruct the pixel plane of one component by dequantizing and inverse
/// transforming every block, then cropping the MCU padding.
pub fn decode_component(img: &QuantizedImage, comp: usize) -> PixelPlane {
    let plane = &img.planes[comp];
    let q = &img.qtables[img.components[comp].tq as usize];
    let (w, h) = match (comp, img.subsampling) {
        (0, _) | (_, Subsampling::Ycbcr444) => (img.width as usize, img.height as usize),
        (_, Subsampling::Ycbcr420) => {
            ((img.width as usize).div_ceil(2), (img.height as usize).div_ceil(2))
        }
    };
    plane_to_pixels(plane, q, w, h)
}

/// Dequantize and inverse transform a coefficient plane, cropping to `w`x`h`
/// pixels (levels round to integers and clamp to 0..=255).
pub fn plane_to_pixels(plane: &CoeffPlane, q: &[u16; 64], w: usize, h: usize) -> PixelPlane {
    let mut data = vec![0.0f32; w * h];
    for by in 0..plane.blocks_h {
        for bx in 0..plane.blocks_w {
            let base = (by * plane.blocks_w + bx) * 64;
            let mut f = [0.0f64; 64];
            for k in 0..64 {
                f[k] = plane.coeffs[base + k] as f64 * q[k] as f64;
            }
            let s = idct8x8(&f);
            for yy in 0..8 {
                let py = by * 8 + yy;
                if py >= h {
                    break;
                }
                for xx in 0..8 {
                    let px = bx * 8 + xx;
                    if px >= w {
                        break;
                    }
                    data[py * w + px] = (s[yy * 8 + xx] + 128.0).round().clamp(0.0, 255.0) as f32;
                }
            }
        }
    }
    PixelPlane { w, h, data }
}

/// Forward-transform and quantize a `size`x`size` pixel window into a
/// coefficient plane. Ties round away from zero, like the requantizer.
pub fn quantize_patch(
    pix: &PixelPlane,
    ox: usize,
    oy: usize,
    size: usize,
    q: &[u16; 64],
) -> CoeffPlane {
    assert!(size % 8 == 0 && ox + size <= pix.w && oy + size <= pix.h, "patch out of range");
    let blocks = size / 8;
    let mut coeffs = Vec::with_capacity(blocks * blocks * 64);
    for by in 0..blocks {
        for bx in 0..blocks {
            let mut s = [0.0f64; 64];
            for yy in 0..8 {
                for xx in 0..8 {
                    s[yy * 8 + xx] =
                        pix.at(oy + by * 8 + yy, ox + bx * 8 + xx) as f64 - 128.0;
                }
            }
            let f = dct8x8(&s);
            for k in 0..64 {
                let v = (f[k] / q[k] as f64).round();
                coeffs.push(v.clamp(COEFF_MIN as f64, COEFF_MAX as f64) as i16);
            }
        }
    }
    CoeffPlane { blocks_w: blocks, blocks_h: blocks, coeffs }
}

impl Dataset {
    /// Load every JPEG in `dir` (sorted by name) and decode it to pixels.
    /// All sources must share one subsampling so samples batch cleanly.
    pub fn load(dir: &Path) -> Result<Dataset, TrainError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| TrainError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(|r| r.ok().map(|d| d.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                    Some(ref e) if e == "jpg" || e == "jpeg"
                )
            })
            .collect();
        paths.sort();
        let mut images = Vec::with_capacity(paths.len());
        let mut subsampling = None;
        for path in paths {
            let bytes = std::fs::read(&path)
                .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
            let img = parse_jpeg(&bytes)
                .map_err(|e| TrainError::Source { path: path.display().to_string(), source: e })?;
            match subsampling {
                None => subsampling = Some(img.subsampling),
                Some(s) if s != img.subsampling => {
                    return Err(TrainError::MixedSubsampling(path.display().to_string()));
                }
                _ => {}
            }
            images.push(SourceImage {
                path,
                y: decode_component(&img, 0),
                cb: decode_component(&img, 1),
                cr: decode_component(&img, 2),
            });
        }
        let Some(subsampling) = subsampling else {
            return Err(TrainError::EmptyDataset);
        };
        Ok(Dataset { images, subsampling })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Indices of images at least `patch` pixels in both dimensions.
    fn eligible(&self, patch: usize) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| self.images[i].y.w >= patch && self.images[i].y.h >= patch)
            .collect()
    }

    /// Draw one sample: uniform image, uniform 16-aligned crop, quality per
    /// the setting.
    pub fn sample(
        &self,
        rng: &mut ChaCha8Rng,
        patch: usize,
        qp: QpSetting,
    ) -> Result<Sample, TrainError> {
        let eligible = self.eligible(patch);
        if eligible.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let img = &self.images[eligible[rng.gen_range(0..eligible.len())]];
        let ox = 16 * rng.gen_range(0..=(img.y.w - patch) / 16);
        let oy = 16 * rng.gen_range(0..=(img.y.h - patch) / 16);
        let quality = qp.draw(rng);
        let (qy, qc) = tables_for_quality(quality);
        let y = quantize_patch(&img.y, ox, oy, patch, &qy);
        let (cb, cr) = match self.subsampling {
            Subsampling::Ycbcr444 => (
                quantize_patch(&img.cb, ox, oy, patch, &qc),
                quantize_patch(&img.cr, ox, oy, patch, &qc),
            ),
            Subsampling::Ycbcr420 => (
                quantize_patch(&img.cb, ox / 2, oy / 2, patch / 2, &qc),
                quantize_patch(&img.cr, ox / 2, oy / 2, patch / 2, &qc),
            ),
        };
        Ok(Sample {
            luma: luma_layout(&y),
            chroma: chroma_groups(&cb, &cr),
            stacked: chroma_stacked(&cb, &cr),
            qp: quality,
        })
    }

    pub fn batch(
        &self,
        rng: &mut ChaCha8Rng,
        patch: usize,
        batch: usize,
        qp: QpSetting,
    ) -> Result<Vec<Sample>, TrainError> {
        (0..batch).map(|_| self.sample(rng, patch, qp)).collect()
    }

    /// Paths in load order, for diagnostics.
    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.images.iter().map(|i| i.path.as_path())
    }
}
