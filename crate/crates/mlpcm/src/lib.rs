//! Lossless recompression of baseline JPEG files with learned conditional
//! entropy models and integer range coding.
//!
//! The crate is organised as a pipeline:
//!
//! * [`jpeg`] parses and re-serialises baseline JPEG files at the quantized
//!   DCT coefficient level, bit-exactly.
//! * [`layout`] rearranges coefficient blocks into the channel/grid tensors
//!   the models consume (frequency-ordered channels, space-to-depth rows,
//!   chroma groups).
//! * [`autodiff`] is a minimal reverse-mode engine over NCHW `f32` tensors
//!   with a fixed reduction order, plus the Adam optimiser and checkpoint
//!   serialisation.
//! * [`entropy`] holds the discretized Gaussian conditional model, the
//!   factorized prior for hyper-latents, and quantized CDF table
//!   construction.
//! * [`rangecoder`] is a byte-oriented integer range coder with a raw-bit
//!   bypass channel.
//! * [`nets`] assembles the hyper networks, parameter networks and the two
//!   context models (pipelined luma, compressed-checkerboard chroma).
//! * [`pipeline`] defines the container format, the decode schedule, and the
//!   encode/decode/transcode entry points.
//! * [`trainer`] implements the staged training loop on coefficient patches.
//! * [`analysis`] provides the measurement surface (rate reports, zero-
//!   fraction statistics, similarity, schedule/FLOP accounting).

pub mod analysis;
pub mod autodiff;
pub mod entropy;
pub mod jpeg;
pub mod layout;
pub mod math;
pub mod nets;
pub mod pipeline;
pub mod rangecoder;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testsupport;
