//! Channel-relaxed additive vector quantization of weight matrices.
//!
//! A weight matrix is cut into `d`-wide row segments which are encoded against a
//! shared *basic* codebook. A small set of input channels, picked by an
//! importance score and moved next to each other by a column permutation, is
//! additionally encoded by `m - 1` *extended* codebooks whose entries add onto
//! the basic reconstruction. Codebooks are then fine-tuned against the
//! calibration proxy loss `||WX - ŴX||²` and codes re-selected with a beam
//! search.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. File formats,
//! batch processing and the command line live in the `crvq` crate.
#![no_std]
#![forbid(unsafe_code)]
#![warn(missing_docs)]

extern crate alloc;

pub mod bitbudget;
pub mod config;
pub mod error;
pub mod importance;
mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod rng;
pub mod vq;

pub use bitbudget::{avg_bits_crvq, avg_bits_vq, sweep, BitReport, StorageWidths};
pub use config::{FinetuneParams, ImportanceForm, ImportanceMetric, QuantConfig, ReorderScope};
pub use error::{Error, Result};
pub use importance::{ChannelPermutation, Direction, ImportanceVector};
pub use matrix::{CalibrationSet, WeightMatrix};
pub use pipeline::{decode_layer, quantize_layer, LayerParams, QuantReport, QuantizedLayer};
pub use vq::{CodeMatrix, Codebook, VectorSet};
