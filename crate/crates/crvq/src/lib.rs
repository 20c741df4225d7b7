//! File formats, batch quantization and the `crvq` command line on top of
//! [`crvq_core`].

pub mod batch;
pub mod bitpack;
pub mod cli;
pub mod format;
pub mod settings;
pub mod synth;

pub use format::{
    load_matrix, load_quantized, save_matrix, save_quantized, FormatError, LAYER_MAGIC, MATRIX_MAGIC,
};
