//! On-disk formats.
//!
//! Dense matrix (`CRVQT1`), little-endian throughout:
//!
//! ```text
//! "CRVQT1" | u32 rows | u32 cols | u8 dtype (0 = f32) | rows·cols f32, row-major
//! ```
//!
//! Quantized layer (`CRVQP1`):
//!
//! ```text
//! "CRVQP1" | u32 M | u32 N | u16 d | u16 e | u16 m | u32 important_cols | u64 seed
//!   | N × u32 permutation (position -> original column)
//!   | m × 2^e × d f32 codebook values, basic codebook first
//!   | m code streams, e bits per code (see `bitpack`), each padded to a byte:
//!       stream 0: M·N/d codes, stream t > 0: M·important_cols/d codes, row-major
//! ```

use std::fs;
use std::path::Path;

use crvq_core::bitbudget::{avg_bits_crvq_with, BitReport, RatioRounding, StorageWidths};
use crvq_core::{ChannelPermutation, CodeMatrix, Codebook, LayerParams, QuantizedLayer, WeightMatrix};

use crate::bitpack::{self, UnpackError};

/// Magic of dense matrix files.
pub const MATRIX_MAGIC: &[u8; 6] = b"CRVQT1";
/// Magic of quantized layer files.
pub const LAYER_MAGIC: &[u8; 6] = b"CRVQP1";
/// Bytes before the matrix payload.
pub const MATRIX_HEADER_LEN: usize = 6 + 4 + 4 + 1;
/// Bytes before the permutation of a quantized layer.
pub const LAYER_HEADER_LEN: usize = 6 + 4 + 4 + 2 + 2 + 2 + 4 + 8;

const DTYPE_F32: u8 = 0;

/// Errors reading or writing the file formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    /// The file does not start with the expected magic.
    #[error("bad magic")]
    BadMagic,
    /// Right format family, unsupported version.
    #[error("unsupported format version {0:?}")]
    VersionMismatch(char),
    /// The file ends inside its header, permutation or codebooks.
    #[error("truncated file")]
    TruncatedFile,
    /// Code streams are short, long, or carry nonzero padding.
    #[error("corrupt code stream: {0}")]
    CorruptCodeStream(String),
    /// A stored value is NaN or infinite.
    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),
    /// Header fields are out of range or inconsistent.
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    /// Bytes remain after the matrix payload.
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    /// The layer failed its consistency checks.
    #[error(transparent)]
    Layer(#[from] crvq_core::Error),
    /// Filesystem error.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(FormatError::TruncatedFile)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::TruncatedFile)?)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFiniteValue(i));
        }
        Ok(values)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn check_magic(bytes: &[u8], magic: &[u8; 6]) -> Result<(), FormatError> {
    if bytes.len() < 6 {
        return if magic.starts_with(bytes) { Err(FormatError::TruncatedFile) } else { Err(FormatError::BadMagic) };
    }
    if &bytes[..6] == magic {
        Ok(())
    } else if bytes[..5] == magic[..5] {
        Err(FormatError::VersionMismatch(bytes[5] as char))
    } else {
        Err(FormatError::BadMagic)
    }
}

/// Serializes a dense matrix.
pub fn encode_matrix(m: &WeightMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    out.push(DTYPE_F32);
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads the dimensions from the start of a dense matrix file.
pub fn peek_matrix_dims(bytes: &[u8]) -> Result<(usize, usize), FormatError> {
    check_magic(bytes, MATRIX_MAGIC)?;
    let mut r = Reader { bytes, pos: 6 };
    Ok((r.u32()? as usize, r.u32()? as usize))
}

/// Parses a dense matrix.
pub fn decode_matrix(bytes: &[u8]) -> Result<WeightMatrix, FormatError> {
    check_magic(bytes, MATRIX_MAGIC)?;
    let mut r = Reader { bytes, pos: 6 };
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let dtype = r.take(1)?[0];
    if dtype != DTYPE_F32 {
        return Err(FormatError::InvalidHeader(format!("unsupported dtype {dtype}")));
    }
    if rows == 0 || cols == 0 {
        return Err(FormatError::InvalidHeader(format!("empty {rows}x{cols} matrix")));
    }
    let data = r.f32s(rows.checked_mul(cols).ok_or(FormatError::TruncatedFile)?)?;
    if r.remaining() != 0 {
        return Err(FormatError::TrailingBytes(r.remaining()));
    }
    Ok(WeightMatrix::new(rows, cols, data)?)
}

/// Serializes a quantized layer.
pub fn encode_layer(layer: &QuantizedLayer) -> Vec<u8> {
    let p = layer.params();
    let mut out = Vec::with_capacity(layer_file_len(p));
    out.extend_from_slice(LAYER_MAGIC);
    out.extend_from_slice(&(p.rows as u32).to_le_bytes());
    out.extend_from_slice(&(p.cols as u32).to_le_bytes());
    out.extend_from_slice(&(p.dim as u16).to_le_bytes());
    out.extend_from_slice(&(p.code_bits as u16).to_le_bytes());
    out.extend_from_slice(&(p.num_codebooks as u16).to_le_bytes());
    out.extend_from_slice(&(p.important_cols as u32).to_le_bytes());
    out.extend_from_slice(&p.seed.to_le_bytes());
    for &c in layer.permutation().forward() {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for cb in layer.codebooks() {
        for v in cb.entries() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for stream in layer.codes().streams() {
        out.extend_from_slice(&bitpack::pack(stream, p.code_bits));
    }
    out
}

/// Exact size in bytes of a packed layer.
pub fn layer_file_len(p: &LayerParams) -> usize {
    let basic = p.rows * p.cols / p.dim;
    let extended = p.rows * p.important_cols / p.dim;
    LAYER_HEADER_LEN
        + 4 * p.cols
        + 4 * p.num_codebooks * (1 << p.code_bits) * p.dim
        + bitpack::packed_len(basic, p.code_bits)
        + (p.num_codebooks - 1) * bitpack::packed_len(extended, p.code_bits)
}

fn header_params(r: &mut Reader<'_>) -> Result<LayerParams, FormatError> {
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let dim = r.u16()? as usize;
    let code_bits = r.u16()? as u32;
    let num_codebooks = r.u16()? as usize;
    let important_cols = r.u32()? as usize;
    let seed = r.u64()?;
    let bad = |msg: String| Err(FormatError::InvalidHeader(msg));
    if rows == 0 || cols == 0 || dim == 0 || cols % dim != 0 {
        return bad(format!("shape {rows}x{cols} with d={dim}"));
    }
    if !(1..=16).contains(&code_bits) || num_codebooks == 0 {
        return bad(format!("e={code_bits}, m={num_codebooks}"));
    }
    if important_cols > cols || important_cols % dim != 0 {
        return bad(format!("important width {important_cols}"));
    }
    Ok(LayerParams { rows, cols, dim, code_bits, num_codebooks, important_cols, seed })
}

/// Parses a quantized layer.
pub fn decode_layer_bytes(bytes: &[u8]) -> Result<QuantizedLayer, FormatError> {
    check_magic(bytes, LAYER_MAGIC)?;
    let mut r = Reader { bytes, pos: 6 };
    let p = header_params(&mut r)?;

    let forward = r
        .take(4 * p.cols)?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
        .collect();
    let perm = ChannelPermutation::from_forward(forward)?;

    let entries = (1usize << p.code_bits) * p.dim;
    let codebooks = (0..p.num_codebooks)
        .map(|_| Ok(Codebook::new(p.dim, p.code_bits, r.f32s(entries)?)?))
        .collect::<Result<Vec<_>, FormatError>>()?;

    let groups = p.cols / p.dim;
    let important_groups = p.important_cols / p.dim;
    let mut streams = Vec::with_capacity(p.num_codebooks);
    for t in 0..p.num_codebooks {
        let count = p.rows * if t == 0 { groups } else { important_groups };
        let len = bitpack::packed_len(count, p.code_bits);
        if r.remaining() < len {
            return Err(FormatError::CorruptCodeStream(format!(
                "stream {t} needs {len} bytes, {} left",
                r.remaining()
            )));
        }
        let codes = bitpack::unpack(r.take(len)?, count, p.code_bits).map_err(|e| match e {
            UnpackError::Padding => FormatError::CorruptCodeStream(format!("stream {t} has nonzero padding")),
            UnpackError::Length { expected, found } => {
                FormatError::CorruptCodeStream(format!("stream {t}: {found} of {expected} bytes"))
            }
        })?;
        streams.push(codes);
    }
    if r.remaining() != 0 {
        return Err(FormatError::CorruptCodeStream(format!(
            "{} bytes after the last stream",
            r.remaining()
        )));
    }
    let codes = CodeMatrix::new(p.rows, groups, important_groups, p.code_bits, streams)?;
    Ok(QuantizedLayer::new(p, perm, codebooks, codes)?)
}

/// Bit-budget prediction for the packed form of `p` (32-bit values and
/// indices, header excluded).
pub fn predicted_bits(p: &LayerParams) -> BitReport {
    avg_bits_crvq_with(
        p.rows,
        p.cols,
        p.num_codebooks,
        p.dim,
        p.code_bits,
        p.important_cols as f64 / p.cols as f64,
        StorageWidths::ON_DISK,
        RatioRounding::Nominal,
    )
}

/// Bits per weight of a packed layer of `file_len` bytes.
pub fn measured_bits(p: &LayerParams, file_len: usize) -> f64 {
    file_len as f64 * 8.0 / (p.rows as f64 * p.cols as f64)
}

/// Reads a dense matrix file.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<WeightMatrix, FormatError> {
    decode_matrix(&fs::read(path)?)
}

/// Writes a dense matrix file.
pub fn save_matrix(m: &WeightMatrix, path: impl AsRef<Path>) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_matrix(m))?)
}

/// Reads a quantized layer file.
pub fn load_quantized(path: impl AsRef<Path>) -> Result<QuantizedLayer, FormatError> {
    decode_layer_bytes(&fs::read(path)?)
}

/// Writes a quantized layer file.
pub fn save_quantized(layer: &QuantizedLayer, path: impl AsRef<Path>) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_layer(layer))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_layout() {
        let m = WeightMatrix::new(2, 4, vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[..6], b"CRVQT1");
        assert_eq!(&bytes[6..15], &[2, 0, 0, 0, 4, 0, 0, 0, 0]);
        assert_eq!(&bytes[15..19], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), MATRIX_HEADER_LEN + 32);
        assert_eq!(decode_matrix(&bytes).unwrap(), m);
    }

    #[test]
    fn matrix_errors() {
        let m = WeightMatrix::zeros(2, 2);
        let mut bytes = encode_matrix(&m);
        let mut bad = bytes.clone();
        bad[..6].copy_from_slice(b"XXXXXX");
        assert!(matches!(decode_matrix(&bad), Err(FormatError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[5] = b'2';
        assert!(matches!(decode_matrix(&v2), Err(FormatError::VersionMismatch('2'))));
        assert!(matches!(decode_matrix(&bytes[..bytes.len() - 1]), Err(FormatError::TruncatedFile)));
        assert!(matches!(decode_matrix(&bytes[..3]), Err(FormatError::TruncatedFile)));
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_matrix(&bytes), Err(FormatError::NonFiniteValue(3))));
        let mut long = encode_matrix(&m);
        long.push(0);
        assert!(matches!(decode_matrix(&long), Err(FormatError::TrailingBytes(1))));
    }
}
