//! Fixed-width little-endian bit packing of code streams.
//!
//! Code `i` occupies stream bits `[i·w, (i+1)·w)`, where stream bit `k` is bit
//! `k % 8` of byte `k / 8`. The stream is padded with zero bits to a whole
//! byte at its end only.

/// Bytes needed for `count` codes of `width` bits.
pub fn packed_len(count: usize, width: u32) -> usize {
    (count * width as usize).div_ceil(8)
}

/// Packs `codes` at `width` bits each. Bits above `width` must be zero.
pub fn pack(codes: &[u16], width: u32) -> Vec<u8> {
    debug_assert!((1..=16).contains(&width));
    let mut out = Vec::with_capacity(packed_len(codes.len(), width));
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    for &c in codes {
        debug_assert!(width == 16 || (c as u32) >> width == 0);
        acc |= (c as u64) << filled;
        filled += width;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    out
}

/// Why a stream failed to unpack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnpackError {
    /// The buffer length is not exactly [`packed_len`].
    Length { expected: usize, found: usize },
    /// Padding bits after the last code are not zero.
    Padding,
}

/// Inverse of [`pack`]: reads exactly `count` codes from `bytes`.
pub fn unpack(bytes: &[u8], count: usize, width: u32) -> Result<Vec<u16>, UnpackError> {
    let expected = packed_len(count, width);
    if bytes.len() != expected {
        return Err(UnpackError::Length { expected, found: bytes.len() });
    }
    let mask = (1u64 << width) - 1;
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut next = bytes.iter();
    for _ in 0..count {
        while filled < width {
            acc |= (*next.next().expect("length checked") as u64) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u16);
        acc >>= width;
        filled -= width;
    }
    if acc != 0 {
        return Err(UnpackError::Padding);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_lsb_first() {
        // 3-bit codes 5, 3, 7 -> bits 101 110 111 (LSB first) -> 0b11_011_101, 0b1
        assert_eq!(pack(&[5, 3, 7], 3), vec![0b1101_1101, 0b0000_0001]);
        assert_eq!(pack(&[0xABCD], 16), vec![0xCD, 0xAB]);
        assert_eq!(packed_len(3, 3), 2);
    }

    #[test]
    fn rejects_bad_streams() {
        assert_eq!(unpack(&[0xFF], 3, 3), Err(UnpackError::Length { expected: 2, found: 1 }));
        assert_eq!(unpack(&[0x00, 0x80], 3, 3), Err(UnpackError::Padding));
    }

    proptest! {
        #[test]
        fn round_trip(width in 1u32..=16, raw in proptest::collection::vec(any::<u16>(), 0..200)) {
            let codes: Vec<u16> = raw.iter().map(|&c| if width == 16 { c } else { c & ((1 << width) - 1) }).collect();
            let bytes = pack(&codes, width);
            prop_assert_eq!(bytes.len(), packed_len(codes.len(), width));
            prop_assert_eq!(unpack(&bytes, codes.len(), width).unwrap(), codes);
        }
    }
}
