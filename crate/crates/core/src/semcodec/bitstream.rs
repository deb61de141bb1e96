//! The SEBF frame format.
//!
//! ```text
//! "SEBF" | u8 version=1 | u32 kb_version | u16 orig_w | u16 orig_h
//!        | u16 grid_w | u16 grid_h | u8 bits_coarse | u8 bits_fine
//! fine-flag bitmap   (one bit per cell, row-major, MSB first, byte padded)
//! class-flag bitmap  (same packing)
//! labels             (row-major cells; coarse: bits_coarse,
//!                     fine: 4 x bits_fine in TL,TR,BL,BR; byte padded)
//! u32 CRC-32 (IEEE) of every preceding byte
//! ```
//! Integers are little-endian.

use crate::bits::{BitReader, BitWriter};

use super::{CellCode, CodecError, SemanticFrame};

pub const MAGIC: &[u8; 4] = b"SEBF";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 19;
pub const CRC_LEN: usize = 4;

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub fn bitmap_len(n_cells: usize) -> usize {
    n_cells.div_ceil(8)
}

/// Total label bits before byte padding.
pub fn payload_bits(frame: &SemanticFrame) -> usize {
    (0..frame.cells.len()).map(|c| frame.cell_bits(c)).sum()
}

/// Serialized size in bytes, computed from the frame alone.
pub fn serialized_len(frame: &SemanticFrame) -> usize {
    HEADER_LEN + 2 * bitmap_len(frame.n_cells()) + payload_bits(frame).div_ceil(8) + CRC_LEN
}

fn write_header(frame: &SemanticFrame, out: &mut Vec<u8>) -> Result<(), CodecError> {
    let narrow = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| CodecError::Malformed(format!("{what} {v} exceeds u16")))
    };
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&frame.kb_version.to_le_bytes());
    out.extend_from_slice(&narrow(frame.original_width, "width")?.to_le_bytes());
    out.extend_from_slice(&narrow(frame.original_height, "height")?.to_le_bytes());
    out.extend_from_slice(&narrow(frame.grid_w, "grid width")?.to_le_bytes());
    out.extend_from_slice(&narrow(frame.grid_h, "grid height")?.to_le_bytes());
    out.push(frame.bits_coarse);
    out.push(frame.bits_fine);
    Ok(())
}

fn bitmap(flags: impl Iterator<Item = bool>) -> Vec<u8> {
    let mut w = BitWriter::new();
    for f in flags {
        w.push_bit(f);
    }
    w.into_bytes()
}

/// Writes one cell's labels into `w`.
pub(crate) fn write_cell(w: &mut BitWriter, frame: &SemanticFrame, code: &CellCode) {
    match *code {
        CellCode::Coarse(l) => w.push_bits(u64::from(l), u32::from(frame.bits_coarse)),
        CellCode::Fine(ls) => {
            for l in ls {
                w.push_bits(u64::from(l), u32::from(frame.bits_fine));
            }
        }
    }
}

fn check_shape(frame: &SemanticFrame) -> Result<(), CodecError> {
    if frame.cells.len() != frame.n_cells() || frame.class_flags.len() != frame.n_cells() {
        return Err(CodecError::Malformed("cell count does not match grid".into()));
    }
    if frame.bits_coarse > 32 || frame.bits_fine > 32 {
        return Err(CodecError::Malformed("label width above 32 bits".into()));
    }
    let fits = |l: u32, w: u8| w >= 32 || u64::from(l) < (1u64 << w);
    let ok = frame.cells.iter().all(|c| match *c {
        CellCode::Coarse(l) => fits(l, frame.bits_coarse),
        CellCode::Fine(ls) => ls.iter().all(|&l| fits(l, frame.bits_fine)),
    });
    if !ok {
        return Err(CodecError::Malformed("label wider than its field".into()));
    }
    Ok(())
}

pub fn serialize_frame(frame: &SemanticFrame) -> Result<Vec<u8>, CodecError> {
    check_shape(frame)?;
    let mut out = Vec::with_capacity(serialized_len(frame));
    write_header(frame, &mut out)?;
    out.extend(bitmap(frame.cells.iter().map(CellCode::is_fine)));
    out.extend(bitmap(frame.class_flags.iter().copied()));
    let mut w = BitWriter::new();
    for code in &frame.cells {
        write_cell(&mut w, frame, code);
    }
    out.extend(w.into_bytes());
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u16_at(b: &[u8], at: usize) -> usize {
    usize::from(u16::from_le_bytes([b[at], b[at + 1]]))
}

/// Parses an SEBF stream. A CRC mismatch still yields the parsed frame,
/// inside [`CodecError::Corrupt`].
pub fn deserialize_frame(bytes: &[u8]) -> Result<SemanticFrame, CodecError> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(CodecError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(bytes[4]));
    }
    let kb_version = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
    let original_width = u16_at(bytes, 9);
    let original_height = u16_at(bytes, 11);
    let grid_w = u16_at(bytes, 13);
    let grid_h = u16_at(bytes, 15);
    let bits_coarse = bytes[17];
    let bits_fine = bytes[18];
    if bits_coarse > 32 || bits_fine > 32 {
        return Err(CodecError::Malformed("label width above 32 bits".into()));
    }
    let n = grid_w * grid_h;
    let bm = bitmap_len(n);
    if bytes.len() < HEADER_LEN + 2 * bm + CRC_LEN {
        return Err(CodecError::Truncated);
    }

    let mut fine_bits = BitReader::new(&bytes[HEADER_LEN..HEADER_LEN + bm]);
    let mut class_bits = BitReader::new(&bytes[HEADER_LEN + bm..HEADER_LEN + 2 * bm]);
    let mut fine_flags = Vec::with_capacity(n);
    let mut class_flags = Vec::with_capacity(n);
    for _ in 0..n {
        fine_flags.push(fine_bits.read_bit().ok_or(CodecError::Truncated)?);
        class_flags.push(class_bits.read_bit().ok_or(CodecError::Truncated)?);
    }

    let n_fine = fine_flags.iter().filter(|&&f| f).count();
    let payload_bits = n_fine * 4 * usize::from(bits_fine) + (n - n_fine) * usize::from(bits_coarse);
    let payload_start = HEADER_LEN + 2 * bm;
    let payload_end = payload_start + payload_bits.div_ceil(8);
    match bytes.len().cmp(&(payload_end + CRC_LEN)) {
        std::cmp::Ordering::Less => return Err(CodecError::Truncated),
        std::cmp::Ordering::Greater => {
            return Err(CodecError::Malformed("trailing bytes after CRC".into()))
        }
        std::cmp::Ordering::Equal => {}
    }

    let mut r = BitReader::new(&bytes[payload_start..payload_end]);
    let mut read = |w: u8| r.read_bits(u32::from(w)).map(|v| v as u32).ok_or(CodecError::Truncated);
    let mut cells = Vec::with_capacity(n);
    for &fine in &fine_flags {
        cells.push(if fine {
            CellCode::Fine([read(bits_fine)?, read(bits_fine)?, read(bits_fine)?, read(bits_fine)?])
        } else {
            CellCode::Coarse(read(bits_coarse)?)
        });
    }

    let frame = SemanticFrame {
        kb_version,
        original_width,
        original_height,
        grid_w,
        grid_h,
        bits_coarse,
        bits_fine,
        class_flags,
        cells,
    };
    let stored = u32::from_le_bytes(bytes[payload_end..].try_into().expect("4 bytes"));
    let computed = crc32(&bytes[..payload_end]);
    if stored != computed {
        return Err(CodecError::Corrupt {
            frame: Box::new(frame),
            stored,
            computed,
        });
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_cell(label: u32) -> SemanticFrame {
        SemanticFrame {
            kb_version: 3,
            original_width: 32,
            original_height: 32,
            grid_w: 1,
            grid_h: 1,
            bits_coarse: 8,
            bits_fine: 6,
            class_flags: vec![true],
            cells: vec![CellCode::Coarse(label)],
        }
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn single_cell_payload_byte() {
        let bytes = serialize_frame(&one_cell(0xAB)).unwrap();
        // header, fine bitmap 0x00, class bitmap 0x80, payload, CRC.
        assert_eq!(bytes.len(), HEADER_LEN + 1 + 1 + 1 + 4);
        assert_eq!(&bytes[..4], b"SEBF");
        assert_eq!(bytes[HEADER_LEN], 0x00);
        assert_eq!(bytes[HEADER_LEN + 1], 0x80);
        assert_eq!(bytes[HEADER_LEN + 2], 0xAB);
        assert_eq!(deserialize_frame(&bytes).unwrap(), one_cell(0xAB));
    }

    #[test]
    fn corruption_reports_parsed_frame() {
        let mut bytes = serialize_frame(&one_cell(0xAB)).unwrap();
        bytes[HEADER_LEN + 2] ^= 0x01;
        match deserialize_frame(&bytes) {
            Err(CodecError::Corrupt { frame, .. }) => {
                assert_eq!(frame.cells, vec![CellCode::Coarse(0xAA)]);
            }
            other => panic!("expected Corrupt, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = serialize_frame(&one_cell(1)).unwrap();
        assert!(matches!(deserialize_frame(&bytes[..bytes.len() - 1]), Err(CodecError::Truncated)));
        bytes[0] = b'X';
        assert!(matches!(deserialize_frame(&bytes), Err(CodecError::BadMagic)));
    }

    #[test]
    fn rejects_label_wider_than_field() {
        assert!(matches!(serialize_frame(&one_cell(256)), Err(CodecError::Malformed(_))));
    }

    pub(crate) fn arb_frame() -> impl Strategy<Value = SemanticFrame> {
        (1usize..6, 1usize..6, 0u8..10, 0u8..8, any::<u32>()).prop_flat_map(
            |(gw, gh, bc, bf, kb_version)| {
                let n = gw * gh;
                let max_c = (1u64 << bc) as u32;
                let max_f = (1u64 << bf) as u32;
                let cell = prop_oneof![
                    (0..max_c).prop_map(CellCode::Coarse),
                    prop::array::uniform4(0..max_f).prop_map(CellCode::Fine),
                ];
                (
                    prop::collection::vec(cell, n),
                    prop::collection::vec(any::<bool>(), n),
                    1..=gw * 32,
                    1..=gh * 32,
                )
                    .prop_map(move |(cells, class_flags, ow, oh)| SemanticFrame {
                        kb_version,
                        original_width: ow,
                        original_height: oh,
                        grid_w: gw,
                        grid_h: gh,
                        bits_coarse: bc,
                        bits_fine: bf,
                        class_flags,
                        cells,
                    })
            },
        )
    }

    proptest! {
        #[test]
        fn round_trip_and_size(frame in arb_frame()) {
            let bytes = serialize_frame(&frame).unwrap();
            prop_assert_eq!(bytes.len(), serialized_len(&frame));
            let n = frame.n_cells();
            let expected_bits = HEADER_LEN * 8 + 2 * (n.div_ceil(8) * 8)
                + payload_bits(&frame).div_ceil(8) * 8 + 32;
            prop_assert_eq!(bytes.len() * 8, expected_bits);
            prop_assert_eq!(deserialize_frame(&bytes).unwrap(), frame);
        }
    }
}
