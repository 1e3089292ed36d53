//! Bit-exact codec for the 32-bit sidelink control information word.
//!
//! Two layouts share the same field geometry and differ only in the final
//! byte: the standard format carries an opaque priority/retransmission byte,
//! the proposed format carries the sender's remaining reselection counter.
//!
//! Field order, most significant bits first:
//!
//! | field            | bits                  |
//! |------------------|-----------------------|
//! | rri_code         | 4                     |
//! | frl              | ceil(log2(sc(sc+1)/2))|
//! | mcs              | 5                     |
//! | tx_format        | 1                     |
//! | reserved (zeros) | 14 - frl bits         |
//! | tail byte        | 8                     |

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SciError {
    #[error("subchannel count must be at least 1")]
    ZeroSubchannels,
    #[error("subchannel count {0} needs more than 14 frequency-location bits")]
    TooManySubchannels(u32),
    #[error("field {field} value {value} exceeds maximum {max}")]
    FieldOverflow { field: &'static str, value: u32, max: u32 },
    #[error("malformed frequency resource location {frl} (must be < {max})")]
    MalformedFrl { frl: u32, max: u32 },
    #[error("message tail does not match the requested SCI format")]
    FormatMismatch,
}

/// Which SCI layout the final byte follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SciFormat {
    Standard,
    Proposed,
}

/// Final byte of the SCI word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SciTail {
    /// Opaque priority + retransmission byte of the standard format.
    Legacy(u8),
    /// Remaining reselection counter of the proposed format.
    Rc(u8),
}

/// Decoded sidelink control information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SciMessage {
    /// Resource reservation interval encoded as `rt / 10`.
    pub rri_code: u8,
    /// Frequency resource location; with single-subchannel transmissions this
    /// is the starting subchannel index inside the RIV-sized field.
    pub frl: u8,
    pub mcs: u8,
    pub tx_format: bool,
    pub tail: SciTail,
}

impl SciMessage {
    /// Remaining reselection counter, when the proposed format carries one.
    pub fn rc(&self) -> Option<u8> {
        match self.tail {
            SciTail::Rc(rc) => Some(rc),
            SciTail::Legacy(_) => None,
        }
    }
}

/// Width of the frequency-resource-location field: `ceil(log2(sc(sc+1)/2))`.
pub fn frl_bits(sc: u32) -> Result<u32, SciError> {
    let combos = frl_combinations(sc)?;
    let bits = if combos <= 1 { 0 } else { 32 - (combos - 1).leading_zeros() };
    if bits > 14 {
        return Err(SciError::TooManySubchannels(sc));
    }
    Ok(bits)
}

fn frl_combinations(sc: u32) -> Result<u32, SciError> {
    if sc == 0 {
        return Err(SciError::ZeroSubchannels);
    }
    Ok(sc * (sc + 1) / 2)
}

/// Pack a message into its 32-bit wire word.
pub fn encode_sci(m: &SciMessage, sc: u32, format: SciFormat) -> Result<u32, SciError> {
    let b = frl_bits(sc)?;
    let max_frl = frl_combinations(sc)? - 1;
    if m.rri_code > 15 {
        return Err(SciError::FieldOverflow { field: "rri_code", value: m.rri_code.into(), max: 15 });
    }
    if u32::from(m.frl) > max_frl {
        return Err(SciError::FieldOverflow { field: "frl", value: m.frl.into(), max: max_frl });
    }
    if m.mcs > 31 {
        return Err(SciError::FieldOverflow { field: "mcs", value: m.mcs.into(), max: 31 });
    }
    let tail = match (format, m.tail) {
        (SciFormat::Standard, SciTail::Legacy(v)) => v,
        (SciFormat::Proposed, SciTail::Rc(v)) => v,
        _ => return Err(SciError::FormatMismatch),
    };
    let mut w = 0u32;
    w |= u32::from(m.rri_code) << 28;
    w |= u32::from(m.frl) << (28 - b);
    w |= u32::from(m.mcs) << (23 - b);
    w |= u32::from(m.tx_format) << (22 - b);
    // reserved bits [8, 22-b) stay zero
    w |= u32::from(tail);
    Ok(w)
}

/// Unpack a 32-bit wire word; non-zero reserved bits are tolerated and
/// discarded.
pub fn decode_sci(w: u32, sc: u32, format: SciFormat) -> Result<SciMessage, SciError> {
    let b = frl_bits(sc)?;
    let combos = frl_combinations(sc)?;
    let rri_code = ((w >> 28) & 0xF) as u8;
    let frl = ((w >> (28 - b)) & ((1 << b) - 1)) as u8;
    if u32::from(frl) >= combos {
        return Err(SciError::MalformedFrl { frl: frl.into(), max: combos });
    }
    let mcs = ((w >> (23 - b)) & 0x1F) as u8;
    let tx_format = (w >> (22 - b)) & 1 == 1;
    let byte = (w & 0xFF) as u8;
    let tail = match format {
        SciFormat::Standard => SciTail::Legacy(byte),
        SciFormat::Proposed => SciTail::Rc(byte),
    };
    Ok(SciMessage { rri_code, frl, mcs, tx_format, tail })
}

/// Hex rendering of an SCI word for debugging.
pub fn hexdump(w: u32) -> String {
    format!("0x{w:08X}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frl_bits_examples() {
        assert_eq!(frl_bits(1).unwrap(), 0);
        assert_eq!(frl_bits(3).unwrap(), 3);
        assert_eq!(frl_bits(4).unwrap(), 4);
        assert_eq!(frl_bits(0), Err(SciError::ZeroSubchannels));
    }

    #[test]
    fn width_is_32_bits_for_any_sc() {
        for sc in 1..=180 {
            let b = frl_bits(sc).unwrap();
            assert_eq!(4 + b + 5 + 1 + (14 - b) + 8, 32, "sc={sc}");
        }
        assert!(frl_bits(181).is_err());
    }

    #[test]
    fn rc_range_fits_well_inside_the_8_bit_field() {
        // [25, 75] spans 51 values, needing ceil(log2(51)) = 6 bits.
        let span: u32 = 75 - 25 + 1;
        assert_eq!(32 - (span - 1).leading_zeros(), 6);
    }

    #[test]
    fn zero_message_encodes_to_zero_word() {
        let m = SciMessage { rri_code: 0, frl: 0, mcs: 0, tx_format: false, tail: SciTail::Rc(0) };
        assert_eq!(encode_sci(&m, 3, SciFormat::Proposed).unwrap(), 0x0000_0000);
        assert_eq!(decode_sci(0, 3, SciFormat::Proposed).unwrap(), m);
    }

    #[test]
    fn hand_packed_word_matches() {
        // rri=2 -> bits 31..28, frl=1 -> 27..25, mcs=7 -> 24..20, tx=1 -> 19,
        // 11 reserved zeros, rc=25 -> low byte.
        let m = SciMessage { rri_code: 2, frl: 1, mcs: 7, tx_format: true, tail: SciTail::Rc(25) };
        let w = encode_sci(&m, 3, SciFormat::Proposed).unwrap();
        assert_eq!(w, 0x2278_0019);
        assert_eq!(w & 0xFF, 25);
        let d = decode_sci(w, 3, SciFormat::Proposed).unwrap();
        assert_eq!(d.rc(), Some(25));
        assert_eq!(d.rri_code, 2);
        assert_eq!(d, m);
        assert_eq!(hexdump(w), "0x22780019");
    }

    #[test]
    fn standard_tail_is_opaque() {
        let m = SciMessage { rri_code: 2, frl: 0, mcs: 0, tx_format: false, tail: SciTail::Legacy(0xA5) };
        let w = encode_sci(&m, 3, SciFormat::Standard).unwrap();
        assert_eq!(w & 0xFF, 0xA5);
        let d = decode_sci(w, 3, SciFormat::Standard).unwrap();
        assert_eq!(d.tail, SciTail::Legacy(0xA5));
        assert_eq!(d.rc(), None);
    }

    #[test]
    fn frl_out_of_range_rejected() {
        // frl field value 7 at sc=3 (6 valid combinations) is malformed.
        let w = 7u32 << 25;
        assert_eq!(
            decode_sci(w, 3, SciFormat::Proposed),
            Err(SciError::MalformedFrl { frl: 7, max: 6 })
        );
        let m = SciMessage { rri_code: 0, frl: 6, mcs: 0, tx_format: false, tail: SciTail::Rc(0) };
        assert!(matches!(
            encode_sci(&m, 3, SciFormat::Proposed),
            Err(SciError::FieldOverflow { field: "frl", .. })
        ));
    }

    #[test]
    fn field_overflow_identifies_field() {
        let m = SciMessage { rri_code: 16, frl: 0, mcs: 0, tx_format: false, tail: SciTail::Rc(0) };
        assert!(matches!(
            encode_sci(&m, 3, SciFormat::Proposed),
            Err(SciError::FieldOverflow { field: "rri_code", .. })
        ));
        let m = SciMessage { rri_code: 0, frl: 0, mcs: 32, tx_format: false, tail: SciTail::Rc(0) };
        assert!(matches!(
            encode_sci(&m, 3, SciFormat::Proposed),
            Err(SciError::FieldOverflow { field: "mcs", .. })
        ));
    }

    #[test]
    fn tail_format_mismatch_rejected() {
        let m = SciMessage { rri_code: 0, frl: 0, mcs: 0, tx_format: false, tail: SciTail::Rc(1) };
        assert_eq!(encode_sci(&m, 3, SciFormat::Standard), Err(SciError::FormatMismatch));
    }

    #[test]
    fn nonzero_reserved_bits_tolerated() {
        // Set a bit inside the reserved span [8, 19) for sc=3.
        let w = 1u32 << 12;
        let d = decode_sci(w, 3, SciFormat::Proposed).unwrap();
        assert_eq!(
            d,
            SciMessage { rri_code: 0, frl: 0, mcs: 0, tx_format: false, tail: SciTail::Rc(0) }
        );
    }

    proptest! {
        #[test]
        fn round_trip_identity(
            rri in 0u8..16, mcs in 0u8..32, txf in proptest::bool::ANY,
            byte in 0u8..=255, sc in 1u32..12, frl_seed in 0u32..1000,
            proposed in proptest::bool::ANY,
        ) {
            let max_frl = sc * (sc + 1) / 2;
            let frl = (frl_seed % max_frl) as u8;
            let (format, tail) = if proposed {
                (SciFormat::Proposed, SciTail::Rc(byte))
            } else {
                (SciFormat::Standard, SciTail::Legacy(byte))
            };
            let m = SciMessage { rri_code: rri, frl, mcs, tx_format: txf, tail };
            let w = encode_sci(&m, sc, format).unwrap();
            prop_assert_eq!(decode_sci(w, sc, format).unwrap(), m);
        }
    }
}
