//! Bit-exact frame layouts, FCS computation and the virtual-carrier-sensing
//! duration rules.
//!
//! Wire layouts (most-significant-bit-first packing):
//!
//! ```text
//! R-RTS: control(16) duration(16) RA(48) DA(48) TA(48) FCS(32)        = 208 bits
//! R-CTS: control(16) duration(16) RA(48) SA(48) FCS(32)               = 160 bits
//! ACK:   control(16) duration(16) RA(48) TA(48) pad(80) FCS(32)       = 240 bits
//! DATA:  preamble(128) control(16) duration(16) RA(48) DA(48) TA(48)
//!        pad(64) payload(n) FCS(32)                                   = 400 + n bits
//! ```
//!
//! The control field carries the variant in its top four bits and a
//! relay-forwarded ("via reflective path") flag in bit 11; remaining bits are
//! reserved zero. The FCS is a reflected CRC-32 (polynomial 0x04C11DB7) over
//! every preceding bit in stream order.

use crate::error::{Error, Result};
use crate::mac::MacTimings;

/// 48-bit node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Addr(u64);

impl Addr {
    pub const MAX: u64 = (1 << 48) - 1;

    pub fn new(value: u64) -> Result<Self> {
        if value > Self::MAX {
            return Err(Error::FieldOverflow(format!(
                "address {value:#x} exceeds 48 bits"
            )));
        }
        Ok(Addr(value))
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl std::fmt::Display for Addr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:012x}", self.0)
    }
}

const CONTROL_BITS: u32 = 16;
const DURATION_BITS: u32 = 16;
const ADDR_BITS: u32 = 48;
const FCS_BITS: u32 = 32;
const DATA_PREAMBLE_BITS: u32 = 128;
const DATA_PAD_BITS: u32 = 64;
const ACK_PAD_BITS: u32 = 80;
const PREAMBLE_BYTE: u8 = 0xAA;

pub const RRTS_FRAME_BITS: usize = 208;
pub const RCTS_FRAME_BITS: usize = 160;
pub const ACK_FRAME_BITS: usize = 240;
/// DATA frame length excluding the payload.
pub const DATA_OVERHEAD_BITS: usize = 400;

const TYPE_RRTS: u64 = 0x1;
const TYPE_RCTS: u64 = 0x2;
const TYPE_DATA: u64 = 0x3;
const TYPE_ACK: u64 = 0x4;

/// Protocol frame. Payload content is synthetic (all-zero bits); only its
/// length matters to the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    RRts {
        duration_us: u16,
        receiver: Addr,
        destination: Addr,
        transmitter: Addr,
        /// Set when a relay forwarded this reservation over its surface.
        via_ris: bool,
    },
    RCts {
        duration_us: u16,
        receiver: Addr,
        sender: Addr,
        via_ris: bool,
    },
    Data {
        duration_us: u16,
        receiver: Addr,
        destination: Addr,
        transmitter: Addr,
        payload_bits: u64,
    },
    Ack {
        duration_us: u16,
        receiver: Addr,
        transmitter: Addr,
    },
}

impl Frame {
    pub fn variant_name(&self) -> &'static str {
        match self {
            Frame::RRts { .. } => "R-RTS",
            Frame::RCts { .. } => "R-CTS",
            Frame::Data { .. } => "DATA",
            Frame::Ack { .. } => "ACK",
        }
    }

    pub fn duration_us(&self) -> u16 {
        match self {
            Frame::RRts { duration_us, .. }
            | Frame::RCts { duration_us, .. }
            | Frame::Data { duration_us, .. }
            | Frame::Ack { duration_us, .. } => *duration_us,
        }
    }

    pub fn receiver(&self) -> Addr {
        match self {
            Frame::RRts { receiver, .. }
            | Frame::RCts { receiver, .. }
            | Frame::Data { receiver, .. }
            | Frame::Ack { receiver, .. } => *receiver,
        }
    }

    /// Encoded length in bits.
    pub fn encoded_bits(&self) -> usize {
        match self {
            Frame::RRts { .. } => RRTS_FRAME_BITS,
            Frame::RCts { .. } => RCTS_FRAME_BITS,
            Frame::Ack { .. } => ACK_FRAME_BITS,
            Frame::Data { payload_bits, .. } => DATA_OVERHEAD_BITS + *payload_bits as usize,
        }
    }
}

/// A bit sequence with MSB-first packing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bits {
    bytes: Vec<u8>,
    len: usize,
}

impl Bits {
    pub fn new() -> Self {
        Bits {
            bytes: Vec::new(),
            len: 0,
        }
    }

    pub fn with_capacity(bits: usize) -> Self {
        Bits {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, index: usize) -> bool {
        assert!(index < self.len, "bit index {index} out of {}", self.len);
        let byte = self.bytes[index / 8];
        (byte >> (7 - index % 8)) & 1 == 1
    }

    pub fn push_bit(&mut self, bit: bool) {
        if self.len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let idx = self.len / 8;
            self.bytes[idx] |= 1 << (7 - self.len % 8);
        }
        self.len += 1;
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        assert!(width <= 64);
        for i in (0..width).rev() {
            self.push_bit((value >> i) & 1 == 1);
        }
    }

    pub fn push_zero_bits(&mut self, count: u32) {
        for _ in 0..count {
            self.push_bit(false);
        }
    }

    /// Reads `width` bits starting at `offset`, most significant first.
    pub fn read_bits(&self, offset: usize, width: u32) -> u64 {
        let mut value = 0u64;
        for i in 0..width as usize {
            value = (value << 1) | self.bit(offset + i) as u64;
        }
        value
    }

    /// Flips one bit in place. Intended for corruption tests.
    pub fn flip_bit(&mut self, index: usize) {
        assert!(index < self.len);
        self.bytes[index / 8] ^= 1 << (7 - index % 8);
    }

    pub fn truncated(&self, bits: usize) -> Bits {
        let mut out = Bits::with_capacity(bits);
        for i in 0..bits.min(self.len) {
            out.push_bit(self.bit(i));
        }
        out
    }
}

impl Default for Bits {
    fn default() -> Self {
        Bits::new()
    }
}

/// Reflected CRC-32 (polynomial 0x04C11DB7, reciprocal 0xEDB88320) over a bit
/// sequence fed one bit at a time in stream order. Initial value all-ones,
/// final complement.
pub fn crc32_bits(bits: &Bits, range_end: usize) -> u32 {
    let mut crc: u32 = 0xFFFF_FFFF;
    for i in 0..range_end {
        crc ^= bits.bit(i) as u32;
        crc = if crc & 1 == 1 {
            (crc >> 1) ^ 0xEDB8_8320
        } else {
            crc >> 1
        };
    }
    !crc
}

fn control_word(frame_type: u64, via_ris: bool) -> u64 {
    (frame_type << 12) | ((via_ris as u64) << 11)
}

/// Encodes a frame into its bit-exact wire layout.
pub fn encode_frame(frame: &Frame) -> Result<Bits> {
    let mut bits = Bits::with_capacity(frame.encoded_bits());
    match frame {
        Frame::RRts {
            duration_us,
            receiver,
            destination,
            transmitter,
            via_ris,
        } => {
            bits.push_bits(control_word(TYPE_RRTS, *via_ris), CONTROL_BITS);
            bits.push_bits(*duration_us as u64, DURATION_BITS);
            bits.push_bits(receiver.value(), ADDR_BITS);
            bits.push_bits(destination.value(), ADDR_BITS);
            bits.push_bits(transmitter.value(), ADDR_BITS);
        }
        Frame::RCts {
            duration_us,
            receiver,
            sender,
            via_ris,
        } => {
            bits.push_bits(control_word(TYPE_RCTS, *via_ris), CONTROL_BITS);
            bits.push_bits(*duration_us as u64, DURATION_BITS);
            bits.push_bits(receiver.value(), ADDR_BITS);
            bits.push_bits(sender.value(), ADDR_BITS);
        }
        Frame::Data {
            duration_us,
            receiver,
            destination,
            transmitter,
            payload_bits,
        } => {
            for _ in 0..DATA_PREAMBLE_BITS / 8 {
                bits.push_bits(PREAMBLE_BYTE as u64, 8);
            }
            bits.push_bits(control_word(TYPE_DATA, false), CONTROL_BITS);
            bits.push_bits(*duration_us as u64, DURATION_BITS);
            bits.push_bits(receiver.value(), ADDR_BITS);
            bits.push_bits(destination.value(), ADDR_BITS);
            bits.push_bits(transmitter.value(), ADDR_BITS);
            bits.push_zero_bits(DATA_PAD_BITS);
            for _ in 0..*payload_bits {
                bits.push_bit(false);
            }
        }
        Frame::Ack {
            duration_us,
            receiver,
            transmitter,
        } => {
            bits.push_bits(control_word(TYPE_ACK, false), CONTROL_BITS);
            bits.push_bits(*duration_us as u64, DURATION_BITS);
            bits.push_bits(receiver.value(), ADDR_BITS);
            bits.push_bits(transmitter.value(), ADDR_BITS);
            bits.push_zero_bits(ACK_PAD_BITS);
        }
    }
    let fcs = crc32_bits(&bits, bits.len());
    bits.push_bits(fcs as u64, FCS_BITS);
    debug_assert_eq!(bits.len(), frame.encoded_bits());
    Ok(bits)
}

/// Decodes and FCS-checks a bit sequence.
///
/// The length selects the variant; anything shorter than the smallest layout
/// or between layouts is a format error, an FCS mismatch is a corruption
/// error.
pub fn decode_frame(bits: &Bits) -> Result<Frame> {
    let len = bits.len();
    let (frame_type, header_offset, payload_bits) = match len {
        RRTS_FRAME_BITS => (TYPE_RRTS, 0usize, 0u64),
        RCTS_FRAME_BITS => (TYPE_RCTS, 0, 0),
        ACK_FRAME_BITS => (TYPE_ACK, 0, 0),
        n if n >= DATA_OVERHEAD_BITS => (
            TYPE_DATA,
            DATA_PREAMBLE_BITS as usize,
            (n - DATA_OVERHEAD_BITS) as u64,
        ),
        n => {
            return Err(Error::FrameFormat(format!(
                "no frame layout is {n} bits long"
            )))
        }
    };

    let fcs_offset = len - FCS_BITS as usize;
    let stored = bits.read_bits(fcs_offset, FCS_BITS) as u32;
    if crc32_bits(bits, fcs_offset) != stored {
        return Err(Error::FcsMismatch);
    }

    let control = bits.read_bits(header_offset, CONTROL_BITS);
    let encoded_type = control >> 12;
    if encoded_type != frame_type {
        return Err(Error::FrameFormat(format!(
            "length implies type {frame_type:#x} but control field says {encoded_type:#x}"
        )));
    }
    let via_ris = (control >> 11) & 1 == 1;
    let duration_us = bits.read_bits(header_offset + 16, DURATION_BITS) as u16;
    let addr = |index: usize| -> Result<Addr> {
        Addr::new(bits.read_bits(header_offset + 32 + index * 48, ADDR_BITS))
    };

    match frame_type {
        TYPE_RRTS => Ok(Frame::RRts {
            duration_us,
            receiver: addr(0)?,
            destination: addr(1)?,
            transmitter: addr(2)?,
            via_ris,
        }),
        TYPE_RCTS => Ok(Frame::RCts {
            duration_us,
            receiver: addr(0)?,
            sender: addr(1)?,
            via_ris,
        }),
        TYPE_ACK => Ok(Frame::Ack {
            duration_us,
            receiver: addr(0)?,
            transmitter: addr(1)?,
        }),
        TYPE_DATA => Ok(Frame::Data {
            duration_us,
            receiver: addr(0)?,
            destination: addr(1)?,
            transmitter: addr(2)?,
            payload_bits,
        }),
        _ => unreachable!(),
    }
}

/// Converts a computed duration to the 16-bit wire field, saturating at the
/// field maximum. The flag reports that clamping occurred so callers can log
/// the diagnostic.
pub fn duration_field_us(duration_us: f64) -> (u16, bool) {
    if !duration_us.is_finite() || duration_us < 0.0 {
        return (0, true);
    }
    let rounded = duration_us.round();
    if rounded > u16::MAX as f64 {
        (u16::MAX, true)
    } else {
        (rounded as u16, false)
    }
}

/// Virtual-carrier-sensing duration an overhearing node loads into its NAV
/// after decoding `observed`, measured from the end of the frame.
///
/// Reservations protect through the next reservation step (longer when the
/// request still has to be forwarded); a clear-to-send protects the upcoming
/// data transfer it advertises in its duration field; a data frame protects
/// its acknowledgment. Acknowledgments close an exchange and reserve nothing.
pub fn nav_duration(observed: &Frame, timings: &MacTimings) -> f64 {
    let sifs = timings.sifs_us as f64;
    match observed {
        Frame::RRts {
            receiver,
            destination,
            ..
        } => {
            if destination == receiver {
                timings.rrts_airtime_us() + sifs
            } else {
                timings.rrts_airtime_us() + timings.rcts_airtime_us() + 2.0 * sifs
            }
        }
        Frame::RCts { duration_us, .. } => *duration_us as f64 + 2.0 * sifs,
        Frame::Data { .. } => timings.ack_airtime_us() + sifs,
        Frame::Ack { .. } => 0.0,
    }
}
