//! Over-the-air frame formats shared by the MAC protocols.

use std::fmt;

use thiserror::Error;

use crate::kernel::SimDuration;

/// 16-bit link-layer address. The base station is [`MacAddr::BS`]; sensor
/// node `i` (zero-based) is `i + 1`. `0xFFFF` is reserved and never assigned.
#[derive(Debug, Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub u16);

impl MacAddr {
    pub const BS: MacAddr = MacAddr(0);
    pub const RESERVED: MacAddr = MacAddr(0xFFFF);

    pub fn node(index: usize) -> MacAddr {
        let raw = u16::try_from(index + 1).expect("node index exceeds address space");
        assert_ne!(raw, Self::RESERVED.0, "node index maps to reserved address");
        MacAddr(raw)
    }

    /// Zero-based node index, or `None` for the base station.
    pub fn node_index(self) -> Option<usize> {
        (self != Self::BS && self != Self::RESERVED).then(|| self.0 as usize - 1)
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#06x}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("wake-up call checksum mismatch (got {got:#04x}, expected {expected:#04x})")]
    BadChecksum { got: u8, expected: u8 },
}

/// CRC-8, polynomial 0x07, init 0x00, no reflection.
pub fn crc8(bytes: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &b in bytes {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ 0x07 } else { crc << 1 };
        }
    }
    crc
}

/// Wake-up call: a long unmodulated preamble followed by the target's
/// 16-bit address and an 8-bit CRC, clocked at the wake-up receiver's rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WakeUpCallFrame {
    pub preamble: SimDuration,
    pub dest: MacAddr,
    pub check: u8,
    pub bitrate_bps: u64,
}

impl WakeUpCallFrame {
    pub const FIELD_BITS: u64 = 24;

    pub fn new(dest: MacAddr, preamble: SimDuration, bitrate_bps: u64) -> Self {
        let check = crc8(&dest.0.to_be_bytes());
        WakeUpCallFrame { preamble, dest, check, bitrate_bps }
    }

    /// Airtime of the address and checksum fields alone.
    pub fn field_airtime(&self) -> SimDuration {
        SimDuration::for_bits(Self::FIELD_BITS, self.bitrate_bps)
    }

    pub fn airtime(&self) -> SimDuration {
        self.preamble + self.field_airtime()
    }

    pub fn encode_fields(&self) -> [u8; 3] {
        let [hi, lo] = self.dest.0.to_be_bytes();
        [hi, lo, self.check]
    }

    pub fn decode_fields(bytes: [u8; 3]) -> Result<MacAddr, FrameError> {
        let expected = crc8(&bytes[..2]);
        if bytes[2] != expected {
            return Err(FrameError::BadChecksum { got: bytes[2], expected });
        }
        Ok(MacAddr(u16::from_be_bytes([bytes[0], bytes[1]])))
    }
}

/// Sensor data frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataFrame {
    pub src: MacAddr,
    pub dest: MacAddr,
    pub seq: u32,
    pub payload_len: u16,
    pub header_len: u16,
    pub bitrate_bps: u64,
}

impl DataFrame {
    pub fn airtime(&self) -> SimDuration {
        let bits = (self.header_len as u64 + self.payload_len as u64) * 8;
        SimDuration::for_bits(bits, self.bitrate_bps)
    }
}

/// Low-power-listening preamble sent ahead of a data frame.
///
/// With `microframe = Some(d)` the preamble is a back-to-back train of
/// address-bearing packets of airtime `d`, so a listener can learn `dest`
/// after one complete packet. With `None` it is a bare carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LplPreamble {
    pub src: MacAddr,
    pub dest: MacAddr,
    pub duration: SimDuration,
    pub microframe: Option<SimDuration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    WakeUpCall(WakeUpCallFrame),
    Data(DataFrame),
    Preamble(LplPreamble),
}

impl Frame {
    pub fn airtime(&self) -> SimDuration {
        match self {
            Frame::WakeUpCall(f) => f.airtime(),
            Frame::Data(f) => f.airtime(),
            Frame::Preamble(p) => p.duration,
        }
    }

    pub fn as_data(&self) -> Option<&DataFrame> {
        match self {
            Frame::Data(d) => Some(d),
            _ => None,
        }
    }
}
