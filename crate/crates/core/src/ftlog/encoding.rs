//! On-disk encodings of completed block indices.
//!
//! Stream methods append one self-delimiting record per completed block:
//!
//! | method   | record for block `k`                                        |
//! |----------|-------------------------------------------------------------|
//! | `char`   | ASCII decimal digits of `k`, then `\n`                      |
//! | `enc`    | unsigned varint, 7 bits per byte, low group first, MSB = more |
//! | `int`    | `k` as 4-byte little-endian `u32`                           |
//! | `binary` | 32 ASCII `0`/`1` characters, most significant bit first, `\n` |
//!
//! Bitmap methods (`bit8`, `bit64`) keep a preallocated region of
//! `ceil(total_blocks / N)` words of `N` bits. Block `k` is bit `k mod N` of
//! word `k / N`; words are stored little-endian.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogMethod {
    Char,
    Enc,
    Int,
    Binary,
    Bit8,
    Bit64,
}

impl LogMethod {
    pub const ALL: [LogMethod; 6] = [
        LogMethod::Char,
        LogMethod::Enc,
        LogMethod::Int,
        LogMethod::Binary,
        LogMethod::Bit8,
        LogMethod::Bit64,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LogMethod::Char => "char",
            LogMethod::Enc => "enc",
            LogMethod::Int => "int",
            LogMethod::Binary => "binary",
            LogMethod::Bit8 => "bit8",
            LogMethod::Bit64 => "bit64",
        }
    }

    /// Word width for bitmap methods.
    pub fn bit_width(self) -> Option<u64> {
        match self {
            LogMethod::Bit8 => Some(8),
            LogMethod::Bit64 => Some(64),
            _ => None,
        }
    }

    pub fn is_bitmap(self) -> bool {
        self.bit_width().is_some()
    }
}

impl fmt::Display for LogMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LogMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown log method {s:?}")))
    }
}

/// Word index and bit position of block `k` in an `n`-bit bitmap.
pub fn bit_position(k: u64, n: u64) -> (u64, u32) {
    (k / n, (k % n) as u32)
}

/// What recording block `k` does to a log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordUpdate {
    Append(Vec<u8>),
    SetBit { array_index: u64, bit: u32 },
}

pub fn encode_record(method: LogMethod, k: u64) -> Result<RecordUpdate> {
    if let Some(n) = method.bit_width() {
        let (array_index, bit) = bit_position(k, n);
        return Ok(RecordUpdate::SetBit { array_index, bit });
    }
    let mut out = Vec::with_capacity(33);
    append_record(method, k, &mut out)?;
    Ok(RecordUpdate::Append(out))
}

/// Appends the stream record for `k`. Bitmap methods are rejected.
pub fn append_record(method: LogMethod, k: u64, out: &mut Vec<u8>) -> Result<()> {
    match method {
        LogMethod::Char => {
            out.extend_from_slice(k.to_string().as_bytes());
            out.push(b'\n');
        }
        LogMethod::Enc => write_varint(k, out),
        LogMethod::Int => {
            let v = u32::try_from(k).map_err(|_| Error::RecordRange(k))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        LogMethod::Binary => {
            let v = u32::try_from(k).map_err(|_| Error::RecordRange(k))?;
            out.extend_from_slice(format!("{v:032b}\n").as_bytes());
        }
        LogMethod::Bit8 | LogMethod::Bit64 => {
            return Err(Error::Config(format!("{method} has no record stream")))
        }
    }
    Ok(())
}

pub fn write_varint(mut v: u64, out: &mut Vec<u8>) {
    while v >= 0x80 {
        out.push((v as u8 & 0x7f) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

pub fn varint_len(v: u64) -> usize {
    let bits = 64 - (v | 1).leading_zeros() as usize;
    bits.div_ceil(7)
}

/// Largest record any block of a `total_blocks` file can produce.
pub fn max_record_len(method: LogMethod, total_blocks: u64) -> u64 {
    let top = total_blocks.saturating_sub(1);
    match method {
        LogMethod::Char => top.to_string().len() as u64 + 1,
        LogMethod::Enc => varint_len(top) as u64,
        LogMethod::Int => 4,
        LogMethod::Binary => 33,
        LogMethod::Bit8 | LogMethod::Bit64 => 0,
    }
}

/// Bytes of a bitmap covering `total_blocks`.
pub fn bitmap_len(method: LogMethod, total_blocks: u64) -> u64 {
    match method.bit_width() {
        Some(n) => total_blocks.div_ceil(n) * (n / 8),
        None => 0,
    }
}

/// Header of a stream region inside a shared log: the used byte count as `u64` LE.
pub const STREAM_REGION_HEADER: u64 = 8;

/// Size of one file's region inside a shared log.
pub fn region_size(method: LogMethod, total_blocks: u64) -> u64 {
    if method.is_bitmap() {
        bitmap_len(method, total_blocks)
    } else {
        STREAM_REGION_HEADER + total_blocks * max_record_len(method, total_blocks)
    }
}

/// Sets the bit for `k` in a bitmap region; returns the byte range of the dirty word.
pub fn set_bit(method: LogMethod, region: &mut [u8], k: u64) -> std::ops::Range<usize> {
    let n = method.bit_width().expect("bitmap method");
    let (i, j) = bit_position(k, n);
    let word_bytes = (n / 8) as usize;
    let start = i as usize * word_bytes;
    // Little-endian words: bit j lives in byte j/8 of the word.
    region[start + (j / 8) as usize] |= 1 << (j % 8);
    start..start + word_bytes
}

/// Result of parsing a record stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedStream {
    /// Blocks in record order, duplicates kept.
    pub blocks: Vec<u64>,
    /// Length of the well-formed prefix.
    pub valid_len: usize,
    /// A trailing partial record was dropped.
    pub torn: bool,
}

/// Parses stream records. A malformed trailing record is reported as torn;
/// malformed data anywhere else is an error.
pub fn decode_stream(method: LogMethod, bytes: &[u8], total_blocks: u64) -> Result<DecodedStream, String> {
    let mut blocks = Vec::new();
    let mut pos = 0usize;
    let check = |k: u64, at: usize| {
        if k >= total_blocks {
            Err(format!("block {k} at byte {at} >= total {total_blocks}"))
        } else {
            Ok(k)
        }
    };
    match method {
        LogMethod::Char | LogMethod::Binary => {
            while pos < bytes.len() {
                let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
                    break;
                };
                let line = &bytes[pos..pos + nl];
                let k = if method == LogMethod::Char {
                    parse_decimal(line)
                } else {
                    parse_bitstring(line)
                }
                .ok_or_else(|| format!("malformed {method} record at byte {pos}"))?;
                blocks.push(check(k, pos)?);
                pos += nl + 1;
            }
        }
        LogMethod::Int => {
            while bytes.len() - pos >= 4 {
                let k = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
                blocks.push(check(u64::from(k), pos)?);
                pos += 4;
            }
        }
        LogMethod::Enc => {
            while pos < bytes.len() {
                match read_varint(&bytes[pos..]) {
                    Ok(Some((k, used))) => {
                        blocks.push(check(k, pos)?);
                        pos += used;
                    }
                    Ok(None) => break,
                    Err(()) => return Err(format!("overlong varint at byte {pos}")),
                }
            }
        }
        LogMethod::Bit8 | LogMethod::Bit64 => return Err(format!("{method} is not a stream method")),
    }
    Ok(DecodedStream {
        blocks,
        valid_len: pos,
        torn: pos < bytes.len(),
    })
}

/// Reads one varint. `Ok(None)` means the input ends mid-value.
pub fn read_varint(bytes: &[u8]) -> Result<Option<(u64, usize)>, ()> {
    let mut v = 0u64;
    for (i, &b) in bytes.iter().enumerate() {
        if i >= 10 || (i == 9 && b > 1) {
            return Err(());
        }
        v |= u64::from(b & 0x7f) << (7 * i);
        if b & 0x80 == 0 {
            return Ok(Some((v, i + 1)));
        }
    }
    Ok(None)
}

fn parse_decimal(line: &[u8]) -> Option<u64> {
    if line.is_empty() || !line.iter().all(u8::is_ascii_digit) {
        return None;
    }
    std::str::from_utf8(line).ok()?.parse().ok()
}

fn parse_bitstring(line: &[u8]) -> Option<u64> {
    if line.len() != 32 {
        return None;
    }
    line.iter().try_fold(0u64, |acc, &c| match c {
        b'0' => Some(acc << 1),
        b'1' => Some(acc << 1 | 1),
        _ => None,
    })
}

/// Set bits of a bitmap region, ascending.
pub fn decode_bitmap(method: LogMethod, region: &[u8], total_blocks: u64) -> Result<Vec<u64>, String> {
    if method.bit_width().is_none() {
        return Err(format!("{method} is not a bitmap method"));
    }
    let expected = bitmap_len(method, total_blocks) as usize;
    if region.len() != expected {
        return Err(format!("bitmap region is {} bytes, expected {expected}", region.len()));
    }
    let mut out = Vec::new();
    for (byte_idx, &byte) in region.iter().enumerate() {
        for bit in 0..8 {
            if byte & (1 << bit) != 0 {
                let k = byte_idx as u64 * 8 + bit;
                if k >= total_blocks {
                    return Err(format!("bit {k} set beyond total {total_blocks}"));
                }
                out.push(k);
            }
        }
    }
    Ok(out)
}
