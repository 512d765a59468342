//! Frame codec.
//!
//! Every frame is `type: u8`, `payload_len: u32 LE`, then the payload. All
//! integers are little-endian.
//!
//! ```text
//! CONNECT    object_size u64, slot_count u32, session_id u64, resume u8
//! NEW_FILE   file_id u32, size u64, mtime u64, path_len u16, path (utf-8)
//! FILE_ID    file_id u32, sink_fd u64, skip u8
//! NEW_BLOCK  file_id u32, block_index u64, length u32, data
//! BLOCK_SYNC file_id u32, block_index u64, status u8 (0 ok, 1 write failed)
//! BYE        (empty)
//! FILE_CLOSE file_id u32
//! ```

use std::fmt;
use std::io::{self, ErrorKind, Read, Write};

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 5;
const BLOCK_PREFIX_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    Connect = 0,
    NewFile = 1,
    FileId = 2,
    NewBlock = 3,
    BlockSync = 4,
    Bye = 5,
    FileClose = 6,
}

impl MessageKind {
    pub const ALL: [MessageKind; 7] = [
        MessageKind::Connect,
        MessageKind::NewFile,
        MessageKind::FileId,
        MessageKind::NewBlock,
        MessageKind::BlockSync,
        MessageKind::Bye,
        MessageKind::FileClose,
    ];

    pub fn from_byte(b: u8) -> Result<Self> {
        MessageKind::ALL
            .get(b as usize)
            .copied()
            .ok_or(Error::UnknownMessageType(b))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Connect => "CONNECT",
            MessageKind::NewFile => "NEW_FILE",
            MessageKind::FileId => "FILE_ID",
            MessageKind::NewBlock => "NEW_BLOCK",
            MessageKind::BlockSync => "BLOCK_SYNC",
            MessageKind::Bye => "BYE",
            MessageKind::FileClose => "FILE_CLOSE",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncStatus {
    Written = 0,
    WriteFailed = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferMessage {
    Connect {
        object_size: u64,
        slot_count: u32,
        session_id: u64,
        resume: bool,
    },
    NewFile {
        file_id: u32,
        size: u64,
        mtime: u64,
        path: String,
    },
    FileId {
        file_id: u32,
        sink_fd: u64,
        skip: bool,
    },
    NewBlock {
        file_id: u32,
        block_index: u64,
        data: Vec<u8>,
    },
    BlockSync {
        file_id: u32,
        block_index: u64,
        status: SyncStatus,
    },
    Bye,
    FileClose {
        file_id: u32,
    },
}

impl TransferMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            TransferMessage::Connect { .. } => MessageKind::Connect,
            TransferMessage::NewFile { .. } => MessageKind::NewFile,
            TransferMessage::FileId { .. } => MessageKind::FileId,
            TransferMessage::NewBlock { .. } => MessageKind::NewBlock,
            TransferMessage::BlockSync { .. } => MessageKind::BlockSync,
            TransferMessage::Bye => MessageKind::Bye,
            TransferMessage::FileClose { .. } => MessageKind::FileClose,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.encode_into(&mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<()> {
        let start = out.len();
        out.push(self.kind() as u8);
        out.extend_from_slice(&[0; 4]);
        match self {
            TransferMessage::Connect {
                object_size,
                slot_count,
                session_id,
                resume,
            } => {
                out.extend_from_slice(&object_size.to_le_bytes());
                out.extend_from_slice(&slot_count.to_le_bytes());
                out.extend_from_slice(&session_id.to_le_bytes());
                out.push(u8::from(*resume));
            }
            TransferMessage::NewFile {
                file_id,
                size,
                mtime,
                path,
            } => {
                let path_len = u16::try_from(path.len())
                    .map_err(|_| Error::Protocol(format!("path of {} bytes exceeds u16", path.len())))?;
                out.extend_from_slice(&file_id.to_le_bytes());
                out.extend_from_slice(&size.to_le_bytes());
                out.extend_from_slice(&mtime.to_le_bytes());
                out.extend_from_slice(&path_len.to_le_bytes());
                out.extend_from_slice(path.as_bytes());
            }
            TransferMessage::FileId {
                file_id,
                sink_fd,
                skip,
            } => {
                out.extend_from_slice(&file_id.to_le_bytes());
                out.extend_from_slice(&sink_fd.to_le_bytes());
                out.push(u8::from(*skip));
            }
            TransferMessage::NewBlock {
                file_id,
                block_index,
                data,
            } => {
                out.extend_from_slice(&block_prefix(*file_id, *block_index, data.len())?);
                out.extend_from_slice(data);
            }
            TransferMessage::BlockSync {
                file_id,
                block_index,
                status,
            } => {
                out.extend_from_slice(&file_id.to_le_bytes());
                out.extend_from_slice(&block_index.to_le_bytes());
                out.push(*status as u8);
            }
            TransferMessage::Bye => {}
            TransferMessage::FileClose { file_id } => {
                out.extend_from_slice(&file_id.to_le_bytes());
            }
        }
        let payload_len = out.len() - start - HEADER_LEN;
        let payload_len = u32::try_from(payload_len)
            .map_err(|_| Error::Protocol(format!("payload of {payload_len} bytes exceeds u32")))?;
        out[start + 1..start + HEADER_LEN].copy_from_slice(&payload_len.to_le_bytes());
        Ok(())
    }

    /// Decodes exactly one frame.
    pub fn decode(frame: &[u8]) -> Result<Self> {
        if frame.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                actual: frame.len(),
            });
        }
        let header = FrameHeader::parse(frame[..HEADER_LEN].try_into().unwrap())?;
        let expected = HEADER_LEN + header.payload_len;
        if frame.len() < expected {
            return Err(Error::Truncated {
                expected,
                actual: frame.len(),
            });
        }
        if frame.len() > expected {
            return Err(Error::Protocol(format!(
                "{} trailing bytes after {} frame",
                frame.len() - expected,
                header.kind
            )));
        }
        decode_payload(header.kind, &frame[HEADER_LEN..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub kind: MessageKind,
    pub payload_len: usize,
}

impl FrameHeader {
    fn parse(bytes: [u8; HEADER_LEN]) -> Result<Self> {
        Ok(FrameHeader {
            kind: MessageKind::from_byte(bytes[0])?,
            payload_len: u32::from_le_bytes(bytes[1..].try_into().unwrap()) as usize,
        })
    }
}

fn fixed_len(kind: MessageKind) -> Option<usize> {
    match kind {
        MessageKind::Connect => Some(21),
        MessageKind::FileId | MessageKind::BlockSync => Some(13),
        MessageKind::Bye => Some(0),
        MessageKind::FileClose => Some(4),
        MessageKind::NewFile | MessageKind::NewBlock => None,
    }
}

fn mismatch(kind: MessageKind, declared: usize, expected: usize) -> Error {
    Error::LengthMismatch {
        kind: kind.name(),
        declared,
        expected,
    }
}

fn block_prefix(file_id: u32, block_index: u64, len: usize) -> Result<[u8; BLOCK_PREFIX_LEN]> {
    let len = u32::try_from(len).map_err(|_| Error::Protocol(format!("block of {len} bytes exceeds u32")))?;
    let mut p = [0u8; BLOCK_PREFIX_LEN];
    p[..4].copy_from_slice(&file_id.to_le_bytes());
    p[4..12].copy_from_slice(&block_index.to_le_bytes());
    p[12..].copy_from_slice(&len.to_le_bytes());
    Ok(p)
}

fn u32_at(p: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(p[at..at + 4].try_into().unwrap())
}

fn u64_at(p: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(p[at..at + 8].try_into().unwrap())
}

fn flag(kind: MessageKind, b: u8) -> Result<bool> {
    match b {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::Protocol(format!("{kind}: flag byte {other} is not 0 or 1"))),
    }
}

fn decode_payload(kind: MessageKind, p: &[u8]) -> Result<TransferMessage> {
    if let Some(n) = fixed_len(kind) {
        if p.len() != n {
            return Err(mismatch(kind, p.len(), n));
        }
    }
    Ok(match kind {
        MessageKind::Connect => TransferMessage::Connect {
            object_size: u64_at(p, 0),
            slot_count: u32_at(p, 8),
            session_id: u64_at(p, 12),
            resume: flag(kind, p[20])?,
        },
        MessageKind::NewFile => {
            if p.len() < 22 {
                return Err(mismatch(kind, p.len(), 22));
            }
            let path_len = u16::from_le_bytes([p[20], p[21]]) as usize;
            if p.len() != 22 + path_len {
                return Err(mismatch(kind, p.len(), 22 + path_len));
            }
            let path = std::str::from_utf8(&p[22..])
                .map_err(|_| Error::Protocol("NEW_FILE path is not UTF-8".into()))?
                .to_string();
            TransferMessage::NewFile {
                file_id: u32_at(p, 0),
                size: u64_at(p, 4),
                mtime: u64_at(p, 12),
                path,
            }
        }
        MessageKind::FileId => TransferMessage::FileId {
            file_id: u32_at(p, 0),
            sink_fd: u64_at(p, 4),
            skip: flag(kind, p[12])?,
        },
        MessageKind::NewBlock => {
            let prefix = BlockPrefix::parse(p.len(), p.get(..BLOCK_PREFIX_LEN).unwrap_or(p))?;
            TransferMessage::NewBlock {
                file_id: prefix.file_id,
                block_index: prefix.block_index,
                data: p[BLOCK_PREFIX_LEN..].to_vec(),
            }
        }
        MessageKind::BlockSync => TransferMessage::BlockSync {
            file_id: u32_at(p, 0),
            block_index: u64_at(p, 4),
            status: match p[12] {
                0 => SyncStatus::Written,
                1 => SyncStatus::WriteFailed,
                other => return Err(Error::Protocol(format!("BLOCK_SYNC status {other}"))),
            },
        },
        MessageKind::Bye => TransferMessage::Bye,
        MessageKind::FileClose => TransferMessage::FileClose { file_id: u32_at(p, 0) },
    })
}

/// Fixed fields of a NEW_BLOCK, read before its data so the data can land in a pool slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPrefix {
    pub file_id: u32,
    pub block_index: u64,
    pub length: usize,
}

impl BlockPrefix {
    fn parse(payload_len: usize, p: &[u8]) -> Result<Self> {
        if p.len() < BLOCK_PREFIX_LEN {
            return Err(mismatch(MessageKind::NewBlock, payload_len, BLOCK_PREFIX_LEN));
        }
        let length = u32_at(p, 12) as usize;
        if payload_len != BLOCK_PREFIX_LEN + length {
            return Err(mismatch(MessageKind::NewBlock, payload_len, BLOCK_PREFIX_LEN + length));
        }
        Ok(BlockPrefix {
            file_id: u32_at(p, 0),
            block_index: u64_at(p, 4),
            length,
        })
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::ConnectionLost(e.to_string())),
        }
    }
    Ok(filled)
}

fn read_exact_frame<R: Read>(r: &mut R, buf: &mut [u8], frame_so_far: usize) -> Result<()> {
    let got = read_full(r, buf)?;
    if got < buf.len() {
        return Err(Error::Truncated {
            expected: frame_so_far + buf.len(),
            actual: frame_so_far + got,
        });
    }
    Ok(())
}

/// Reads a frame header. `Ok(None)` on end of stream at a frame boundary.
pub fn read_header<R: Read>(r: &mut R) -> Result<Option<FrameHeader>> {
    let mut h = [0u8; HEADER_LEN];
    match read_full(r, &mut h)? {
        0 => Ok(None),
        HEADER_LEN => FrameHeader::parse(h).map(Some),
        n => Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: n,
        }),
    }
}

/// Reads the payload following `header` and decodes it.
pub fn read_payload<R: Read>(r: &mut R, header: FrameHeader) -> Result<TransferMessage> {
    if let Some(n) = fixed_len(header.kind) {
        if header.payload_len != n {
            return Err(mismatch(header.kind, header.payload_len, n));
        }
    }
    let mut p = vec![0u8; header.payload_len];
    read_exact_frame(r, &mut p, HEADER_LEN)?;
    decode_payload(header.kind, &p)
}

/// Reads the fixed part of a NEW_BLOCK payload; the caller reads `length` data bytes next.
pub fn read_block_prefix<R: Read>(r: &mut R, header: FrameHeader) -> Result<BlockPrefix> {
    debug_assert_eq!(header.kind, MessageKind::NewBlock);
    let mut p = [0u8; BLOCK_PREFIX_LEN];
    if header.payload_len < BLOCK_PREFIX_LEN {
        return Err(mismatch(MessageKind::NewBlock, header.payload_len, BLOCK_PREFIX_LEN));
    }
    read_exact_frame(r, &mut p, HEADER_LEN)?;
    BlockPrefix::parse(header.payload_len, &p)
}

/// Reads block data into `buf` (exactly `buf.len()` bytes).
pub fn read_block_data<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    read_exact_frame(r, buf, HEADER_LEN + BLOCK_PREFIX_LEN)
}

/// Reads one whole message. `Ok(None)` on end of stream at a frame boundary.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<TransferMessage>> {
    match read_header(r)? {
        None => Ok(None),
        Some(h) => read_payload(r, h).map(Some),
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &TransferMessage) -> Result<()> {
    let frame = msg.encode()?;
    w.write_all(&frame).map_err(io_lost)
}

/// Writes a NEW_BLOCK frame without copying `data` into an intermediate buffer.
pub fn write_block<W: Write>(w: &mut W, file_id: u32, block_index: u64, data: &[u8]) -> Result<()> {
    let mut head = [0u8; HEADER_LEN + BLOCK_PREFIX_LEN];
    head[0] = MessageKind::NewBlock as u8;
    let payload_len = u32::try_from(BLOCK_PREFIX_LEN + data.len())
        .map_err(|_| Error::Protocol("block exceeds u32 payload".into()))?;
    head[1..HEADER_LEN].copy_from_slice(&payload_len.to_le_bytes());
    head[HEADER_LEN..].copy_from_slice(&block_prefix(file_id, block_index, data.len())?);
    w.write_all(&head).map_err(io_lost)?;
    w.write_all(data).map_err(io_lost)
}

fn io_lost(e: io::Error) -> Error {
    Error::ConnectionLost(e.to_string())
}
