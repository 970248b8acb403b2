//! The `MACD` binary container shared by datasets and checkpoints.
//!
//! ```text
//! "MACD" | version u16 | kind u16 | block* | END block
//! block = tag [4]u8 | len u64 | payload [len]u8 | crc32(tag | len | payload) u32
//! ```
//!
//! Everything is little-endian; reals are IEEE-754 binary64.

use crate::error::{FormatError, Result};
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"MACD";
pub const VERSION: u16 = 1;
const END: [u8; 4] = *b"END\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum FileKind {
    Records = 1,
    Windows = 2,
    Checkpoint = 3,
}

/// Tag plus payload of one decoded block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub tag: [u8; 4],
    pub payload: Vec<u8>,
}

impl Block {
    pub fn tag_str(&self) -> String {
        String::from_utf8_lossy(&self.tag).trim_end_matches('\0').to_string()
    }
}

fn block_crc(tag: &[u8; 4], len: u64, payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(tag);
    h.update(&len.to_le_bytes());
    h.update(payload);
    h.finalize()
}

pub fn write_container<W: Write>(mut w: W, kind: FileKind, blocks: &[Block]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(kind as u16).to_le_bytes())?;
    let end = Block {
        tag: END,
        payload: Vec::new(),
    };
    for b in blocks.iter().chain(std::iter::once(&end)) {
        let len = b.payload.len() as u64;
        w.write_all(&b.tag)?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&b.payload)?;
        w.write_all(&block_crc(&b.tag, len, &b.payload).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a whole container, checking magic, version, kind and every CRC.
pub fn read_container<R: Read>(mut r: R, kind: FileKind) -> Result<Vec<Block>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    Ok(parse_container(&bytes, kind)?)
}

pub fn parse_container(bytes: &[u8], kind: FileKind) -> Result<Vec<Block>, FormatError> {
    let mut d = Decoder::new(bytes);
    if d.bytes(4).map_err(|_| FormatError::BadMagic)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = d.u16()?;
    if version != VERSION {
        return Err(FormatError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let found = d.u16()?;
    if found != kind as u16 {
        return Err(FormatError::Kind {
            found,
            expected: kind as u16,
        });
    }
    let mut blocks = Vec::new();
    loop {
        let tag: [u8; 4] = d.bytes(4)?.try_into().expect("4 bytes");
        let len = d.u64()?;
        if len > d.remaining() as u64 {
            return Err(FormatError::Truncated);
        }
        let payload = d.bytes(len as usize)?.to_vec();
        let crc = d.u32()?;
        if crc != block_crc(&tag, len, &payload) {
            return Err(FormatError::Checksum {
                block: String::from_utf8_lossy(&tag).trim_end_matches('\0').to_string(),
            });
        }
        if tag == END {
            break;
        }
        blocks.push(Block { tag, payload });
    }
    if d.remaining() != 0 {
        return Err(FormatError::Malformed(format!("{} trailing bytes after END", d.remaining())));
    }
    Ok(blocks)
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Encoder::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        for &v in vs {
            self.f64(v);
        }
        self
    }

    /// Length-prefixed UTF-8.
    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn finish(self, tag: &[u8; 4]) -> Block {
        Block {
            tag: *tag,
            payload: self.buf,
        }
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated);
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        if self.remaining() / 8 < n {
            return Err(FormatError::Malformed(format!("{n} reals do not fit in the block")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let n = self.u32()? as usize;
        let raw = self
            .bytes(n)
            .map_err(|_| FormatError::Malformed("string overruns its block".into()))?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Malformed("string is not UTF-8".into()))
    }

    /// Errors unless the block was consumed exactly.
    pub fn finish(&self, what: &str) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::Malformed(format!("{} unread bytes in {what}", self.remaining())));
        }
        Ok(())
    }
}

/// Inside a CRC-valid block a short read means the writer and reader
/// disagree on layout, not that the file was cut short.
pub(crate) fn in_block<T>(r: Result<T, FormatError>) -> Result<T, FormatError> {
    r.map_err(|e| match e {
        FormatError::Truncated => FormatError::Malformed("block shorter than its declared layout".into()),
        other => other,
    })
}
