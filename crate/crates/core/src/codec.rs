//! Little-endian binary helpers shared by the model, feature and index files.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        needed: usize,
        offset: usize,
        available: usize,
    },
    #[error("shape error in {what}")]
    Shape { what: String },
    #[error("unknown {what} tag {tag}")]
    UnknownTag { what: &'static str, tag: u8 },
    #[error("{count} trailing bytes after payload")]
    TrailingBytes { count: usize },
    #[error("dimension mismatch: file has {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
}

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut w = Self::default();
        w.buf.extend_from_slice(magic);
        w.u16(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.buf.reserve(v.len() * 4);
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Validates magic and version and positions the cursor after them.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self, FormatError> {
        let head = &bytes[..bytes.len().min(4)];
        if head != magic {
            return Err(FormatError::BadMagic {
                expected: *magic,
                found: head.to_vec(),
            });
        }
        let mut r = Self { bytes, pos: 4 };
        let found = r.u16()?;
        if found != version {
            return Err(FormatError::UnsupportedVersion {
                found,
                supported: version,
            });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                needed: n,
                offset: self.pos,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = self.take(n.checked_mul(4).ok_or(FormatError::Truncated {
            needed: usize::MAX,
            offset: self.pos,
            available: self.bytes.len() - self.pos,
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn finish(self) -> Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            count => Err(FormatError::TrailingBytes { count }),
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    Ok(std::fs::read(path)?)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(std::fs::write(path, bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_errors_are_distinct() {
        let mut w = Writer::new(b"TEST", 3);
        w.u32(7);
        let bytes = w.finish();

        assert!(matches!(
            Reader::open(b"NOPE\x03\x00", b"TEST", 3),
            Err(FormatError::BadMagic { .. })
        ));
        assert!(matches!(
            Reader::open(&bytes, b"TEST", 4),
            Err(FormatError::UnsupportedVersion { found: 3, .. })
        ));
        let mut r = Reader::open(&bytes[..8], b"TEST", 3).unwrap();
        assert!(matches!(r.u32(), Err(FormatError::Truncated { .. })));
        let mut r = Reader::open(&bytes, b"TEST", 3).unwrap();
        assert_eq!(r.u32().unwrap(), 7);
        r.finish().unwrap();
    }

    #[test]
    fn empty_input_is_bad_magic() {
        assert!(matches!(
            Reader::open(&[], b"TEST", 1),
            Err(FormatError::BadMagic { .. })
        ));
    }
}
