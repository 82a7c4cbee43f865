//! Shared on-disk layout for index and vector files.
//!
//! ```text
//! <MAGIC> <version>\n
//! key=value\n            (zero or more)
//! \n
//! little-endian binary body
//! MRAGEND1               (trailer)
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

const TRAILER: &[u8; 8] = b"MRAGEND1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextHeader {
    pub magic: String,
    pub version: u32,
    fields: BTreeMap<String, String>,
}

impl TextHeader {
    pub fn new(magic: &str, version: u32) -> Self {
        TextHeader {
            magic: magic.to_string(),
            version,
            fields: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        let v = value.to_string();
        assert!(!v.contains('\n'), "header values are single-line");
        self.fields.insert(key.to_string(), v);
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .fields
            .get(key)
            .ok_or_else(|| Error::Format(format!("header field {key:?} missing")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("header field {key:?} has bad value {raw:?}")))
    }

    fn render(&self) -> String {
        let mut s = format!("{} {}\n", self.magic, self.version);
        for (k, v) in &self.fields {
            s.push_str(&format!("{k}={v}\n"));
        }
        s.push('\n');
        s
    }
}

pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn with_header(header: &TextHeader) -> Self {
        ByteWriter {
            buf: header.render().into_bytes(),
        }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed (u32) byte string.
    pub fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.buf.extend_from_slice(TRAILER);
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn with_header(buf: &'a [u8], magic: &str, version: u32) -> Result<(TextHeader, Self)> {
        let mut pos = 0;
        let mut next_line = || -> Result<&'a str> {
            let rest = &buf[pos..];
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::Format("truncated header".into()))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| Error::Format("header is not utf-8".into()))
        };
        let first = next_line()?;
        let (m, v) = first
            .split_once(' ')
            .ok_or_else(|| Error::Format(format!("bad magic line {first:?}")))?;
        if m != magic {
            return Err(Error::Format(format!("expected {magic} file, found {m:?}")));
        }
        let found: u32 = v
            .parse()
            .map_err(|_| Error::Format(format!("bad version {v:?}")))?;
        if found != version {
            return Err(Error::Format(format!(
                "unsupported {magic} version {found} (expected {version})"
            )));
        }
        let mut header = TextHeader::new(magic, version);
        loop {
            let line = next_line()?;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            header.fields.insert(k.to_string(), v.to_string());
        }
        Ok((header, ByteReader { buf, pos }))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    /// Checks the trailer and that nothing follows it.
    pub fn finish(mut self) -> Result<()> {
        if self.take(TRAILER.len())? != TRAILER || self.pos != self.buf.len() {
            return Err(Error::Format("missing or misplaced trailer".into()));
        }
        Ok(())
    }
}
