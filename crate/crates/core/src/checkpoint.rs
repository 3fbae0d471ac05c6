//! Versioned single-file container shared by every checkpoint kind.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "CYCLEDM\0"
//! version    u32       FORMAT_VERSION
//! header_len u32       length of the JSON header
//! header     JSON      {"kind": .., "meta": .., "blobs": [{"name": .., "len": ..}, ..]}
//! blobs      bytes     concatenated in header order
//! digest     32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CYCLEDM\0";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blobs: Vec<(String, Vec<u8>)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    blobs: Vec<BlobEntry>,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    len: u64,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self { kind: kind.into(), meta, blobs: Vec::new() }
    }

    pub fn with_blob(mut self, name: impl Into<String>, bytes: Vec<u8>) -> Self {
        self.blobs.push((name.into(), bytes));
        self
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::format("checkpoint", format!("missing blob `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            blobs: self.blobs.iter().map(|(n, b)| BlobEntry { name: n.clone(), len: b.len() as u64 }).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(48 + header.len() + self.blobs.iter().map(|b| b.1.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, b) in &self.blobs {
            out.extend_from_slice(b);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |r: &str| Error::format("checkpoint", r.to_string());
        if bytes.len() < 16 + 32 {
            return Err(bad("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        let header_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        if header_len > MAX_HEADER || 16 + header_len > body.len() {
            return Err(bad("header length out of range"));
        }
        let header: Header =
            serde_json::from_slice(&body[16..16 + header_len]).map_err(|e| bad(&format!("header: {e}")))?;
        let mut rest = &body[16 + header_len..];
        let mut blobs = Vec::with_capacity(header.blobs.len().min(64));
        for entry in header.blobs {
            let len = usize::try_from(entry.len).map_err(|_| bad("blob length overflow"))?;
            if len > rest.len() {
                return Err(bad(&format!("blob `{}` truncated", entry.name)));
            }
            let (b, tail) = rest.split_at(len);
            blobs.push((entry.name, b.to_vec()));
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after blobs"));
        }
        Ok(Self { kind: header.kind, meta: header.meta, blobs })
    }

    pub fn expect_kind(self, kind: &str) -> Result<Self> {
        if self.kind != kind {
            return Err(Error::Incompatible(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)));
        }
        Ok(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
