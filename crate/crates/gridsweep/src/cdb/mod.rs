//! Chemical-database access: byte-offset index tables over multi-record
//! MOL2 files, a concurrent TCP record server, the matching client, and
//! replica selection across servers.
//!
//! A database is treated as an opaque byte stream carved into records at
//! every `@<TRIPOS>MOLECULE` marker that starts a line. Record `n` (1-based)
//! runs from the `n`th marker up to the byte before the `n+1`th, so
//! concatenating all records reproduces the file from the first marker
//! onward. The index stores one `(offset, length)` pair per record plus the
//! source file's size and SHA-256, which lets a server refuse to serve a
//! database that changed under its index.
//!
//! Index file format (ASCII, LF):
//!
//! ```text
//! CDBIDX 1 <record-count> <source-size> <sha256-hex>
//! <n> <offset> <length>
//! ...
//! ```

mod client;
mod replica;
mod server;

pub use client::{fetch, ping, stat, CdbClientError, CdbConnection, ClientConfig};
pub use replica::{
    select_replica, ReplicaCatalogue, ReplicaError, ReplicaInfo, SelectionPolicy,
};
pub use server::{CdbServer, ServeConfig, ServeError};

use sha2::{Digest, Sha256};

/// Marker that begins every molecule record, at start of line.
pub const RECORD_MARKER: &[u8] = b"@<TRIPOS>MOLECULE";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdbIndex {
    pub source_size: u64,
    /// SHA-256 of the whole database file, lowercase hex.
    pub source_checksum: String,
    /// Entry `n` (1-based) lives at `entries[n - 1]`.
    pub entries: Vec<IndexEntry>,
}

impl CdbIndex {
    pub fn record_count(&self) -> u64 {
        self.entries.len() as u64
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IndexError {
    #[error("empty database: no record marker found")]
    EmptyDatabase,
    #[error("molecule number {n} is out of range 1..={count}")]
    OutOfRange { n: u64, count: u64 },
    #[error("refusing to write an index with no entries")]
    EmptyIndex,
    #[error("line 1: bad index header")]
    BadHeader,
    #[error("unsupported index version `{0}`")]
    VersionMismatch(String),
    #[error("index table truncated: header says {expected} entries, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("checksum field malformed: `{0}`")]
    MalformedChecksum(String),
    #[error("line {line}: malformed index entry")]
    MalformedEntry { line: usize },
    #[error("index entries do not tile the file at record {n}")]
    NonContiguous { n: u64 },
    #[error("stale index: source size changed (index says {indexed}, file is {actual})")]
    SizeChanged { indexed: u64, actual: u64 },
    #[error("stale index: source checksum changed")]
    ChecksumChanged,
}

/// Offsets of every record marker that begins a line.
fn marker_offsets(bytes: &[u8]) -> Vec<u64> {
    let mut offsets = Vec::new();
    let mut at_line_start = true;
    let mut i = 0;
    while i < bytes.len() {
        if at_line_start && bytes[i..].starts_with(RECORD_MARKER) {
            offsets.push(i as u64);
        }
        at_line_start = bytes[i] == b'\n';
        i += 1;
    }
    offsets
}

/// Build the index table for a database held in memory.
///
/// Leading bytes before the first marker are not part of any record but do
/// count toward the source size and checksum.
pub fn build_index(bytes: &[u8]) -> Result<CdbIndex, IndexError> {
    let offsets = marker_offsets(bytes);
    if offsets.is_empty() {
        return Err(IndexError::EmptyDatabase);
    }
    let mut entries = Vec::with_capacity(offsets.len());
    for (i, &offset) in offsets.iter().enumerate() {
        let end = offsets.get(i + 1).copied().unwrap_or(bytes.len() as u64);
        entries.push(IndexEntry { offset, length: end - offset });
    }
    Ok(CdbIndex {
        source_size: bytes.len() as u64,
        source_checksum: hex::encode(Sha256::digest(bytes)),
        entries,
    })
}

/// Location of record `n` (1-based).
pub fn lookup(index: &CdbIndex, n: u64) -> Result<IndexEntry, IndexError> {
    if n == 0 || n > index.record_count() {
        return Err(IndexError::OutOfRange { n, count: index.record_count() });
    }
    Ok(index.entries[(n - 1) as usize])
}

pub fn write_index(index: &CdbIndex) -> Result<String, IndexError> {
    if index.entries.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    let mut out = format!(
        "CDBIDX 1 {} {} {}\n",
        index.record_count(),
        index.source_size,
        index.source_checksum
    );
    for (i, e) in index.entries.iter().enumerate() {
        out.push_str(&format!("{} {} {}\n", i + 1, e.offset, e.length));
    }
    Ok(out)
}

pub fn read_index(text: &str) -> Result<CdbIndex, IndexError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(IndexError::BadHeader)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "CDBIDX" {
        return Err(IndexError::BadHeader);
    }
    if parts[1] != "1" {
        return Err(IndexError::VersionMismatch(parts[1].to_string()));
    }
    let count: u64 = parts[2].parse().map_err(|_| IndexError::BadHeader)?;
    let source_size: u64 = parts[3].parse().map_err(|_| IndexError::BadHeader)?;
    let checksum = parts[4].to_string();
    if checksum.len() != 64 || !checksum.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(IndexError::MalformedChecksum(checksum));
    }

    let mut entries = Vec::with_capacity(count as usize);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(IndexError::MalformedEntry { line: line_no });
        }
        let n: u64 = fields[0].parse().map_err(|_| IndexError::MalformedEntry { line: line_no })?;
        let offset: u64 =
            fields[1].parse().map_err(|_| IndexError::MalformedEntry { line: line_no })?;
        let length: u64 =
            fields[2].parse().map_err(|_| IndexError::MalformedEntry { line: line_no })?;
        if n != entries.len() as u64 + 1 {
            return Err(IndexError::MalformedEntry { line: line_no });
        }
        entries.push(IndexEntry { offset, length });
    }
    if (entries.len() as u64) < count {
        return Err(IndexError::Truncated { expected: count, actual: entries.len() as u64 });
    }
    if entries.len() as u64 > count {
        return Err(IndexError::BadHeader);
    }

    // Records must tile from the first marker to end of file.
    for i in 0..entries.len() {
        let end = entries[i].offset + entries[i].length;
        let expected = entries.get(i + 1).map(|e| e.offset).unwrap_or(source_size);
        if end != expected || entries[i].length == 0 {
            return Err(IndexError::NonContiguous { n: i as u64 + 1 });
        }
    }

    Ok(CdbIndex { source_size, source_checksum: checksum, entries })
}

/// Check an index against the current database bytes' size and checksum.
pub fn verify_index(index: &CdbIndex, db_bytes: &[u8]) -> Result<(), IndexError> {
    if index.source_size != db_bytes.len() as u64 {
        return Err(IndexError::SizeChanged {
            indexed: index.source_size,
            actual: db_bytes.len() as u64,
        });
    }
    if index.source_checksum != hex::encode(Sha256::digest(db_bytes)) {
        return Err(IndexError::ChecksumChanged);
    }
    Ok(())
}

/// `true` when the name is acceptable on the wire: `[A-Za-z0-9_.-]+`.
pub fn is_valid_db_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'.' || b == b'-')
}

#[cfg(test)]
mod tests;
