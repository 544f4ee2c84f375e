//! Concurrent record server.
//!
//! One thread per connection; requests are CRLF-terminated ASCII lines and
//! a connection may carry any number of them in sequence:
//!
//! ```text
//! GET <database-name> <n>   ->  OK <length>\r\n  followed by <length> raw bytes
//! STAT <database-name>      ->  OK <record-count>\r\n
//! PING                      ->  OK 0\r\n
//! ```
//!
//! Request-level problems answer `ERR NODB <name>` / `ERR NOREC <n>` /
//! `ERR BADREQ` and keep the connection open; only malformed framing (an
//! oversized or non-terminated line) tears the connection down. Records are
//! read with positional I/O against a shared file handle, so a slow client
//! never holds up another connection.

use super::{is_valid_db_name, lookup, read_index, CdbIndex, IndexError};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::os::unix::fs::FileExt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

const MAX_REQUEST_LINE: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// database name -> (database file, index file)
    pub databases: BTreeMap<String, (PathBuf, PathBuf)>,
    /// Artificial delay before each response, for latency experiments.
    pub response_delay: Duration,
}

impl ServeConfig {
    pub fn new(databases: BTreeMap<String, (PathBuf, PathBuf)>) -> Self {
        ServeConfig { databases, response_delay: Duration::ZERO }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("database `{name}`: {source}")]
    Load { name: String, source: std::io::Error },
    #[error("database `{name}`: {source}")]
    Index { name: String, source: IndexError },
}

struct LoadedDb {
    file: File,
    index: CdbIndex,
}

struct Shared {
    dbs: BTreeMap<String, LoadedDb>,
    response_delay: Duration,
    shutdown: AtomicBool,
}

pub struct CdbServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept_thread: Option<JoinHandle<()>>,
}

impl CdbServer {
    /// Load every configured database, verify its index is current, and
    /// start accepting connections.
    pub fn start(bind: &str, config: ServeConfig) -> Result<CdbServer, ServeError> {
        let mut dbs = BTreeMap::new();
        for (name, (db_path, idx_path)) in &config.databases {
            let text = std::fs::read_to_string(idx_path)
                .map_err(|source| ServeError::Load { name: name.clone(), source })?;
            let index = read_index(&text)
                .map_err(|source| ServeError::Index { name: name.clone(), source })?;
            let file = File::open(db_path)
                .map_err(|source| ServeError::Load { name: name.clone(), source })?;
            verify_loaded(&file, &index)
                .map_err(|source| ServeError::Index { name: name.clone(), source })?;
            dbs.insert(name.clone(), LoadedDb { file, index });
        }

        let listener = TcpListener::bind(bind)
            .map_err(|source| ServeError::Bind { addr: bind.to_string(), source })?;
        let addr = listener.local_addr().expect("listener has a local addr");
        let shared = Arc::new(Shared {
            dbs,
            response_delay: config.response_delay,
            shutdown: AtomicBool::new(false),
        });

        let accept_shared = Arc::clone(&shared);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shared.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(conn) => {
                        let conn_shared = Arc::clone(&accept_shared);
                        std::thread::spawn(move || {
                            let _ = serve_connection(conn, &conn_shared);
                        });
                    }
                    Err(_) => continue,
                }
            }
        });

        Ok(CdbServer { addr, shared, accept_thread: Some(accept_thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Stop accepting connections. In-flight requests finish on their own
    /// threads.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for CdbServer {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop();
        }
    }
}

/// Staleness check without pulling the whole file into memory.
fn verify_loaded(file: &File, index: &CdbIndex) -> Result<(), IndexError> {
    let actual = file.metadata().map(|m| m.len()).unwrap_or(0);
    if actual != index.source_size {
        return Err(IndexError::SizeChanged { indexed: index.source_size, actual });
    }
    let mut hasher = Sha256::new();
    let mut reader = std::io::BufReader::with_capacity(1 << 16, file);
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(|_| IndexError::ChecksumChanged)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    if hex::encode(hasher.finalize()) != index.source_checksum {
        return Err(IndexError::ChecksumChanged);
    }
    Ok(())
}

/// Read one CRLF- (or LF-) terminated request line. `Ok(None)` on clean EOF,
/// `Err` on oversized lines or EOF mid-line (framing violations).
fn read_request_line(reader: &mut impl std::io::BufRead) -> std::io::Result<Option<String>> {
    let mut line = Vec::new();
    let n = reader.take(MAX_REQUEST_LINE as u64).read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        let kind = if n >= MAX_REQUEST_LINE {
            std::io::ErrorKind::InvalidData
        } else {
            std::io::ErrorKind::UnexpectedEof
        };
        return Err(std::io::Error::new(kind, "malformed request framing"));
    }
    line.pop();
    if line.last() == Some(&b'\r') {
        line.pop();
    }
    Ok(Some(String::from_utf8_lossy(&line).into_owned()))
}

fn serve_connection(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut read_half = std::io::BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(line) = read_request_line(&mut read_half)? {
        if !shared.response_delay.is_zero() {
            std::thread::sleep(shared.response_delay);
        }
        respond(&line, shared, &mut writer)?;
        writer.flush()?;
    }
    Ok(())
}

fn respond(line: &str, shared: &Shared, out: &mut impl Write) -> std::io::Result<()> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    match parts.as_slice() {
        ["PING"] => write!(out, "OK 0\r\n"),
        ["STAT", name] => {
            if !is_valid_db_name(name) {
                return write!(out, "ERR BADREQ\r\n");
            }
            match shared.dbs.get(*name) {
                Some(db) => write!(out, "OK {}\r\n", db.index.record_count()),
                None => write!(out, "ERR NODB {}\r\n", name),
            }
        }
        ["GET", name, number] => {
            if !is_valid_db_name(name) {
                return write!(out, "ERR BADREQ\r\n");
            }
            let db = match shared.dbs.get(*name) {
                Some(db) => db,
                None => return write!(out, "ERR NODB {}\r\n", name),
            };
            let n: u64 = match number.parse() {
                Ok(n) => n,
                Err(_) => return write!(out, "ERR BADREQ\r\n"),
            };
            let entry = match lookup(&db.index, n) {
                Ok(e) => e,
                Err(_) => return write!(out, "ERR NOREC {}\r\n", n),
            };
            write!(out, "OK {}\r\n", entry.length)?;
            // Positional reads; no shared cursor, no full-file scan.
            let mut remaining = entry.length;
            let mut pos = entry.offset;
            let mut buf = vec![0u8; 1 << 16];
            while remaining > 0 {
                let chunk = remaining.min(buf.len() as u64) as usize;
                db.file.read_exact_at(&mut buf[..chunk], pos)?;
                out.write_all(&buf[..chunk])?;
                pos += chunk as u64;
                remaining -= chunk as u64;
            }
            Ok(())
        }
        _ => write!(out, "ERR BADREQ\r\n"),
    }
}
