//! Record-server client: one request per round trip, connection reusable
//! sequentially.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub connect_timeout: Duration,
    pub io_timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { connect_timeout: Duration::from_secs(10), io_timeout: Duration::from_secs(30) }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CdbClientError {
    #[error("cannot resolve endpoint `{0}`")]
    BadEndpoint(String),
    #[error("cannot connect to {endpoint}: {source}")]
    Connect { endpoint: String, source: std::io::Error },
    #[error("i/o error talking to server: {0}")]
    Io(#[from] std::io::Error),
    #[error("server has no database `{0}`")]
    NoDatabase(String),
    #[error("no record {0} in database")]
    NoRecord(u64),
    #[error("server rejected the request as malformed")]
    BadRequest,
    #[error("framing error: {0}")]
    Framing(String),
}

impl CdbClientError {
    /// Connection-level failures, as opposed to protocol-level answers.
    pub fn is_connect(&self) -> bool {
        matches!(self, CdbClientError::Connect { .. } | CdbClientError::BadEndpoint(_))
    }
}

/// A connection to a record server. Requests are strictly sequential.
pub struct CdbConnection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl CdbConnection {
    pub fn connect(endpoint: &str, config: &ClientConfig) -> Result<Self, CdbClientError> {
        let addr: SocketAddr = endpoint
            .to_socket_addrs()
            .map_err(|_| CdbClientError::BadEndpoint(endpoint.to_string()))?
            .next()
            .ok_or_else(|| CdbClientError::BadEndpoint(endpoint.to_string()))?;
        let stream = TcpStream::connect_timeout(&addr, config.connect_timeout)
            .map_err(|source| CdbClientError::Connect { endpoint: endpoint.to_string(), source })?;
        stream.set_read_timeout(Some(config.io_timeout))?;
        stream.set_write_timeout(Some(config.io_timeout))?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(CdbConnection { reader, writer: stream })
    }

    fn request(&mut self, line: &str) -> Result<String, CdbClientError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\r\n")?;
        self.writer.flush()?;
        let mut status = String::new();
        let n = self.reader.read_line(&mut status)?;
        if n == 0 {
            return Err(CdbClientError::Framing("connection closed before status line".into()));
        }
        Ok(status.trim_end_matches(['\r', '\n']).to_string())
    }

    fn parse_ok(status: &str) -> Result<u64, CdbClientError> {
        let parts: Vec<&str> = status.split_whitespace().collect();
        match parts.as_slice() {
            ["OK", num] => {
                num.parse().map_err(|_| CdbClientError::Framing(format!("bad status `{}`", status)))
            }
            ["ERR", "NODB", name] => Err(CdbClientError::NoDatabase(name.to_string())),
            ["ERR", "NOREC", n] => Err(CdbClientError::NoRecord(n.parse().unwrap_or(0))),
            ["ERR", "BADREQ"] => Err(CdbClientError::BadRequest),
            _ => Err(CdbClientError::Framing(format!("bad status `{}`", status))),
        }
    }

    /// Fetch record `n`; returns the raw record bytes.
    pub fn fetch(&mut self, database: &str, n: u64) -> Result<Vec<u8>, CdbClientError> {
        let status = self.request(&format!("GET {} {}", database, n))?;
        let length = Self::parse_ok(&status)?;
        let mut bytes = vec![0u8; length as usize];
        self.reader.read_exact(&mut bytes).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                CdbClientError::Framing(format!("short read: wanted {} record bytes", length))
            } else {
                CdbClientError::Io(e)
            }
        })?;
        Ok(bytes)
    }

    /// Number of records the server holds for `database`.
    pub fn stat(&mut self, database: &str) -> Result<u64, CdbClientError> {
        let status = self.request(&format!("STAT {}", database))?;
        Self::parse_ok(&status)
    }

    /// One PING round trip; returns elapsed seconds.
    pub fn ping(&mut self) -> Result<f64, CdbClientError> {
        let start = Instant::now();
        let status = self.request("PING")?;
        Self::parse_ok(&status)?;
        Ok(start.elapsed().as_secs_f64())
    }
}

/// One-shot fetch over a fresh connection.
pub fn fetch(
    endpoint: &str,
    database: &str,
    n: u64,
    config: &ClientConfig,
) -> Result<Vec<u8>, CdbClientError> {
    CdbConnection::connect(endpoint, config)?.fetch(database, n)
}

/// One-shot stat over a fresh connection.
pub fn stat(endpoint: &str, database: &str, config: &ClientConfig) -> Result<u64, CdbClientError> {
    CdbConnection::connect(endpoint, config)?.stat(database)
}

/// One-shot ping over a fresh connection; round trip in seconds.
pub fn ping(endpoint: &str, config: &ClientConfig) -> Result<f64, CdbClientError> {
    CdbConnection::connect(endpoint, config)?.ping()
}
