//! Blocking client connection to one store server.

use std::fmt;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::time::Duration;

use bytes::Bytes;
use thiserror::Error;

use crate::wire::{self, Request, Response, Status, WireError};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

/// A server address as written in configs: `host:port`, optionally preceded
/// by a transport scheme such as `ofi+tcp://`. Only TCP is spoken; the scheme
/// is recorded and otherwise ignored.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Endpoint {
    host: String,
    port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Endpoint {
            host: host.into(),
            port,
        }
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn resolve(&self) -> io::Result<SocketAddr> {
        let host = self.host.trim_start_matches('[').trim_end_matches(']');
        (host, self.port)
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{self} did not resolve")))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid endpoint {0:?}: expected host:port")]
pub struct EndpointParseError(pub String);

impl FromStr for Endpoint {
    type Err = EndpointParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EndpointParseError(s.to_string());
        let rest = match s.split_once("://") {
            Some((_, rest)) => rest,
            None => s,
        };
        let (host, port) = rest.rsplit_once(':').ok_or_else(bad)?;
        if host.is_empty() || host.contains('/') {
            return Err(bad());
        }
        let port = port.parse().map_err(|_| bad())?;
        Ok(Endpoint::new(host, port))
    }
}

impl From<SocketAddr> for Endpoint {
    fn from(addr: SocketAddr) -> Self {
        match addr {
            SocketAddr::V4(a) => Endpoint::new(a.ip().to_string(), a.port()),
            SocketAddr::V6(a) => Endpoint::new(format!("[{}]", a.ip()), a.port()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {endpoint}: {source}")]
    Connect { endpoint: Endpoint, source: io::Error },
    #[error("transport error talking to {endpoint}: {source}")]
    Transport { endpoint: Endpoint, source: WireError },
    #[error("{endpoint} answered {status:?}: {message}")]
    Server {
        endpoint: Endpoint,
        status: Status,
        message: String,
    },
}

impl ClientError {
    pub fn endpoint(&self) -> &Endpoint {
        match self {
            ClientError::Connect { endpoint, .. }
            | ClientError::Transport { endpoint, .. }
            | ClientError::Server { endpoint, .. } => endpoint,
        }
    }
}

/// One TCP connection; requests are issued strictly one at a time.
pub struct StoreClient {
    endpoint: Endpoint,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl fmt::Debug for StoreClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StoreClient").field("endpoint", &self.endpoint).finish()
    }
}

impl StoreClient {
    pub fn connect(endpoint: &Endpoint) -> Result<Self, ClientError> {
        let connect_err = |source| ClientError::Connect {
            endpoint: endpoint.clone(),
            source,
        };
        let addr = endpoint.resolve().map_err(connect_err)?;
        let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).map_err(connect_err)?;
        stream.set_nodelay(true).map_err(connect_err)?;
        let reader = BufReader::with_capacity(256 * 1024, stream.try_clone().map_err(connect_err)?);
        Ok(StoreClient {
            endpoint: endpoint.clone(),
            reader,
            writer: BufWriter::with_capacity(256 * 1024, stream),
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Sends one request and waits for its response, whatever the status.
    pub fn call(&mut self, req: &Request) -> Result<Response, ClientError> {
        let transport = |source| ClientError::Transport {
            endpoint: self.endpoint.clone(),
            source,
        };
        wire::write_request(&mut self.writer, req).map_err(transport)?;
        self.writer.flush().map_err(|e| transport(e.into()))?;
        wire::read_response(&mut self.reader).map_err(transport)
    }

    fn expect_ok(&mut self, req: &Request) -> Result<Response, ClientError> {
        let resp = self.call(req)?;
        match resp.status {
            Status::Ok => Ok(resp),
            status => Err(self.server_error(status, &resp)),
        }
    }

    fn server_error(&self, status: Status, resp: &Response) -> ClientError {
        ClientError::Server {
            endpoint: self.endpoint.clone(),
            status,
            message: String::from_utf8_lossy(&resp.value).into_owned(),
        }
    }

    /// Like [`call`](Self::call) but maps NOT_FOUND to `None` and any other
    /// non-OK status to an error.
    fn optional(&mut self, req: &Request) -> Result<Option<Response>, ClientError> {
        let resp = self.call(req)?;
        match resp.status {
            Status::Ok => Ok(Some(resp)),
            Status::NotFound => Ok(None),
            status => Err(self.server_error(status, &resp)),
        }
    }

    pub fn ping(&mut self) -> Result<(), ClientError> {
        self.expect_ok(&Request::ping()).map(drop)
    }

    pub fn put(&mut self, key: impl Into<Bytes>, value: impl Into<Bytes>) -> Result<(), ClientError> {
        self.expect_ok(&Request::put(key, value)).map(drop)
    }

    pub fn get(&mut self, key: impl Into<Bytes>) -> Result<Option<Bytes>, ClientError> {
        Ok(self.optional(&Request::get(key))?.map(|r| r.value))
    }

    pub fn exists(&mut self, key: impl Into<Bytes>) -> Result<bool, ClientError> {
        Ok(self.optional(&Request::exists(key))?.is_some())
    }

    pub fn delete(&mut self, key: impl Into<Bytes>) -> Result<bool, ClientError> {
        Ok(self.optional(&Request::delete(key))?.is_some())
    }

    /// Keys with the given prefix, sorted. Keys are returned as UTF-8 text,
    /// which holds for every key this crate writes.
    pub fn list(&mut self, prefix: impl Into<Bytes>) -> Result<Vec<String>, ClientError> {
        let resp = self.expect_ok(&Request::list(prefix))?;
        if resp.value.is_empty() {
            return Ok(Vec::new());
        }
        Ok(String::from_utf8_lossy(&resp.value)
            .split('\n')
            .map(str::to_owned)
            .collect())
    }

    /// `(keys, bytes)` as reported by the STATUS call.
    pub fn status(&mut self) -> Result<(u64, u64), ClientError> {
        let resp = self.expect_ok(&Request::status())?;
        let text = String::from_utf8_lossy(&resp.value);
        let field = |name: &str| {
            text.split_whitespace()
                .find_map(|kv| kv.strip_prefix(name)?.strip_prefix('='))
                .and_then(|v| v.parse().ok())
        };
        match (field("keys"), field("bytes")) {
            (Some(keys), Some(bytes)) => Ok((keys, bytes)),
            _ => Err(self.server_error(Status::Ok, &resp)),
        }
    }
}
