//! In-memory key-value store and the TCP server that exposes it.
//!
//! One [`Store`] backs one server process. Connections are served on their
//! own threads, each handling its requests strictly in order; the map itself
//! sits behind a reader-writer lock so every operation is atomic.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use bytes::Bytes;
use log::{debug, warn};
use serde::Deserialize;
use thiserror::Error;

use crate::wire::{self, Opcode, Request, Response, Status};

#[derive(Debug, Clone)]
pub struct StoreEntry {
    pub value: Bytes,
    pub stored_at: Instant,
}

#[derive(Debug, Default)]
struct Inner {
    map: BTreeMap<Bytes, StoreEntry>,
    bytes: u64,
}

/// The key-value map with memory accounting. `bytes` is always the sum of
/// `key.len() + value.len()` over every stored entry.
#[derive(Debug, Default)]
pub struct Store {
    inner: RwLock<Inner>,
    max_memory: u64,
}

impl Store {
    /// `max_memory` of 0 means unlimited.
    pub fn new(max_memory: u64) -> Self {
        Store {
            inner: RwLock::default(),
            max_memory,
        }
    }

    pub fn put(&self, key: Bytes, value: Bytes) -> Result<(), MemoryExceeded> {
        let mut inner = self.inner.write().unwrap();
        let old = inner
            .map
            .get(&key)
            .map_or(0, |e| (key.len() + e.value.len()) as u64);
        let new_total = inner.bytes - old + (key.len() + value.len()) as u64;
        if self.max_memory != 0 && new_total > self.max_memory {
            return Err(MemoryExceeded {
                requested: new_total,
                limit: self.max_memory,
            });
        }
        inner.bytes = new_total;
        inner.map.insert(
            key,
            StoreEntry {
                value,
                stored_at: Instant::now(),
            },
        );
        Ok(())
    }

    pub fn get(&self, key: &[u8]) -> Option<Bytes> {
        self.inner.read().unwrap().map.get(key).map(|e| e.value.clone())
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.inner.read().unwrap().map.contains_key(key)
    }

    pub fn delete(&self, key: &[u8]) -> bool {
        let mut inner = self.inner.write().unwrap();
        match inner.map.remove(key) {
            Some(entry) => {
                inner.bytes -= (key.len() + entry.value.len()) as u64;
                true
            }
            None => false,
        }
    }

    /// All keys starting with `prefix`, in lexicographic byte order.
    pub fn list(&self, prefix: &[u8]) -> Vec<Bytes> {
        let inner = self.inner.read().unwrap();
        inner
            .map
            .range::<[u8], _>((std::ops::Bound::Included(prefix), std::ops::Bound::Unbounded))
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// `(number of keys, stored key+value bytes)`.
    pub fn stats(&self) -> (usize, u64) {
        let inner = self.inner.read().unwrap();
        (inner.map.len(), inner.bytes)
    }

    pub fn handle(&self, req: Request) -> Response {
        match req.opcode {
            Opcode::Put => match self.put(req.key, req.value) {
                Ok(()) => Response::ok(),
                Err(err) => {
                    warn!("rejecting PUT: {err}");
                    Response::with_value(Status::ServerError, err.to_string())
                }
            },
            Opcode::Get => match self.get(&req.key) {
                Some(value) => Response::ok_with(value),
                None => Response::status(Status::NotFound),
            },
            Opcode::Exists => {
                if self.contains(&req.key) {
                    Response::ok_with(&[0x01u8][..])
                } else {
                    Response::status(Status::NotFound)
                }
            }
            Opcode::Delete => {
                if self.delete(&req.key) {
                    Response::ok()
                } else {
                    Response::status(Status::NotFound)
                }
            }
            Opcode::List => {
                let keys = self.list(&req.key);
                let mut out = Vec::with_capacity(keys.iter().map(|k| k.len() + 1).sum());
                for (i, key) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(b'\n');
                    }
                    out.extend_from_slice(key);
                }
                Response::ok_with(out)
            }
            Opcode::Status => {
                let (keys, bytes) = self.stats();
                Response::ok_with(format!("keys={keys} bytes={bytes}"))
            }
            Opcode::Ping => Response::ok(),
        }
    }
}

#[derive(Debug, Error)]
#[error("memory cap exceeded: store would hold {requested} bytes, limit is {limit}")]
pub struct MemoryExceeded {
    pub requested: u64,
    pub limit: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ServerConfig {
    pub bind: String,
    #[serde(default)]
    pub max_memory: u64,
    /// Accepted for compatibility with provider configs; unused.
    #[serde(default)]
    pub provider_id: Option<u32>,
}

impl ServerConfig {
    pub fn new(bind: impl Into<String>) -> Self {
        ServerConfig {
            bind: bind.into(),
            max_memory: 0,
            provider_id: None,
        }
    }

    pub fn bind_addr(&self) -> Result<SocketAddr, ServeError> {
        let bad = || ServeError::BadAddress(self.bind.clone());
        // Require an explicit port; ToSocketAddrs would also resolve names.
        let (_, port) = self.bind.rsplit_once(':').ok_or_else(bad)?;
        port.parse::<u16>().map_err(|_| bad())?;
        self.bind
            .to_socket_addrs()
            .map_err(|_| bad())?
            .next()
            .ok_or_else(bad)
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("invalid bind address {0:?}: expected host:port")]
    BadAddress(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A bound, not yet running, store server.
pub struct Server {
    listener: TcpListener,
    store: Arc<Store>,
    shutdown: Arc<AtomicBool>,
    conns: Arc<Connections>,
}

/// Open connections, so shutdown can close them the way process exit would.
#[derive(Default)]
struct Connections {
    next: AtomicU64,
    open: Mutex<HashMap<u64, TcpStream>>,
}

impl Connections {
    fn add(&self, stream: &TcpStream) -> Option<u64> {
        let clone = stream.try_clone().ok()?;
        let id = self.next.fetch_add(1, Ordering::Relaxed);
        self.open.lock().unwrap().insert(id, clone);
        Some(id)
    }

    fn remove(&self, id: Option<u64>) {
        if let Some(id) = id {
            self.open.lock().unwrap().remove(&id);
        }
    }

    fn close_all(&self) {
        for (_, stream) in self.open.lock().unwrap().drain() {
            let _ = stream.shutdown(Shutdown::Both);
        }
    }
}

/// Lets another thread stop a running [`Server`].
#[derive(Clone)]
pub struct ShutdownHandle {
    flag: Arc<AtomicBool>,
    addr: SocketAddr,
    conns: Arc<Connections>,
}

impl ShutdownHandle {
    /// Stops accepting and closes every open connection.
    pub fn shutdown(&self) {
        self.flag.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        self.conns.close_all();
    }

    pub fn flag(&self) -> Arc<AtomicBool> {
        self.flag.clone()
    }
}

impl Server {
    pub fn bind(config: &ServerConfig) -> Result<Self, ServeError> {
        let addr = config.bind_addr()?;
        let listener = TcpListener::bind(addr).map_err(|source| ServeError::Bind { addr, source })?;
        Ok(Server {
            listener,
            store: Arc::new(Store::new(config.max_memory)),
            shutdown: Arc::new(AtomicBool::new(false)),
            conns: Arc::default(),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn store(&self) -> Arc<Store> {
        self.store.clone()
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle {
            flag: self.shutdown.clone(),
            addr: self.local_addr(),
            conns: self.conns.clone(),
        }
    }

    /// Accepts connections until shut down.
    pub fn run(self) -> Result<(), ServeError> {
        for conn in self.listener.incoming() {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(stream) => stream,
                Err(err) => {
                    warn!("accept failed: {err}");
                    continue;
                }
            };
            let store = self.store.clone();
            let conns = self.conns.clone();
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                let id = conns.add(&stream);
                if let Err(err) = serve_connection(stream, &store) {
                    debug!("connection {peer:?} ended: {err}");
                }
                conns.remove(id);
            });
        }
        Ok(())
    }

    /// Runs the server on a background thread. Handy for tests and for
    /// benchmarks that need a local endpoint.
    pub fn spawn(self) -> RunningServer {
        let addr = self.local_addr();
        let handle = self.shutdown_handle();
        let store = self.store();
        let thread = thread::spawn(move || self.run());
        RunningServer {
            addr,
            handle,
            store,
            thread: Some(thread),
        }
    }
}

pub struct RunningServer {
    pub addr: SocketAddr,
    pub store: Arc<Store>,
    handle: ShutdownHandle,
    thread: Option<thread::JoinHandle<Result<(), ServeError>>>,
}

impl RunningServer {
    pub fn start_local() -> io::Result<RunningServer> {
        Server::bind(&ServerConfig::new("127.0.0.1:0"))
            .map(Server::spawn)
            .map_err(|e| io::Error::other(e.to_string()))
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn stop(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(thread) = self.thread.take() {
            self.handle.shutdown();
            let _ = thread.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn serve_connection(stream: TcpStream, store: &Store) -> Result<(), wire::WireError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::with_capacity(256 * 1024, stream.try_clone()?);
    let mut writer = BufWriter::with_capacity(256 * 1024, stream);
    loop {
        let req = match wire::read_request(&mut reader) {
            Ok(Some(req)) => req,
            Ok(None) => return Ok(()),
            Err(err) if err.is_malformed() => {
                debug!("malformed request: {err}");
                wire::write_response(&mut writer, &Response::with_value(Status::Malformed, err.to_string()))?;
                writer.flush()?;
                return Err(err);
            }
            Err(err) => return Err(err),
        };
        let resp = store.handle(req);
        wire::write_response(&mut writer, &resp)?;
        writer.flush()?;
    }
}
