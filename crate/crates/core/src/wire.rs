//! Framed request/response protocol spoken between every client and store server.
//!
//! Every frame, request or response, has the same little-endian layout:
//!
//! ```text
//! +-------+------+---------+-----------+---------+-------------+
//! | magic | code | key_len | key bytes | val_len | value bytes |
//! | SRX1  |  u8  |   u32   |  key_len  |   u64   |   val_len   |
//! +-------+------+---------+-----------+---------+-------------+
//! ```
//!
//! `code` is the opcode for requests and the status for responses. Responses
//! always carry `key_len = 0`. A frame is exactly
//! `4 + 1 + 4 + key_len + 8 + val_len` bytes, so frames are self-delimiting and
//! can be read straight off a TCP stream.

use std::io::{self, Read, Write};

use bytes::Bytes;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SRX1";

/// Largest key accepted on the wire (64 KiB).
pub const MAX_KEY_LEN: usize = 64 * 1024;

/// Largest value accepted on the wire (4 GiB).
pub const MAX_VALUE_LEN: u64 = 4 * 1024 * 1024 * 1024;

/// Bytes of framing around key and value.
pub const FRAME_OVERHEAD: usize = 4 + 1 + 4 + 8;

// Values are read in bounded steps so a lying length field cannot force a
// huge allocation before any payload has arrived.
const READ_STEP: usize = 8 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown opcode {0}")]
    UnknownOpcode(u8),
    #[error("unknown status {0}")]
    UnknownStatus(u8),
    #[error("truncated frame")]
    Truncated,
    #[error("key length {0} exceeds the {MAX_KEY_LEN} byte limit")]
    KeyTooLong(u64),
    #[error("value length {0} exceeds the {MAX_VALUE_LEN} byte limit")]
    ValueTooLong(u64),
    #[error("{0:?} requires a non-empty key")]
    EmptyKey(Opcode),
    #[error("{0:?} must not carry a value")]
    UnexpectedValue(Opcode),
    #[error("response frames must have key_len 0, got {0}")]
    ResponseKey(u64),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(io::Error),
}

impl WireError {
    /// True for errors that mean the peer sent something invalid, as opposed
    /// to the transport failing.
    pub fn is_malformed(&self) -> bool {
        !matches!(self, WireError::Io(_))
    }
}

impl From<io::Error> for WireError {
    fn from(err: io::Error) -> Self {
        if err.kind() == io::ErrorKind::UnexpectedEof {
            WireError::Truncated
        } else {
            WireError::Io(err)
        }
    }
}

pub type Result<T, E = WireError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Put = 1,
    Get = 2,
    Exists = 3,
    List = 4,
    Delete = 5,
    Status = 6,
    Ping = 7,
}

impl Opcode {
    pub const ALL: [Opcode; 7] = [
        Opcode::Put,
        Opcode::Get,
        Opcode::Exists,
        Opcode::List,
        Opcode::Delete,
        Opcode::Status,
        Opcode::Ping,
    ];

    pub fn requires_key(self) -> bool {
        !matches!(self, Opcode::Status | Opcode::Ping)
    }
}

impl TryFrom<u8> for Opcode {
    type Error = WireError;

    fn try_from(code: u8) -> Result<Self> {
        Opcode::ALL
            .into_iter()
            .find(|op| *op as u8 == code)
            .ok_or(WireError::UnknownOpcode(code))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    NotFound = 1,
    Malformed = 2,
    ServerError = 3,
}

impl TryFrom<u8> for Status {
    type Error = WireError;

    fn try_from(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Status::Ok),
            1 => Ok(Status::NotFound),
            2 => Ok(Status::Malformed),
            3 => Ok(Status::ServerError),
            other => Err(WireError::UnknownStatus(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub opcode: Opcode,
    pub key: Bytes,
    pub value: Bytes,
}

impl Request {
    pub fn new(opcode: Opcode, key: impl Into<Bytes>) -> Self {
        Request {
            opcode,
            key: key.into(),
            value: Bytes::new(),
        }
    }

    pub fn put(key: impl Into<Bytes>, value: impl Into<Bytes>) -> Self {
        Request {
            opcode: Opcode::Put,
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn get(key: impl Into<Bytes>) -> Self {
        Request::new(Opcode::Get, key)
    }

    pub fn exists(key: impl Into<Bytes>) -> Self {
        Request::new(Opcode::Exists, key)
    }

    pub fn list(prefix: impl Into<Bytes>) -> Self {
        Request::new(Opcode::List, prefix)
    }

    pub fn delete(key: impl Into<Bytes>) -> Self {
        Request::new(Opcode::Delete, key)
    }

    pub fn status() -> Self {
        Request::new(Opcode::Status, Bytes::new())
    }

    pub fn ping() -> Self {
        Request::new(Opcode::Ping, Bytes::new())
    }

    pub fn validate(&self) -> Result<()> {
        check_lengths(self.key.len() as u64, self.value.len() as u64)?;
        if self.opcode.requires_key() && self.key.is_empty() {
            return Err(WireError::EmptyKey(self.opcode));
        }
        if self.opcode != Opcode::Put && !self.value.is_empty() {
            return Err(WireError::UnexpectedValue(self.opcode));
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.key.len() + self.value.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: Status,
    pub value: Bytes,
}

impl Response {
    pub fn ok() -> Self {
        Response::with_value(Status::Ok, Bytes::new())
    }

    pub fn ok_with(value: impl Into<Bytes>) -> Self {
        Response::with_value(Status::Ok, value)
    }

    pub fn status(status: Status) -> Self {
        Response::with_value(status, Bytes::new())
    }

    pub fn with_value(status: Status, value: impl Into<Bytes>) -> Self {
        Response {
            status,
            value: value.into(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.value.len()
    }
}

fn check_lengths(key_len: u64, val_len: u64) -> Result<()> {
    if key_len > MAX_KEY_LEN as u64 {
        return Err(WireError::KeyTooLong(key_len));
    }
    if val_len > MAX_VALUE_LEN {
        return Err(WireError::ValueTooLong(val_len));
    }
    Ok(())
}

fn frame_header(code: u8, key_len: u32) -> [u8; 9] {
    let mut head = [0u8; 9];
    head[..4].copy_from_slice(&MAGIC);
    head[4] = code;
    head[5..9].copy_from_slice(&key_len.to_le_bytes());
    head
}

fn write_frame<W: Write>(w: &mut W, code: u8, key: &[u8], value: &[u8]) -> io::Result<()> {
    w.write_all(&frame_header(code, key.len() as u32))?;
    w.write_all(key)?;
    w.write_all(&(value.len() as u64).to_le_bytes())?;
    w.write_all(value)
}

/// Reads `len` bytes without trusting `len` for the initial allocation.
fn read_exact_vec<R: Read>(r: &mut R, len: u64) -> Result<Vec<u8>> {
    let len = usize::try_from(len).map_err(|_| WireError::ValueTooLong(len))?;
    let mut buf = Vec::with_capacity(len.min(READ_STEP));
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() < len {
        return Err(WireError::Truncated);
    }
    Ok(buf)
}

struct RawFrame {
    code: u8,
    key: Vec<u8>,
    value: Vec<u8>,
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly before the
/// first byte of a frame.
fn read_raw<R: Read>(r: &mut R, validate_code: impl Fn(u8) -> Result<()>) -> Result<Option<RawFrame>> {
    let mut head = [0u8; 9];
    let mut filled = 0;
    while filled < head.len() {
        match r.read(&mut head[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let magic: [u8; 4] = head[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let code = head[4];
    validate_code(code)?;
    let key_len = u32::from_le_bytes(head[5..9].try_into().unwrap()) as u64;
    check_lengths(key_len, 0)?;
    let key = read_exact_vec(r, key_len)?;
    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf)?;
    let val_len = u64::from_le_bytes(len_buf);
    check_lengths(0, val_len)?;
    let value = read_exact_vec(r, val_len)?;
    Ok(Some(RawFrame { code, key, value }))
}

pub fn write_request<W: Write>(w: &mut W, req: &Request) -> Result<()> {
    req.validate()?;
    write_frame(w, req.opcode as u8, &req.key, &req.value)?;
    Ok(())
}

pub fn write_response<W: Write>(w: &mut W, resp: &Response) -> Result<()> {
    check_lengths(0, resp.value.len() as u64)?;
    write_frame(w, resp.status as u8, &[], &resp.value)?;
    Ok(())
}

/// Reads the next request off a stream; `Ok(None)` on clean end of stream.
pub fn read_request<R: Read>(r: &mut R) -> Result<Option<Request>> {
    let Some(raw) = read_raw(r, |code| Opcode::try_from(code).map(drop))? else {
        return Ok(None);
    };
    let req = Request {
        opcode: Opcode::try_from(raw.code)?,
        key: raw.key.into(),
        value: raw.value.into(),
    };
    req.validate()?;
    Ok(Some(req))
}

/// Reads the next response off a stream; end of stream is an error here since
/// a response was expected.
pub fn read_response<R: Read>(r: &mut R) -> Result<Response> {
    let raw = read_raw(r, |code| Status::try_from(code).map(drop))?.ok_or(WireError::Truncated)?;
    if !raw.key.is_empty() {
        return Err(WireError::ResponseKey(raw.key.len() as u64));
    }
    Ok(Response {
        status: Status::try_from(raw.code)?,
        value: raw.value.into(),
    })
}

pub fn encode_request(req: &Request) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(req.encoded_len());
    write_request(&mut out, req)?;
    Ok(out)
}

pub fn encode_response(resp: &Response) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(resp.encoded_len());
    write_response(&mut out, resp)?;
    Ok(out)
}

/// Decodes the request at the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_request_prefix(bytes: &[u8]) -> Result<(Request, usize)> {
    let mut cursor = io::Cursor::new(bytes);
    let req = read_request(&mut cursor)?.ok_or(WireError::Truncated)?;
    Ok((req, cursor.position() as usize))
}

pub fn decode_response_prefix(bytes: &[u8]) -> Result<(Response, usize)> {
    let mut cursor = io::Cursor::new(bytes);
    let resp = read_response(&mut cursor)?;
    Ok((resp, cursor.position() as usize))
}

/// Decodes exactly one request; trailing bytes are rejected.
pub fn decode_request(bytes: &[u8]) -> Result<Request> {
    let (req, used) = decode_request_prefix(bytes)?;
    match bytes.len() - used {
        0 => Ok(req),
        extra => Err(WireError::TrailingBytes(extra)),
    }
}

pub fn decode_response(bytes: &[u8]) -> Result<Response> {
    let (resp, used) = decode_response_prefix(bytes)?;
    match bytes.len() - used {
        0 => Ok(resp),
        extra => Err(WireError::TrailingBytes(extra)),
    }
}
