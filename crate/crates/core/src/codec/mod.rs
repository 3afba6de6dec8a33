//! Chunk compression and the self-describing container every stored data
//! chunk uses.
//!
//! A container is a fixed 42-byte little-endian header followed by the body:
//!
//! | offset | size | field                                    |
//! |-------:|-----:|------------------------------------------|
//! | 0      | 4    | magic `SXC1`                             |
//! | 4      | 1    | codec: 0 none, 1 lossless, 2 lossy       |
//! | 5      | 1    | dtype: 1 f32, 2 f64, 3 i32, 4 i64, 5 u8  |
//! | 6      | 8    | element count                            |
//! | 14     | 8    | enforced absolute bound ε (f64, 0 if exact) |
//! | 22     | 8    | original byte size                       |
//! | 30     | 8    | body byte size                           |
//! | 38     | 4    | CRC-32 (IEEE) of the body                |
//!
//! Bodies:
//!
//! * none: the raw little-endian elements;
//! * lossless: [`shuffle`] by element width, then the [`lz`] token stream;
//! * lossy: `u64 bitmap_len | u64 codes_len | bitmap | codes | literals`,
//!   where each section is the lossless encoding of the corresponding part of
//!   the [`lossy`] token stream (element widths 1, 4 and the dtype width).

pub mod lossy;
pub mod lz;
pub mod shuffle;
pub mod spec;

use thiserror::Error;

use crate::dtype::{Dtype, FieldData, FieldRef};
pub use spec::{effective_abs_bound, BoundMode, Compression, CompressionSpec, SpecError};

pub const CONTAINER_MAGIC: [u8; 4] = *b"SXC1";
pub const HEADER_LEN: usize = 42;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid compression spec: {0}")]
    InvalidSpec(#[from] SpecError),
    #[error("lossy compression needs f32 or f64 data, got {0}")]
    UnsupportedDtype(Dtype),
    #[error("element size {size} is not one of 1, 4, 8 or does not divide {len} bytes")]
    BadElementSize { size: usize, len: usize },
    #[error("not a container: bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("container truncated")]
    Truncated,
    #[error("container checksum mismatch: header says {expected:08x}, body hashes to {actual:08x}")]
    ChecksumMismatch { expected: u32, actual: u32 },
    #[error("corrupt container: {0}")]
    Corrupt(String),
}

impl CodecError {
    /// Errors that mean stored bytes are damaged rather than a caller mistake.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            CodecError::BadMagic(_) | CodecError::Truncated | CodecError::ChecksumMismatch { .. } | CodecError::Corrupt(_)
        )
    }
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum CodecKind {
    None = 0,
    Lossless = 1,
    Lossy = 2,
}

impl CodecKind {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(CodecKind::None),
            1 => Ok(CodecKind::Lossless),
            2 => Ok(CodecKind::Lossy),
            other => Err(CodecError::Corrupt(format!("unknown codec {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContainerHeader {
    pub codec: CodecKind,
    pub dtype: Dtype,
    pub count: u64,
    pub epsilon: f64,
    pub original_size: u64,
    pub body_size: u64,
    pub checksum: u32,
}

impl ContainerHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&CONTAINER_MAGIC);
        out[4] = self.codec as u8;
        out[5] = self.dtype.code();
        out[6..14].copy_from_slice(&self.count.to_le_bytes());
        out[14..22].copy_from_slice(&self.epsilon.to_le_bytes());
        out[22..30].copy_from_slice(&self.original_size.to_le_bytes());
        out[30..38].copy_from_slice(&self.body_size.to_le_bytes());
        out[38..42].copy_from_slice(&self.checksum.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(CodecError::Truncated);
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != CONTAINER_MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::Truncated);
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let header = ContainerHeader {
            codec: CodecKind::from_code(bytes[4])?,
            dtype: Dtype::from_code(bytes[5])
                .ok_or_else(|| CodecError::Corrupt(format!("unknown dtype {}", bytes[5])))?,
            count: u64_at(6),
            epsilon: f64::from_le_bytes(bytes[14..22].try_into().unwrap()),
            original_size: u64_at(22),
            body_size: u64_at(30),
            checksum: u32::from_le_bytes(bytes[38..42].try_into().unwrap()),
        };
        let expected = header.count.checked_mul(header.dtype.size() as u64);
        if expected != Some(header.original_size) {
            return Err(CodecError::Corrupt(format!(
                "{} {} elements cannot occupy {} bytes",
                header.count, header.dtype, header.original_size
            )));
        }
        Ok(header)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: ContainerHeader,
    pub body: Vec<u8>,
}

impl Container {
    fn new(codec: CodecKind, dtype: Dtype, count: usize, epsilon: f64, body: Vec<u8>) -> Self {
        Container {
            header: ContainerHeader {
                codec,
                dtype,
                count: count as u64,
                epsilon,
                original_size: (count * dtype.size()) as u64,
                body_size: body.len() as u64,
                checksum: crc32fast::hash(&body),
            },
            body,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(&self.header.to_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    /// Parses and integrity-checks a container.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = ContainerHeader::parse(bytes)?;
        let body = &bytes[HEADER_LEN..];
        if (body.len() as u64) < header.body_size {
            return Err(CodecError::Truncated);
        }
        if body.len() as u64 != header.body_size {
            return Err(CodecError::Corrupt(format!(
                "{} body bytes but header declares {}",
                body.len(),
                header.body_size
            )));
        }
        let actual = crc32fast::hash(body);
        if actual != header.checksum {
            return Err(CodecError::ChecksumMismatch {
                expected: header.checksum,
                actual,
            });
        }
        Ok(Container {
            header,
            body: body.to_vec(),
        })
    }

    pub fn stored_size(&self) -> usize {
        HEADER_LEN + self.body.len()
    }

    /// Original size over stored size, header included.
    pub fn ratio(&self) -> f64 {
        self.header.original_size as f64 / self.stored_size() as f64
    }
}

fn check_element_size(len: usize, size: usize) -> Result<()> {
    if matches!(size, 1 | 4 | 8) && len % size == 0 {
        Ok(())
    } else {
        Err(CodecError::BadElementSize { size, len })
    }
}

/// Lossless body for `bytes` holding elements of `element_size` bytes.
pub fn compress_lossless(bytes: &[u8], element_size: usize) -> Result<Vec<u8>> {
    check_element_size(bytes.len(), element_size)?;
    Ok(lz::compress(&shuffle::shuffle(bytes, element_size)))
}

/// Inverse of [`compress_lossless`]; the decoded length must be exactly
/// `original_len`.
pub fn decompress_lossless(body: &[u8], element_size: usize, original_len: usize) -> Result<Vec<u8>> {
    check_element_size(original_len, element_size)?;
    let shuffled = lz::decompress(body, original_len)?;
    if shuffled.len() != original_len {
        return Err(CodecError::Corrupt(format!(
            "lossless stream decodes to {} bytes, expected {original_len}",
            shuffled.len()
        )));
    }
    Ok(shuffle::unshuffle(&shuffled, element_size))
}

fn lossy_body(stream: &lossy::TokenStream, width: usize) -> Vec<u8> {
    let bitmap = lz::compress(&stream.bitmap);
    let codes = lz::compress(&shuffle::shuffle(&stream.codes, 4));
    let literals = lz::compress(&shuffle::shuffle(&stream.literals, width));
    let mut body = Vec::with_capacity(16 + bitmap.len() + codes.len() + literals.len());
    body.extend_from_slice(&(bitmap.len() as u64).to_le_bytes());
    body.extend_from_slice(&(codes.len() as u64).to_le_bytes());
    body.extend_from_slice(&bitmap);
    body.extend_from_slice(&codes);
    body.extend_from_slice(&literals);
    body
}

fn split_lossy_body(body: &[u8], count: usize, width: usize) -> Result<lossy::TokenStream> {
    if body.len() < 16 {
        return Err(CodecError::Truncated);
    }
    let bitmap_len = u64::from_le_bytes(body[0..8].try_into().unwrap());
    let codes_len = u64::from_le_bytes(body[8..16].try_into().unwrap());
    let rest = &body[16..];
    let bitmap_end = usize::try_from(bitmap_len).ok().filter(|&l| l <= rest.len()).ok_or(CodecError::Truncated)?;
    let codes_end = usize::try_from(codes_len)
        .ok()
        .and_then(|l| bitmap_end.checked_add(l))
        .filter(|&e| e <= rest.len())
        .ok_or(CodecError::Truncated)?;

    let bitmap = lz::decompress(&rest[..bitmap_end], count.div_ceil(8))?;
    if bitmap.len() != count.div_ceil(8) {
        return Err(CodecError::Corrupt("escape bitmap has the wrong length".into()));
    }
    let literal_count: usize = bitmap.iter().map(|b| b.count_ones() as usize).sum();
    if literal_count > count || (count % 8 != 0 && bitmap[count / 8] >> (count % 8) != 0) {
        return Err(CodecError::Corrupt("escape bitmap marks elements past the end".into()));
    }
    let codes_len = (count - literal_count) * 4;
    let codes = lz::decompress(&rest[bitmap_end..codes_end], codes_len)?;
    let literals_len = literal_count * width;
    let literals = lz::decompress(&rest[codes_end..], literals_len)?;
    if codes.len() != codes_len || literals.len() != literals_len {
        return Err(CodecError::Corrupt("lossy sections do not match the escape bitmap".into()));
    }
    Ok(lossy::TokenStream {
        bitmap,
        codes: shuffle::unshuffle(&codes, 4),
        literals: shuffle::unshuffle(&literals, width),
    })
}

/// Error-bounded compression of float data. The bound actually enforced
/// (after REL/PSNR conversion) is recorded in the header.
pub fn compress_lossy(values: FieldRef<'_>, mode: BoundMode, value: f64) -> Result<Container> {
    Compression::Lossy { mode, value }.validate()?;
    let (count, dtype) = (values.len(), values.dtype());
    let (stream, eps, width) = match values {
        FieldRef::F32(v) => {
            let eps = effective_abs_bound(mode, value, v.iter().map(|&x| x as f64));
            (lossy::encode(v, eps), eps, 4)
        }
        FieldRef::F64(v) => {
            let eps = effective_abs_bound(mode, value, v.iter().copied());
            (lossy::encode(v, eps), eps, 8)
        }
        other => return Err(CodecError::UnsupportedDtype(other.dtype())),
    };
    Ok(Container::new(CodecKind::Lossy, dtype, count, eps, lossy_body(&stream, width)))
}

/// Compresses one chunk according to `compression`.
pub fn compress(values: FieldRef<'_>, compression: &Compression) -> Result<Container> {
    let dtype = values.dtype();
    match *compression {
        Compression::None => Ok(Container::new(CodecKind::None, dtype, values.len(), 0.0, values.to_le_bytes())),
        Compression::Lossless => {
            let body = compress_lossless(&values.to_le_bytes(), dtype.size())?;
            Ok(Container::new(CodecKind::Lossless, dtype, values.len(), 0.0, body))
        }
        Compression::Lossy { mode, value } => compress_lossy(values, mode, value),
    }
}

/// Decodes container bytes back into typed values.
pub fn decompress(bytes: &[u8]) -> Result<(FieldData, ContainerHeader)> {
    let container = Container::from_bytes(bytes)?;
    let values = decode_container(&container)?;
    Ok((values, container.header))
}

pub fn decode_container(container: &Container) -> Result<FieldData> {
    let header = &container.header;
    let count = usize::try_from(header.count).map_err(|_| CodecError::Corrupt("element count overflows".into()))?;
    let original = usize::try_from(header.original_size).map_err(|_| CodecError::Corrupt("size overflows".into()))?;
    let width = header.dtype.size();
    let body = &container.body;
    let raw = match header.codec {
        CodecKind::None => {
            if body.len() != original {
                return Err(CodecError::Corrupt("raw body length does not match element count".into()));
            }
            body.clone()
        }
        CodecKind::Lossless => decompress_lossless(body, width, original)?,
        CodecKind::Lossy => {
            let stream = split_lossy_body(body, count, width)?;
            return match header.dtype {
                Dtype::F32 => Ok(FieldData::F32(lossy::decode(&stream, count, header.epsilon)?)),
                Dtype::F64 => Ok(FieldData::F64(lossy::decode(&stream, count, header.epsilon)?)),
                other => Err(CodecError::Corrupt(format!("lossy container with {other} data"))),
            };
        }
    };
    FieldData::from_le_bytes(header.dtype, &raw)
        .ok_or_else(|| CodecError::Corrupt("decoded length is not a whole number of elements".into()))
}
