//! Element types and typed arrays moved through the staging pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
    I32 = 3,
    I64 = 4,
    U8 = 5,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
            Dtype::U8 => 1,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::F32 | Dtype::F64)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        [Dtype::F32, Dtype::F64, Dtype::I32, Dtype::I64, Dtype::U8]
            .into_iter()
            .find(|d| d.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::I32 => "i32",
            Dtype::I64 => "i64",
            Dtype::U8 => "u8",
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unsupported dtype {0:?}")]
pub struct UnknownDtype(pub String);

impl FromStr for Dtype {
    type Err = UnknownDtype;

    /// Accepts the short names (`f32`) as well as the C spellings simulation
    /// codes pass (`float`, `double`, `int`, `int64_t`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "f32" | "float" | "float32" => Dtype::F32,
            "f64" | "double" | "float64" => Dtype::F64,
            "i32" | "int" | "int32" | "int32_t" => Dtype::I32,
            "i64" | "long" | "int64" | "int64_t" | "long long" => Dtype::I64,
            "u8" | "uint8" | "uint8_t" | "byte" | "char" => Dtype::U8,
            _ => return Err(UnknownDtype(s.to_string())),
        })
    }
}

/// An owned 1-D array of one of the supported element types.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

/// A borrowed view of a 1-D array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldRef<'a> {
    F32(&'a [f32]),
    F64(&'a [f64]),
    I32(&'a [i32]),
    I64(&'a [i64]),
    U8(&'a [u8]),
}

macro_rules! dispatch {
    ($value:expr, $v:ident => $body:expr) => {
        match $value {
            Self::F32($v) => $body,
            Self::F64($v) => $body,
            Self::I32($v) => $body,
            Self::I64($v) => $body,
            Self::U8($v) => $body,
        }
    };
}

impl<'a> FieldRef<'a> {
    pub fn dtype(&self) -> Dtype {
        match self {
            FieldRef::F32(_) => Dtype::F32,
            FieldRef::F64(_) => Dtype::F64,
            FieldRef::I32(_) => Dtype::I32,
            FieldRef::I64(_) => Dtype::I64,
            FieldRef::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        dispatch!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Little-endian element bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        dispatch!(self, v => v.iter().flat_map(|x| x.to_le_bytes()).collect())
    }

    pub fn to_owned(&self) -> FieldData {
        match *self {
            FieldRef::F32(v) => FieldData::F32(v.to_vec()),
            FieldRef::F64(v) => FieldData::F64(v.to_vec()),
            FieldRef::I32(v) => FieldData::I32(v.to_vec()),
            FieldRef::I64(v) => FieldData::I64(v.to_vec()),
            FieldRef::U8(v) => FieldData::U8(v.to_vec()),
        }
    }
}

impl FieldData {
    pub fn as_ref(&self) -> FieldRef<'_> {
        match self {
            FieldData::F32(v) => FieldRef::F32(v),
            FieldData::F64(v) => FieldRef::F64(v),
            FieldData::I32(v) => FieldRef::I32(v),
            FieldData::I64(v) => FieldRef::I64(v),
            FieldData::U8(v) => FieldRef::U8(v),
        }
    }

    pub fn dtype(&self) -> Dtype {
        self.as_ref().dtype()
    }

    pub fn len(&self) -> usize {
        self.as_ref().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn empty(dtype: Dtype) -> FieldData {
        match dtype {
            Dtype::F32 => FieldData::F32(Vec::new()),
            Dtype::F64 => FieldData::F64(Vec::new()),
            Dtype::I32 => FieldData::I32(Vec::new()),
            Dtype::I64 => FieldData::I64(Vec::new()),
            Dtype::U8 => FieldData::U8(Vec::new()),
        }
    }

    /// Rebuilds an array from little-endian bytes. Returns `None` when the
    /// byte length is not a multiple of the element size.
    pub fn from_le_bytes(dtype: Dtype, bytes: &[u8]) -> Option<FieldData> {
        if bytes.len() % dtype.size() != 0 {
            return None;
        }
        fn chunks<const N: usize, T>(bytes: &[u8], f: fn([u8; N]) -> T) -> Vec<T> {
            bytes.chunks_exact(N).map(|c| f(c.try_into().unwrap())).collect()
        }
        Some(match dtype {
            Dtype::F32 => FieldData::F32(chunks(bytes, f32::from_le_bytes)),
            Dtype::F64 => FieldData::F64(chunks(bytes, f64::from_le_bytes)),
            Dtype::I32 => FieldData::I32(chunks(bytes, i32::from_le_bytes)),
            Dtype::I64 => FieldData::I64(chunks(bytes, i64::from_le_bytes)),
            Dtype::U8 => FieldData::U8(bytes.to_vec()),
        })
    }

    /// Appends `other`; `false` (and no change) if the dtypes differ.
    pub fn extend_from(&mut self, other: &FieldData) -> bool {
        match (self, other) {
            (FieldData::F32(a), FieldData::F32(b)) => a.extend_from_slice(b),
            (FieldData::F64(a), FieldData::F64(b)) => a.extend_from_slice(b),
            (FieldData::I32(a), FieldData::I32(b)) => a.extend_from_slice(b),
            (FieldData::I64(a), FieldData::I64(b)) => a.extend_from_slice(b),
            (FieldData::U8(a), FieldData::U8(b)) => a.extend_from_slice(b),
            _ => return false,
        }
        true
    }

    /// Values widened to f64, for error measurements.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            FieldData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            FieldData::F64(v) => v.clone(),
            FieldData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            FieldData::I64(v) => v.iter().map(|&x| x as f64).collect(),
            FieldData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

impl From<Vec<f32>> for FieldData {
    fn from(v: Vec<f32>) -> Self {
        FieldData::F32(v)
    }
}

impl From<Vec<f64>> for FieldData {
    fn from(v: Vec<f64>) -> Self {
        FieldData::F64(v)
    }
}

impl From<Vec<i32>> for FieldData {
    fn from(v: Vec<i32>) -> Self {
        FieldData::I32(v)
    }
}

impl From<Vec<i64>> for FieldData {
    fn from(v: Vec<i64>) -> Self {
        FieldData::I64(v)
    }
}

impl From<Vec<u8>> for FieldData {
    fn from(v: Vec<u8>) -> Self {
        FieldData::U8(v)
    }
}

impl<'a> From<&'a [f32]> for FieldRef<'a> {
    fn from(v: &'a [f32]) -> Self {
        FieldRef::F32(v)
    }
}

impl<'a> From<&'a [f64]> for FieldRef<'a> {
    fn from(v: &'a [f64]) -> Self {
        FieldRef::F64(v)
    }
}

impl<'a> From<&'a [i32]> for FieldRef<'a> {
    fn from(v: &'a [i32]) -> Self {
        FieldRef::I32(v)
    }
}

impl<'a> From<&'a [i64]> for FieldRef<'a> {
    fn from(v: &'a [i64]) -> Self {
        FieldRef::I64(v)
    }
}

impl<'a> From<&'a [u8]> for FieldRef<'a> {
    fn from(v: &'a [u8]) -> Self {
        FieldRef::U8(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_type_names() {
        assert_eq!("float".parse::<Dtype>().unwrap(), Dtype::F32);
        assert_eq!("double".parse::<Dtype>().unwrap(), Dtype::F64);
        assert_eq!("int64_t".parse::<Dtype>().unwrap(), Dtype::I64);
        assert!("complex".parse::<Dtype>().is_err());
    }

    #[test]
    fn codes_round_trip() {
        for code in 1..=5 {
            assert_eq!(Dtype::from_code(code).unwrap().code(), code);
        }
        assert!(Dtype::from_code(0).is_none());
        assert!(Dtype::from_code(6).is_none());
    }

    #[test]
    fn bytes_round_trip() {
        let data = FieldData::I64(vec![-1, 0, i64::MAX]);
        let bytes = data.as_ref().to_le_bytes();
        assert_eq!(bytes.len(), 24);
        assert_eq!(FieldData::from_le_bytes(Dtype::I64, &bytes).unwrap(), data);
        assert!(FieldData::from_le_bytes(Dtype::I64, &bytes[..7]).is_none());
    }

    #[test]
    fn extend_rejects_mixed_types() {
        let mut a = FieldData::F32(vec![1.0]);
        assert!(!a.extend_from(&FieldData::F64(vec![2.0])));
        assert!(a.extend_from(&FieldData::F32(vec![2.0])));
        assert_eq!(a, FieldData::F32(vec![1.0, 2.0]));
    }
}
