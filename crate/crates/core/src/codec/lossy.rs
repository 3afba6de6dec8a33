//! Error-bounded 1-D predictive quantizer.
//!
//! Each element is predicted from the previously *reconstructed* element
//! (0 for the first, and after any non-finite literal), and the residual is
//! quantized with step `2ε`:
//!
//! ```text
//! q  = floor((v - p) / (2ε) + 0.5)
//! v' = p + 2ε·q
//! ```
//!
//! All arithmetic is done in f64; for f32 data `v'` is rounded to f32 before
//! it becomes the next prediction. The encoder replays the decoder's
//! arithmetic and falls back to a verbatim literal whenever `|q| >= 2^30`,
//! the input is not finite, or the rounded reconstruction would miss the
//! bound, so `|v' - v| <= ε` holds for every element by construction.
//!
//! Encoded stream, before the lossless stage:
//!
//! * escape bitmap, `ceil(n / 8)` bytes, bit `i % 8` of byte `i / 8` set when
//!   element `i` is a literal;
//! * one little-endian `i32` code per non-literal element, in order;
//! * the literal elements' native little-endian bytes, in order.

use super::CodecError;

pub const MAX_CODE: f64 = (1u32 << 30) as f64;

/// Float element types the quantizer accepts.
pub trait LossyFloat: Copy {
    const SIZE: usize;
    fn widen(self) -> f64;
    fn narrow(v: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl LossyFloat for f32 {
    const SIZE: usize = 4;
    fn widen(self) -> f64 {
        self as f64
    }
    fn narrow(v: f64) -> Self {
        v as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
}

impl LossyFloat for f64 {
    const SIZE: usize = 8;
    fn widen(self) -> f64 {
        self
    }
    fn narrow(v: f64) -> Self {
        v
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct TokenStream {
    pub bitmap: Vec<u8>,
    /// Little-endian i32 codes.
    pub codes: Vec<u8>,
    /// Little-endian literal elements.
    pub literals: Vec<u8>,
}

impl TokenStream {
    pub fn literal_count(&self, width: usize) -> usize {
        self.literals.len() / width
    }
}

fn next_prediction(reconstructed: f64) -> f64 {
    if reconstructed.is_finite() {
        reconstructed
    } else {
        0.0
    }
}

pub fn encode<T: LossyFloat>(values: &[T], eps: f64) -> TokenStream {
    let n = values.len();
    let mut stream = TokenStream {
        bitmap: vec![0u8; n.div_ceil(8)],
        codes: Vec::with_capacity(n * 4),
        literals: Vec::new(),
    };
    let step = 2.0 * eps;
    let quantize = eps > 0.0 && eps.is_finite();
    let mut pred = 0.0f64;
    for (i, &v) in values.iter().enumerate() {
        let x = v.widen();
        if quantize && x.is_finite() {
            let q = ((x - pred) / step + 0.5).floor();
            if q.abs() < MAX_CODE {
                let recon = T::narrow(pred + step * q).widen();
                if (recon - x).abs() <= eps {
                    stream.codes.extend_from_slice(&(q as i32).to_le_bytes());
                    pred = recon;
                    continue;
                }
            }
        }
        stream.bitmap[i / 8] |= 1 << (i % 8);
        v.write_le(&mut stream.literals);
        pred = next_prediction(x);
    }
    stream
}

pub fn decode<T: LossyFloat>(stream: &TokenStream, n: usize, eps: f64) -> Result<Vec<T>, CodecError> {
    if stream.bitmap.len() != n.div_ceil(8) {
        return Err(CodecError::Corrupt("escape bitmap has the wrong length".into()));
    }
    let step = 2.0 * eps;
    let mut codes = stream.codes.chunks_exact(4);
    let mut literals = stream.literals.chunks_exact(T::SIZE);
    let mut out = Vec::with_capacity(n);
    let mut pred = 0.0f64;
    for i in 0..n {
        let value = if stream.bitmap[i / 8] & (1 << (i % 8)) != 0 {
            let lit = literals
                .next()
                .ok_or_else(|| CodecError::Corrupt("fewer literals than escape bits".into()))?;
            let v = T::read_le(lit);
            pred = next_prediction(v.widen());
            v
        } else {
            let code = codes
                .next()
                .ok_or_else(|| CodecError::Corrupt("fewer codes than tokens".into()))?;
            let q = i32::from_le_bytes(code.try_into().unwrap());
            let v = T::narrow(pred + step * q as f64);
            pred = v.widen();
            v
        };
        out.push(value);
    }
    if codes.next().is_some() || !codes.remainder().is_empty() {
        return Err(CodecError::Corrupt("unused quantization codes".into()));
    }
    if literals.next().is_some() || !literals.remainder().is_empty() {
        return Err(CodecError::Corrupt("unused literal bytes".into()));
    }
    Ok(out)
}
