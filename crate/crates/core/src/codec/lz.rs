//! Byte-oriented LZ77 stage in the spirit of FastLZ.
//!
//! The stream is a sequence of tokens, each introduced by a control byte:
//!
//! * `0b0LLL_LLLL`: literal run. `L < 127` means `L + 1` literal bytes follow;
//!   `L == 127` means a LEB128 varint `x` follows and the run is `128 + x`
//!   bytes long.
//! * `0b1LLL_LLLL`: back-reference. The match length is `L + 4`, or
//!   `131 + x` with a trailing varint when `L == 127`. A little-endian `u16`
//!   distance (1..=65535) follows. Matches may overlap their own output,
//!   which is how runs of a repeated byte are coded.
//!
//! The decoder needs nothing but the token stream; the caller checks the
//! decoded length against what it expected.

use super::CodecError;

const MIN_MATCH: usize = 4;
const MAX_DISTANCE: usize = u16::MAX as usize;
const HASH_BITS: u32 = 16;
const SHORT_LIMIT: usize = 127;

fn hash4(bytes: &[u8]) -> usize {
    let v = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    (v.wrapping_mul(2_654_435_761) >> (32 - HASH_BITS)) as usize
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(src: &[u8], pos: &mut usize) -> Result<u64, CodecError> {
    let mut value = 0u64;
    for shift in (0..64).step_by(7) {
        let byte = *src.get(*pos).ok_or(CodecError::Truncated)?;
        *pos += 1;
        value |= u64::from(byte & 0x7F) << shift;
        if byte & 0x80 == 0 {
            return Ok(value);
        }
    }
    Err(CodecError::Corrupt("varint overflow in lossless stream".into()))
}

fn put_length(out: &mut Vec<u8>, tag: u8, len: usize, bias: usize) {
    let code = len - bias;
    if code < SHORT_LIMIT {
        out.push(tag | code as u8);
    } else {
        out.push(tag | SHORT_LIMIT as u8);
        put_varint(out, (code - SHORT_LIMIT) as u64);
    }
}

fn emit_literals(out: &mut Vec<u8>, lits: &[u8]) {
    if !lits.is_empty() {
        put_length(out, 0x00, lits.len(), 1);
        out.extend_from_slice(lits);
    }
}

pub fn compress(src: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(src.len() / 2 + 16);
    if src.len() < MIN_MATCH {
        emit_literals(&mut out, src);
        return out;
    }
    // Positions are stored +1 so 0 means empty.
    let mut table = vec![0u32; 1 << HASH_BITS];
    let last_hashable = src.len() - MIN_MATCH;
    let mut lit_start = 0;
    let mut i = 0;
    while i <= last_hashable {
        let h = hash4(&src[i..]);
        let candidate = table[h] as usize;
        table[h] = (i + 1) as u32;
        if candidate != 0 {
            let cand = candidate - 1;
            let distance = i - cand;
            if distance <= MAX_DISTANCE && src[cand..cand + MIN_MATCH] == src[i..i + MIN_MATCH] {
                let mut len = MIN_MATCH;
                while i + len < src.len() && src[cand + len] == src[i + len] {
                    len += 1;
                }
                emit_literals(&mut out, &src[lit_start..i]);
                put_length(&mut out, 0x80, len, MIN_MATCH);
                out.extend_from_slice(&(distance as u16).to_le_bytes());
                let end = i + len;
                // Index a bounded sample of the matched region; long runs
                // would otherwise cost a hash per byte for no benefit.
                let mut j = i + 1;
                while j < end.min(last_hashable + 1) && j < i + 64 {
                    table[hash4(&src[j..])] = (j + 1) as u32;
                    j += 1;
                }
                let tail = end - 1;
                if tail >= j && tail <= last_hashable {
                    table[hash4(&src[tail..])] = end as u32;
                }
                i = end;
                lit_start = end;
                continue;
            }
        }
        i += 1;
    }
    emit_literals(&mut out, &src[lit_start..]);
    out
}

/// Decodes a token stream, refusing to grow past `max_len` bytes.
pub fn decompress(src: &[u8], max_len: usize) -> Result<Vec<u8>, CodecError> {
    let mut out: Vec<u8> = Vec::with_capacity(max_len.min(1 << 26));
    let mut pos = 0;
    let too_long = || CodecError::Corrupt("lossless stream decodes past its declared size".into());
    while pos < src.len() {
        let control = src[pos];
        pos += 1;
        let code = (control & 0x7F) as usize;
        let is_match = control & 0x80 != 0;
        let bias = if is_match { MIN_MATCH } else { 1 };
        let len = if code < SHORT_LIMIT {
            code + bias
        } else {
            let extra = get_varint(src, &mut pos)?;
            usize::try_from(extra)
                .ok()
                .and_then(|e| e.checked_add(SHORT_LIMIT + bias))
                .ok_or_else(too_long)?
        };
        if out.len().checked_add(len).is_none_or(|total| total > max_len) {
            return Err(too_long());
        }
        if is_match {
            let d = src.get(pos..pos + 2).ok_or(CodecError::Truncated)?;
            pos += 2;
            let distance = u16::from_le_bytes([d[0], d[1]]) as usize;
            if distance == 0 || distance > out.len() {
                return Err(CodecError::Corrupt(format!(
                    "back-reference distance {distance} outside {} decoded bytes",
                    out.len()
                )));
            }
            let start = out.len() - distance;
            if distance >= len {
                out.extend_from_within(start..start + len);
            } else {
                for k in 0..len {
                    let byte = out[start + k];
                    out.push(byte);
                }
            }
        } else {
            let lits = src.get(pos..pos + len).ok_or(CodecError::Truncated)?;
            out.extend_from_slice(lits);
            pos += len;
        }
    }
    Ok(out)
}
