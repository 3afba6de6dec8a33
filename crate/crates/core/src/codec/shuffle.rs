//! Byte transposition filter.
//!
//! For `n` elements of `w` bytes each, output byte `i * n + j` is byte `i` of
//! element `j`: all first bytes, then all second bytes, and so on. Slowly
//! varying numeric data turns into long runs in the high-order planes.

pub fn shuffle(src: &[u8], width: usize) -> Vec<u8> {
    assert!(width > 0 && src.len() % width == 0, "length must be a multiple of the element width");
    if width == 1 {
        return src.to_vec();
    }
    let n = src.len() / width;
    let mut out = vec![0u8; src.len()];
    for (j, elem) in src.chunks_exact(width).enumerate() {
        for (i, &byte) in elem.iter().enumerate() {
            out[i * n + j] = byte;
        }
    }
    out
}

pub fn unshuffle(src: &[u8], width: usize) -> Vec<u8> {
    assert!(width > 0 && src.len() % width == 0, "length must be a multiple of the element width");
    if width == 1 {
        return src.to_vec();
    }
    let n = src.len() / width;
    let mut out = vec![0u8; src.len()];
    for (i, plane) in src.chunks_exact(n.max(1)).enumerate().take(width) {
        for (j, &byte) in plane.iter().enumerate() {
            out[j * width + i] = byte;
        }
    }
    out
}
