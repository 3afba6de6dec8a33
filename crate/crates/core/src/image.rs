//! Density projections of particle sets and the SSIM score between them.

use std::io::{self, Write};

use thiserror::Error;

use crate::synth::Axis;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {WINDOW}x{WINDOW} SSIM window")]
    TooSmall(usize, usize),
    #[error("coordinate arrays have different lengths")]
    RaggedInput,
    #[error("projection needs a positive grid and box side")]
    EmptyGrid,
}

/// Row-major grid of particle counts, `pixels` normalized to `[0, 1]` by the
/// largest count.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionImage {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u64>,
    pub pixels: Vec<f64>,
}

impl ProjectionImage {
    pub fn from_counts(width: usize, height: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), width * height);
        let max = counts.iter().copied().max().unwrap_or(0);
        let pixels = if max == 0 {
            vec![0.0; counts.len()]
        } else {
            counts.iter().map(|&c| c as f64 / max as f64).collect()
        };
        ProjectionImage {
            width,
            height,
            counts,
            pixels,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Binary 8-bit PGM (P5).
    pub fn write_pgm(&self, mut out: impl Write) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        out.write_all(&bytes)
    }
}

/// The two in-plane axes when looking down `axis`, as (columns, rows).
pub fn plane_axes(axis: Axis) -> (Axis, Axis) {
    match axis {
        Axis::X => (Axis::Y, Axis::Z),
        Axis::Y => (Axis::X, Axis::Z),
        Axis::Z => (Axis::X, Axis::Y),
    }
}

fn cell(v: f64, side: f64, n: usize) -> usize {
    // Values outside [0, side) land in the edge cells.
    let c = (v / side * n as f64).floor();
    if c <= 0.0 {
        0
    } else {
        (c as usize).min(n - 1)
    }
}

/// Orthographic count binning of `(u, v)` pairs over `[0, side)^2`. Pairs
/// with a non-finite coordinate are skipped.
pub fn project_plane(u: &[f64], v: &[f64], side: f64, width: usize, height: usize) -> Result<ProjectionImage, ImageError> {
    if u.len() != v.len() {
        return Err(ImageError::RaggedInput);
    }
    if width == 0 || height == 0 || !(side > 0.0) || !side.is_finite() {
        return Err(ImageError::EmptyGrid);
    }
    let mut counts = vec![0u64; width * height];
    for (&a, &b) in u.iter().zip(v) {
        if a.is_finite() && b.is_finite() {
            counts[cell(b, side, height) * width + cell(a, side, width)] += 1;
        }
    }
    Ok(ProjectionImage::from_counts(width, height, counts))
}

/// Projects along `axis`; see [`plane_axes`] for the image orientation.
pub fn project(particles: &crate::synth::Particles, axis: Axis, side: f64, width: usize, height: usize) -> Result<ProjectionImage, ImageError> {
    let (cols, rows) = plane_axes(axis);
    project_plane(particles.axis(cols), particles.axis(rows), side, width, height)
}

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn gaussian_kernel() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut k: [f64; WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - half;
        (-d * d / (2.0 * SIGMA * SIGMA)).exp()
    });
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Separable valid-mode filtering: output is `(w - 10) x (h - 10)`.
fn filter(img: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|j| k[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every window position that fits inside the images, with
/// dynamic range 1.
pub fn ssim_raw(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64, ImageError> {
    assert_eq!(a.len(), width * height);
    assert_eq!(b.len(), width * height);
    if width < WINDOW || height < WINDOW {
        return Err(ImageError::TooSmall(width, height));
    }
    let k = gaussian_kernel();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter(a, width, height, &k);
    let mu_b = filter(b, width, height, &k);
    let e_aa = filter(&aa, width, height, &k);
    let e_bb = filter(&bb, width, height, &k);
    let e_ab = filter(&ab, width, height, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
        let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
        total += num / den;
    }
    Ok((total / n as f64).min(1.0))
}

pub fn ssim(a: &ProjectionImage, b: &ProjectionImage) -> Result<f64, ImageError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(ImageError::SizeMismatch(a.width, a.height, b.width, b.height));
    }
    ssim_raw(&a.pixels, &b.pixels, a.width, a.height)
}
