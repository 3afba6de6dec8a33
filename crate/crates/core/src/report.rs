//! Measurements behind the `bench-*` and `project-ssim` subcommands and the
//! JSON reports they emit.
//!
//! Throughputs use MB = 10^6 bytes and are always `bytes / seconds` over the
//! raw fields stored next to them, so a reader can recompute every one.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, CompressionSpec};
use crate::dtype::{FieldData, FieldRef};
use crate::image::{self, ImageError};
use crate::net::{ClientError, Endpoint, StoreClient};
use crate::synth::{self, Axis, Particles, SyntheticCorpusSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("GET of {key} returned {detail}")]
    Mismatch { key: String, detail: String },
    #[error("{variable}: {source}")]
    Codec { variable: String, source: CodecError },
    #[error("no corpus variable named {0:?} (expected x, y, z or id)")]
    UnknownVariable(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

/// `bytes / seconds` in MB/s; `None` when no time was measured.
pub fn throughput_mb_s(bytes: u64, seconds: f64) -> Option<f64> {
    (seconds > 0.0).then(|| bytes as f64 / 1e6 / seconds)
}

/// Median of a non-empty sample; the mean of the middle pair for even sizes.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty());
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let mid = s.len() / 2;
    if s.len() % 2 == 1 {
        s[mid]
    } else {
        (s[mid - 1] + s[mid]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpTiming {
    pub seconds: Vec<f64>,
    pub median_seconds: f64,
    pub throughput_mb_s: Option<f64>,
}

impl OpTiming {
    fn new(bytes: u64, seconds: Vec<f64>) -> Self {
        let median_seconds = median(&seconds);
        OpTiming {
            throughput_mb_s: throughput_mb_s(bytes, median_seconds),
            median_seconds,
            seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PutGetEntry {
    pub bytes: u64,
    pub put: OpTiming,
    pub get: OpTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PutGetReport {
    pub endpoints: Vec<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub sizes: Vec<PutGetEntry>,
}

impl PutGetReport {
    /// `median(2s) / median(s)` for each adjacent pair whose sizes double,
    /// as `(smaller size, put ratio, get ratio)`.
    pub fn doubling_ratios(&self) -> Vec<(u64, f64, f64)> {
        self.sizes
            .windows(2)
            .filter(|w| w[0].bytes > 0 && w[1].bytes == 2 * w[0].bytes)
            .map(|w| {
                (
                    w[0].bytes,
                    w[1].put.median_seconds / w[0].put.median_seconds,
                    w[1].get.median_seconds / w[0].get.median_seconds,
                )
            })
            .collect()
    }
}

/// Times PUT then GET of a random payload for every size, `repetitions`
/// rounds, and checks every GET against the payload. Each round visits all
/// sizes in turn, rotating through `endpoints`, so slow periods on the host
/// hit every size alike; one untimed round comes first. Keys are deleted at
/// the end.
pub fn bench_putget(endpoints: &[Endpoint], sizes: &[u64], repetitions: usize, seed: u64) -> Result<PutGetReport> {
    if endpoints.is_empty() || repetitions == 0 {
        return Err(BenchError::InvalidArgument("need at least one endpoint and one repetition".into()));
    }
    let mut conns = endpoints.iter().map(StoreClient::connect).collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut payloads = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        let len = usize::try_from(size).map_err(|_| BenchError::InvalidArgument(format!("size {size} too large")))?;
        let mut buf = vec![0u8; len];
        rng.fill_bytes(&mut buf);
        payloads.push((format!("bench/putget/{i}/{size}"), bytes::Bytes::from(buf)));
    }
    let mut puts = vec![Vec::with_capacity(repetitions); sizes.len()];
    let mut gets = vec![Vec::with_capacity(repetitions); sizes.len()];
    for round in 0..=repetitions {
        let conn = &mut conns[round % endpoints.len()];
        for (i, (key, payload)) in payloads.iter().enumerate() {
            let t = Instant::now();
            conn.put(key.clone(), payload.clone())?;
            let put = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let got = conn.get(key.clone())?;
            let get = t.elapsed().as_secs_f64();
            match got {
                Some(v) if v == *payload => {}
                Some(v) => {
                    return Err(BenchError::Mismatch {
                        key: key.clone(),
                        detail: format!("{} bytes that differ from the payload", v.len()),
                    })
                }
                None => {
                    return Err(BenchError::Mismatch {
                        key: key.clone(),
                        detail: "NOT_FOUND".into(),
                    })
                }
            }
            // round 0 warms up connections, server and allocator
            if round > 0 {
                puts[i].push(put);
                gets[i].push(get);
            }
        }
    }
    for conn in &mut conns {
        for (key, _) in &payloads {
            conn.delete(key.clone())?;
        }
    }
    let entries = sizes
        .iter()
        .zip(puts.into_iter().zip(gets))
        .map(|(&size, (put, get))| PutGetEntry {
            bytes: size,
            put: OpTiming::new(size, put),
            get: OpTiming::new(size, get),
        })
        .collect();
    Ok(PutGetReport {
        endpoints: endpoints.iter().map(Endpoint::to_string).collect(),
        repetitions,
        seed,
        sizes: entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecEntry {
    pub variable: String,
    pub dtype: String,
    pub compressor: String,
    pub mode: Option<String>,
    pub value: Option<f64>,
    /// Absolute bound enforced (0 for exact codecs).
    pub epsilon: f64,
    pub original_bytes: u64,
    pub stored_bytes: u64,
    pub ratio: f64,
    pub compress_seconds: f64,
    pub decompress_seconds: f64,
    /// Time to PUT the stored bytes; `None` without a server.
    pub put_seconds: Option<f64>,
    /// `original_bytes / compress_seconds`.
    pub codec_mb_s: Option<f64>,
    /// `original_bytes / decompress_seconds`.
    pub decompress_mb_s: Option<f64>,
    /// `original_bytes / (compress_seconds + put_seconds)`.
    pub end_to_end_mb_s: Option<f64>,
    pub max_abs_error: f64,
    pub bound_holds: bool,
    pub bit_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    pub corpus: SyntheticCorpusSpec,
    pub endpoint: Option<String>,
    pub variables: Vec<CodecEntry>,
}

impl CodecReport {
    pub fn entry(&self, variable: &str) -> Option<&CodecEntry> {
        self.variables.iter().find(|e| e.variable == variable)
    }
}

pub fn corpus_field<'a>(particles: &'a Particles, name: &str) -> Option<FieldRef<'a>> {
    match name {
        "x" => Some(particles.x.as_slice().into()),
        "y" => Some(particles.y.as_slice().into()),
        "z" => Some(particles.z.as_slice().into()),
        "id" => Some(particles.id.as_slice().into()),
        _ => None,
    }
}

/// Largest `|a - b|` over finite pairs. A pair where exactly one side is
/// finite, or where non-finite values differ, counts as infinite error.
pub fn max_abs_error(original: &FieldData, decoded: &FieldData) -> f64 {
    let (a, b) = (original.to_f64(), decoded.to_f64());
    assert_eq!(a.len(), b.len());
    a.iter().zip(&b).fold(0.0f64, |m, (&x, &y)| {
        let e = if x.is_finite() && y.is_finite() {
            (x - y).abs()
        } else if x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()) {
            0.0
        } else {
            f64::INFINITY
        };
        m.max(e)
    })
}

fn bit_identical(a: &FieldData, b: &FieldData) -> bool {
    a.dtype() == b.dtype() && a.as_ref().to_le_bytes() == b.as_ref().to_le_bytes()
}

/// Compresses, decompresses and optionally stores one field.
pub fn measure_codec(
    variable: &str,
    values: FieldRef<'_>,
    spec: &CompressionSpec,
    store: Option<&mut StoreClient>,
) -> Result<(CodecEntry, FieldData)> {
    let wrap = |source| BenchError::Codec {
        variable: variable.to_string(),
        source,
    };
    let t = Instant::now();
    let container = codec::compress(values, &spec.compression).map_err(wrap)?;
    let compress_seconds = t.elapsed().as_secs_f64();
    let bytes = container.to_bytes();
    let put_seconds = match store {
        Some(conn) => {
            let t = Instant::now();
            conn.put(format!("bench/codec/{variable}"), bytes.clone())?;
            Some(t.elapsed().as_secs_f64())
        }
        None => None,
    };
    let t = Instant::now();
    let (decoded, header) = codec::decompress(&bytes).map_err(wrap)?;
    let decompress_seconds = t.elapsed().as_secs_f64();

    let original = values.to_owned();
    let max_abs_error = max_abs_error(&original, &decoded);
    let original_bytes = header.original_size;
    let entry = CodecEntry {
        variable: variable.to_string(),
        dtype: values.dtype().name().into(),
        compressor: spec.compression.compressor_name().into(),
        mode: spec.compression.mode().map(|m| m.name().into()),
        value: match spec.compression {
            codec::Compression::Lossy { value, .. } => Some(value),
            _ => None,
        },
        epsilon: header.epsilon,
        original_bytes,
        stored_bytes: bytes.len() as u64,
        ratio: container.ratio(),
        compress_seconds,
        decompress_seconds,
        put_seconds,
        codec_mb_s: throughput_mb_s(original_bytes, compress_seconds),
        decompress_mb_s: throughput_mb_s(original_bytes, decompress_seconds),
        end_to_end_mb_s: put_seconds.and_then(|p| throughput_mb_s(original_bytes, compress_seconds + p)),
        max_abs_error,
        bound_holds: max_abs_error <= header.epsilon,
        bit_exact: bit_identical(&original, &decoded),
    };
    Ok((entry, decoded))
}

/// Runs [`measure_codec`] over the corpus variables named in `specs` and
/// returns the report plus the reconstructed particles (variables without a
/// spec are copied unchanged).
pub fn bench_codec(
    corpus: &SyntheticCorpusSpec,
    specs: &[CompressionSpec],
    endpoint: Option<&Endpoint>,
) -> Result<(CodecReport, Particles, Particles)> {
    let particles = synth::generate(corpus);
    let mut conn = endpoint.map(StoreClient::connect).transpose()?;
    let mut rebuilt = particles.clone();
    let mut variables = Vec::with_capacity(specs.len());
    for spec in specs {
        let values = corpus_field(&particles, &spec.name).ok_or_else(|| BenchError::UnknownVariable(spec.name.clone()))?;
        let (entry, decoded) = measure_codec(&spec.name, values, spec, conn.as_mut())?;
        match (spec.name.as_str(), decoded) {
            ("x", FieldData::F64(v)) => rebuilt.x = v,
            ("y", FieldData::F64(v)) => rebuilt.y = v,
            ("z", FieldData::F64(v)) => rebuilt.z = v,
            ("id", FieldData::I64(v)) => rebuilt.id = v,
            _ => unreachable!("codec preserves dtype"),
        }
        variables.push(entry);
    }
    if let Some(conn) = conn.as_mut() {
        for spec in specs {
            conn.delete(format!("bench/codec/{}", spec.name))?;
        }
    }
    let report = CodecReport {
        corpus: corpus.clone(),
        endpoint: endpoint.map(Endpoint::to_string),
        variables,
    };
    Ok((report, particles, rebuilt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimEntry {
    pub axis: Axis,
    pub ssim: f64,
    pub particles_original: u64,
    pub particles_reconstructed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub width: usize,
    pub height: usize,
    pub box_side: f64,
    pub views: Vec<SsimEntry>,
    /// Context value, not a gate.
    pub target: f64,
}

pub const SSIM_TARGET: f64 = 0.9;

impl FidelityReport {
    pub fn min_ssim(&self) -> f64 {
        self.views.iter().map(|v| v.ssim).fold(f64::INFINITY, f64::min)
    }
}

/// SSIM between density projections of `original` and `reconstructed`
/// down each axis.
pub fn fidelity(original: &Particles, reconstructed: &Particles, box_side: f64, width: usize, height: usize) -> Result<(FidelityReport, Vec<(image::ProjectionImage, image::ProjectionImage)>)> {
    let mut views = Vec::new();
    let mut images = Vec::new();
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        let a = image::project(original, axis, box_side, width, height)?;
        let b = image::project(reconstructed, axis, box_side, width, height)?;
        views.push(SsimEntry {
            axis,
            ssim: image::ssim(&a, &b)?,
            particles_original: a.total(),
            particles_reconstructed: b.total(),
        });
        images.push((a, b));
    }
    let report = FidelityReport {
        width,
        height,
        box_side,
        views,
        target: SSIM_TARGET,
    };
    Ok((report, images))
}

/// Stable JSON envelope written by every benchmark subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "operation", rename_all = "kebab-case")]
pub enum BenchReport {
    PutGet(PutGetReport),
    Codec(CodecReport),
    ProjectSsim(FidelityReport),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::RunningServer;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn throughput_is_bytes_over_time() {
        assert_eq!(throughput_mb_s(2_000_000, 0.5), Some(4.0));
        assert_eq!(throughput_mb_s(0, 0.5), Some(0.0));
        assert_eq!(throughput_mb_s(10, 0.0), None);
    }

    #[test]
    fn max_error_handles_non_finite() {
        let a: FieldData = vec![1.0f64, f64::NAN, f64::INFINITY].into();
        let same: FieldData = vec![1.25f64, f64::NAN, f64::INFINITY].into();
        assert_eq!(max_abs_error(&a, &same), 0.25);
        let diff: FieldData = vec![1.0f64, 0.0, f64::INFINITY].into();
        assert_eq!(max_abs_error(&a, &diff), f64::INFINITY);
    }

    #[test]
    fn putget_small_sizes_including_zero() {
        let server = RunningServer::start_local().unwrap();
        let ep: Endpoint = server.addr.into();
        let report = bench_putget(&[ep], &[0, 1024, 2048], 3, 1).unwrap();
        assert_eq!(report.sizes.len(), 3);
        assert_eq!(report.sizes[0].bytes, 0);
        assert_eq!(report.sizes[0].put.seconds.len(), 3);
        for e in &report.sizes {
            let expect = throughput_mb_s(e.bytes, e.put.median_seconds);
            assert_eq!(e.put.throughput_mb_s, expect);
        }
        assert_eq!(report.doubling_ratios().len(), 1);
        assert_eq!(server.store.stats().0, 0);
    }

    #[test]
    fn codec_report_is_consistent() {
        let server = RunningServer::start_local().unwrap();
        let ep: Endpoint = server.addr.into();
        let corpus = SyntheticCorpusSpec {
            n_halos: 8,
            ..SyntheticCorpusSpec::with_particles(50_000, 2)
        };
        let specs = vec![CompressionSpec::abs("x", 0.003), CompressionSpec::lossless("id")];
        let (report, orig, rebuilt) = bench_codec(&corpus, &specs, Some(&ep)).unwrap();
        let x = report.entry("x").unwrap();
        assert!(x.bound_holds && x.max_abs_error <= 0.003);
        assert!(x.ratio > 1.0);
        assert_eq!(x.codec_mb_s, throughput_mb_s(x.original_bytes, x.compress_seconds));
        let id = report.entry("id").unwrap();
        assert!(id.bit_exact && id.ratio > 1.0);
        assert_eq!(orig.id, rebuilt.id);
        assert_eq!(orig.y, rebuilt.y);
        assert_ne!(orig.x, rebuilt.x);

        let json = serde_json::to_value(BenchReport::Codec(report.clone())).unwrap();
        assert_eq!(json["operation"], "codec");
        assert_eq!(serde_json::from_value::<BenchReport>(json).unwrap(), BenchReport::Codec(report));
    }

    #[test]
    fn zero_bound_is_rejected() {
        let corpus = SyntheticCorpusSpec::with_particles(100, 0);
        let err = bench_codec(&corpus, &[CompressionSpec::abs("x", 0.0)], None).unwrap_err();
        assert!(err.to_string().contains("error bound"), "{err}");
    }

    #[test]
    fn unchanged_particles_give_perfect_fidelity() {
        let p = synth::generate(&SyntheticCorpusSpec::with_particles(10_000, 4));
        let (report, _) = fidelity(&p, &p, 256.0, 64, 64).unwrap();
        assert_eq!(report.min_ssim(), 1.0);
        assert!(report.views.iter().all(|v| v.particles_original == 10_000));
    }
}
