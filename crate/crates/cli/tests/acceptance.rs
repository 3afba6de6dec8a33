//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as part of `cargo test`; run it alone with
//! `cargo test -p stagex-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use stagex::analysis::Session;
use stagex::codec::{self, BoundMode, Compression, CompressionSpec};
use stagex::dtype::{FieldData, FieldRef};
use stagex::image;
use stagex::net::{Endpoint, StoreClient};
use stagex::report::{self, FidelityReport};
use stagex::store::RunningServer;
use stagex::synth::{self, Particles, SyntheticCorpusSpec};
use stagex::wire::{self, Opcode, Request, Response, Status};

mod common;
use common::{json_of, stagex, write_sim_config, ServerProcess};

struct Outcome {
    pass: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { pass: true, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { pass: false, detail: detail.into() }
}

/// Results shared between criteria so expensive runs happen once.
#[derive(Default)]
struct Shared {
    putget: Option<Value>,
    default_codec: Option<(report::CodecReport, Particles, Particles)>,
}

impl Shared {
    fn default_codec(&mut self) -> &(report::CodecReport, Particles, Particles) {
        self.default_codec.get_or_insert_with(|| {
            let specs = [
                CompressionSpec::abs("x", 0.003),
                CompressionSpec::abs("y", 0.003),
                CompressionSpec::abs("z", 0.003),
                CompressionSpec::lossless("id"),
            ];
            report::bench_codec(&SyntheticCorpusSpec::default(), &specs, None).expect("codec bench on default corpus")
        })
    }
}

// ---------------------------------------------------------------- error bound

/// Largest absolute error, computed straight from the element values. A NaN
/// must come back as NaN and an infinity as the same infinity.
fn oracle_max_error(original: &[f64], decoded: &[f64]) -> f64 {
    assert_eq!(original.len(), decoded.len());
    let mut worst = 0.0f64;
    for (&a, &b) in original.iter().zip(decoded) {
        let e = if a.is_nan() {
            if b.is_nan() { 0.0 } else { f64::INFINITY }
        } else if a.is_infinite() {
            if a == b { 0.0 } else { f64::INFINITY }
        } else if b.is_finite() {
            (a - b).abs()
        } else {
            f64::INFINITY
        };
        worst = worst.max(e);
    }
    worst
}

const KINDS: [&str; 5] = ["clustered", "uniform", "constant", "ramp", "non-finite"];

fn corpus(seed: u64) -> (&'static str, Vec<f64>) {
    let kind = KINDS[(seed % 5) as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1_000..60_000);
    let values = match kind {
        "clustered" => {
            let spec = SyntheticCorpusSpec {
                n_halos: rng.random_range(1..16),
                ..SyntheticCorpusSpec::with_particles(n, seed)
            };
            synth::generate(&spec).x
        }
        "uniform" => {
            let scale = 10f64.powi(rng.random_range(-2..5));
            (0..n).map(|_| rng.random_range(-scale..scale)).collect()
        }
        "constant" => vec![rng.random_range(-1e3..1e3); n],
        "ramp" => {
            let (a, b) = (rng.random_range(-100.0..100.0), rng.random_range(-0.1..0.1));
            (0..n).map(|i| a + b * i as f64).collect()
        }
        _ => {
            let mut v = synth::generate(&SyntheticCorpusSpec::with_particles(n, seed)).y;
            for _ in 0..n / 50 {
                let i = rng.random_range(0..n);
                v[i] = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY][rng.random_range(0..3)];
            }
            v
        }
    };
    (kind, values)
}

fn error_bound(_: &mut Shared) -> Outcome {
    let epsilons = [0.0003, 0.003, 0.03];
    let corpora = 120u64;
    let mut checked = 0;
    let mut failures = Vec::new();
    for seed in 0..corpora {
        let (kind, values) = corpus(seed);
        let as_f32 = seed % 2 == 1;
        let narrowed: Vec<f32> = values.iter().map(|&v| v as f32).collect();
        let original: Vec<f64> = if as_f32 { narrowed.iter().map(|&v| v as f64).collect() } else { values.clone() };
        let field = if as_f32 { FieldRef::F32(&narrowed) } else { FieldRef::F64(&values) };
        for eps in epsilons {
            let lossy = Compression::Lossy { mode: BoundMode::Abs, value: eps };
            let decoded = codec::compress(field, &lossy)
                .map(|c| c.to_bytes())
                .and_then(|bytes| codec::decompress(&bytes));
            let (decoded, _) = match decoded {
                Ok(d) => d,
                Err(e) => {
                    failures.push(format!("seed {seed} ({kind}) eps {eps}: {e}"));
                    continue;
                }
            };
            let decoded: Vec<f64> = match decoded {
                FieldData::F64(v) if !as_f32 => v,
                FieldData::F32(v) if as_f32 => v.iter().map(|&x| x as f64).collect(),
                other => {
                    failures.push(format!("seed {seed}: dtype changed to {}", other.dtype().name()));
                    continue;
                }
            };
            let err = oracle_max_error(&original, &decoded);
            if !(err <= eps) {
                failures.push(format!("seed {seed} ({kind}, {}) eps {eps}: max error {err:e}", if as_f32 { "f32" } else { "f64" }));
            }
            checked += 1;
        }
    }
    if failures.is_empty() {
        pass(format!("{corpora} corpora x {} bounds, {checked} round trips, all within bound", epsilons.len()))
    } else {
        fail(format!("{} violations, first: {}", failures.len(), failures[0]))
    }
}

// ---------------------------------------------------------- ratio and ids

fn ratio(shared: &mut Shared) -> Outcome {
    let (report, original, rebuilt) = shared.default_codec();
    let mut parts = Vec::new();
    let mut ok = true;
    for var in ["x", "y", "z"] {
        let e = report.entry(var).unwrap();
        let r = e.original_bytes as f64 / e.stored_bytes as f64;
        ok &= r >= 2.0 && e.original_bytes == 8 * original.len() as u64;
        parts.push(format!("{var} {r:.2}"));
    }
    let ids_exact = original.id == rebuilt.id;
    ok &= ids_exact;
    let id_ratio = report.entry("id").unwrap().ratio;
    let detail = format!(
        "ABS 0.003 on {} particles: {} (gate 2.0, reference 4x {}); id lossless ratio {id_ratio:.1}, bit-exact {ids_exact}",
        original.len(),
        parts.join(", "),
        if report.variables[..3].iter().all(|e| e.ratio >= 4.0) { "met" } else { "not met" },
    );
    if ok { pass(detail) } else { fail(detail) }
}

// ------------------------------------------------------------- put/get scaling

fn putget(shared: &mut Shared) -> Outcome {
    let server = ServerProcess::start();
    let t = Instant::now();
    let out = stagex()
        .args(["bench-putget", "--repetitions", "7", "--endpoint", &server.endpoint.to_string()])
        .output()
        .unwrap();
    let elapsed = t.elapsed();
    if !out.status.success() {
        return fail(format!("bench-putget failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let report = json_of(&out);
    let entries = report["sizes"].as_array().unwrap();
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for w in entries.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        assert_eq!(b["bytes"].as_u64().unwrap(), 2 * a["bytes"].as_u64().unwrap());
        let put = b["put"]["median_seconds"].as_f64().unwrap() / a["put"]["median_seconds"].as_f64().unwrap();
        let get = b["get"]["median_seconds"].as_f64().unwrap() / a["get"]["median_seconds"].as_f64().unwrap();
        worst = worst.max(put).max(get);
        lines.push(format!("{}M {put:.2}/{get:.2}", a["bytes"].as_u64().unwrap() >> 20));
    }
    let first = entries.first().unwrap()["bytes"].as_u64().unwrap();
    let last = entries.last().unwrap()["bytes"].as_u64().unwrap();
    shared.putget = Some(report);
    let ok = first == 1 << 20 && last == 256 << 20 && worst <= 2.5 && elapsed < Duration::from_secs(300);
    let detail = format!(
        "1..256 MiB, worst doubling ratio {worst:.2} (gate 2.5), {:.1} s; put/get ratios {}",
        elapsed.as_secs_f64(),
        lines.join(", ")
    );
    if ok { pass(detail) } else { fail(detail) }
}

// ------------------------------------------------------ throughput reporting

fn close(reported: &Value, expected: Option<f64>) -> bool {
    match (reported.as_f64(), expected) {
        (Some(r), Some(e)) => (r - e).abs() <= 1e-9 * e.abs().max(1.0),
        (None, None) => reported.is_null(),
        _ => false,
    }
}

fn mb_s(bytes: f64, secs: f64) -> Option<f64> {
    (secs > 0.0).then(|| bytes / 1e6 / secs)
}

fn throughput(shared: &mut Shared) -> Outcome {
    let server = ServerProcess::start();
    let out = stagex()
        .args(["bench-codec", "--endpoint", &server.endpoint.to_string()])
        .output()
        .unwrap();
    if !out.status.success() {
        return fail(format!("bench-codec failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let report = json_of(&out);
    let mut checked = 0;
    let mut bad = Vec::new();
    for e in report["variables"].as_array().unwrap() {
        let bytes = e["original_bytes"].as_f64().unwrap();
        let c = e["compress_seconds"].as_f64().unwrap();
        let d = e["decompress_seconds"].as_f64().unwrap();
        let Some(p) = e["put_seconds"].as_f64() else {
            bad.push(format!("{}: no put time", e["variable"]));
            continue;
        };
        let ratio = bytes / e["stored_bytes"].as_f64().unwrap();
        for (field, expected) in [
            ("codec_mb_s", mb_s(bytes, c)),
            ("decompress_mb_s", mb_s(bytes, d)),
            ("end_to_end_mb_s", mb_s(bytes, c + p)),
            ("ratio", Some(ratio)),
        ] {
            checked += 1;
            if !close(&e[field], expected) {
                bad.push(format!("{}.{field} = {} expected {expected:?}", e["variable"], e[field]));
            }
        }
    }
    let putget = shared.putget.as_ref();
    for entry in putget.and_then(|r| r["sizes"].as_array()).into_iter().flatten() {
        let bytes = entry["bytes"].as_f64().unwrap();
        for op in ["put", "get"] {
            let mut samples: Vec<f64> = entry[op]["seconds"].as_array().unwrap().iter().map(|s| s.as_f64().unwrap()).collect();
            samples.sort_by(f64::total_cmp);
            let n = samples.len();
            let median = if n % 2 == 1 { samples[n / 2] } else { (samples[n / 2 - 1] + samples[n / 2]) / 2.0 };
            checked += 2;
            if !close(&entry[op]["median_seconds"], Some(median)) || !close(&entry[op]["throughput_mb_s"], mb_s(bytes, median)) {
                bad.push(format!("{op} at {bytes} B"));
            }
        }
    }
    let x = &report["variables"][0];
    let detail = format!(
        "{checked} reported figures recomputed from bytes and times{}; x codec {:.0} MB/s, end-to-end {:.0} MB/s",
        if putget.is_some() { " (codec and put/get reports)" } else { " (put/get report unavailable)" },
        x["codec_mb_s"].as_f64().unwrap_or(f64::NAN),
        x["end_to_end_mb_s"].as_f64().unwrap_or(f64::NAN),
    );
    if bad.is_empty() && putget.is_some() { pass(detail) } else { fail(format!("{detail}; mismatches: {bad:?}")) }
}

// --------------------------------------------------------------- mini-sim

fn simulate_ok(out: &std::process::Output, steps: u64, ranks: u64) -> Result<Value, String> {
    if !out.status.success() {
        return Err(format!("simulate exited {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    let report = json_of(out);
    let v = &report["verifier"];
    let order: Vec<u64> = v["ready_order"].as_array().unwrap().iter().map(|s| s.as_u64().unwrap()).collect();
    let expected: Vec<u64> = (0..steps).collect();
    if report["ok"] != true || order != expected {
        return Err(format!("ok {} ready order {order:?}", report["ok"]));
    }
    if v["chunk_groups_verified"].as_u64() != Some(steps * ranks) || !v["violations"].as_array().unwrap().is_empty() {
        return Err(format!("verifier: {v}"));
    }
    Ok(report)
}

fn minisim(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let s0 = ServerProcess::start();
    let s1 = ServerProcess::start();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_sim_config(dir.path(), "acc-main", &[&s0.endpoint, &s1.endpoint]);
    let out = stagex()
        .args(["simulate", "--ranks", "4", "--steps", "3", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    if let Err(e) = simulate_ok(&out, 3, 4) {
        return fail(format!("single simulation: {e}"));
    }
    let single = t.elapsed().as_secs_f64();

    // A runs on servers 0 and 1; server 2 only exists once A is under way,
    // then B runs on servers 0 and 2.
    let cfg_a = write_sim_config(dir.path(), "acc-a", &[&s0.endpoint, &s1.endpoint]);
    let sim_a = stagex()
        .args(["simulate", "--ranks", "4", "--steps", "3", "--particles", "50000", "--step-delay-ms", "300", "--config"])
        .arg(&cfg_a)
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let wait_start = Instant::now();
    while Session::attach(&s0.endpoint, "acc-a").is_err() {
        if wait_start.elapsed() > Duration::from_secs(30) {
            return fail("simulation A never registered");
        }
        thread::sleep(Duration::from_millis(10));
    }
    let s2 = ServerProcess::start();
    let cfg_b = write_sim_config(dir.path(), "acc-b", &[&s0.endpoint, &s2.endpoint]);
    let out_b = stagex()
        .args(["simulate", "--ranks", "4", "--steps", "3", "--particles", "50000", "--config"])
        .arg(&cfg_b)
        .output()
        .unwrap();
    let out_a = sim_a.wait_with_output().unwrap();
    for (name, out) in [("A", &out_a), ("B", &out_b)] {
        if let Err(e) = simulate_ok(out, 3, 4) {
            return fail(format!("concurrent simulation {name}: {e}"));
        }
    }
    let mut c1 = StoreClient::connect(&s1.endpoint).unwrap();
    let mut c2 = StoreClient::connect(&s2.endpoint).unwrap();
    let isolated = c1.list("acc-b/").unwrap().is_empty()
        && c2.list("acc-a/").unwrap().is_empty()
        && !c2.list("acc-b/").unwrap().is_empty();
    let elapsed = t.elapsed();
    let detail = format!(
        "4 ranks x 3 steps x 2 servers verified in order ({single:.1} s); concurrent sims A and B (B on a server added mid-run) verified, shards isolated {isolated}; total {:.1} s",
        elapsed.as_secs_f64()
    );
    if isolated && elapsed < Duration::from_secs(120) { pass(detail) } else { fail(detail) }
}

// ------------------------------------------------------------- wire/store

fn random_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| rng.random()).collect()
}

fn random_request(rng: &mut ChaCha8Rng) -> Request {
    let op = Opcode::ALL[rng.random_range(0..Opcode::ALL.len())];
    let mut key = random_bytes(rng, 300);
    if op.requires_key() && key.is_empty() {
        key.push(b'k');
    }
    let value = if op == Opcode::Put { random_bytes(rng, 5000) } else { Vec::new() };
    Request { opcode: op, key: key.into(), value: value.into() }
}

fn wire_roundtrip(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let statuses = [Status::Ok, Status::NotFound, Status::Malformed, Status::ServerError];
    let mut frames = 0;
    for i in 0..3000 {
        let req = random_request(rng);
        let bytes = wire::encode_request(&req).map_err(|e| e.to_string())?;
        if bytes.len() != req.encoded_len() || wire::decode_request(&bytes).map_err(|e| e.to_string())? != req {
            return Err(format!("request {req:?} did not round-trip"));
        }
        let resp = Response::with_value(statuses[i % 4], random_bytes(rng, 5000));
        let rbytes = wire::encode_response(&resp).map_err(|e| e.to_string())?;
        if wire::decode_response(&rbytes).map_err(|e| e.to_string())? != resp {
            return Err("response did not round-trip".into());
        }
        if i % 10 == 0 {
            for cut in 0..bytes.len() {
                if wire::decode_request(&bytes[..cut]).is_ok() {
                    return Err(format!("truncated request of {cut}/{} bytes accepted", bytes.len()));
                }
            }
            for cut in 0..rbytes.len() {
                if wire::decode_response(&rbytes[..cut]).is_ok() {
                    return Err(format!("truncated response of {cut}/{} bytes accepted", rbytes.len()));
                }
            }
        }
        let mut bad = bytes.clone();
        bad[rng.random_range(0..4)] ^= 0x20;
        if wire::decode_request(&bad).is_ok() {
            return Err("bad magic accepted".into());
        }
        bad = bytes.clone();
        bad[4] = rng.random_range(8..=255);
        if wire::decode_request(&bad).is_ok() {
            return Err("unknown opcode accepted".into());
        }
        frames += 2;
    }
    Ok(frames)
}

fn list_oracle(rng: &mut ChaCha8Rng, ep: &Endpoint) -> Result<usize, String> {
    let mut client = StoreClient::connect(ep).map_err(|e| e.to_string())?;
    let mut oracle = BTreeSet::new();
    let key = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(1..7);
        (0..len).map(|_| ['a', 'b', '/', 'c'][rng.random_range(0..4)]).collect()
    };
    for _ in 0..2000 {
        let k = key(rng);
        if rng.random_bool(0.7) {
            client.put(k.clone(), k.clone().into_bytes()).map_err(|e| e.to_string())?;
            oracle.insert(k);
        } else {
            let existed = client.delete(k.clone()).map_err(|e| e.to_string())?;
            if existed != oracle.remove(&k) {
                return Err(format!("DELETE {k:?} existence disagrees"));
            }
        }
    }
    let mut prefixes = 0;
    for _ in 0..300 {
        let p = key(rng);
        let mut got = client.list(p.clone()).map_err(|e| e.to_string())?;
        got.sort();
        let want: Vec<String> = oracle.iter().filter(|k| k.starts_with(&p)).cloned().collect();
        if got != want {
            return Err(format!("LIST {p:?}: got {} keys, expected {}", got.len(), want.len()));
        }
        prefixes += 1;
    }
    for k in &oracle {
        if client.get(k.clone()).map_err(|e| e.to_string())?.as_deref() != Some(k.as_bytes()) {
            return Err(format!("GET {k:?} disagrees"));
        }
    }
    Ok(prefixes)
}

/// Eight clients hammer shared and private keys. Every value carries its
/// writer and sequence number; a reader must never see a writer's sequence
/// go backwards on a key, and must always read its own latest private write.
fn linearizability(ep: &Endpoint) -> Result<usize, String> {
    const CLIENTS: usize = 8;
    const ROUNDS: u64 = 400;
    let barrier = Arc::new(Barrier::new(CLIENTS));
    let workers: Vec<_> = (0..CLIENTS)
        .map(|me| {
            let ep = ep.clone();
            let barrier = barrier.clone();
            thread::spawn(move || -> Result<usize, String> {
                let mut c = StoreClient::connect(&ep).map_err(|e| e.to_string())?;
                let mut rng = ChaCha8Rng::seed_from_u64(me as u64);
                let mut seen: BTreeMap<(u64, usize), u64> = BTreeMap::new();
                let mut ops = 0;
                barrier.wait();
                for seq in 1..=ROUNDS {
                    let shared = rng.random_range(0..4u64);
                    c.put(format!("lin/shared/{shared}"), format!("{me}:{seq}").into_bytes()).map_err(|e| e.to_string())?;
                    c.put(format!("lin/own/{me}"), seq.to_le_bytes().to_vec()).map_err(|e| e.to_string())?;
                    let own = c.get(format!("lin/own/{me}")).map_err(|e| e.to_string())?;
                    if own.as_deref() != Some(&seq.to_le_bytes()[..]) {
                        return Err(format!("client {me} lost its own write {seq}"));
                    }
                    for key in 0..4u64 {
                        let Some(v) = c.get(format!("lin/shared/{key}")).map_err(|e| e.to_string())? else { continue };
                        let text = String::from_utf8(v.to_vec()).map_err(|e| e.to_string())?;
                        let (w, s) = text.split_once(':').ok_or("bad value")?;
                        let (w, s): (usize, u64) = (w.parse().unwrap(), s.parse().unwrap());
                        let last = seen.entry((key, w)).or_insert(0);
                        if s < *last {
                            return Err(format!("client {me} saw writer {w} go back from {last} to {s} on key {key}"));
                        }
                        *last = s;
                    }
                    ops += 7;
                }
                Ok(ops)
            })
        })
        .collect();
    let mut total = 0;
    for w in workers {
        total += w.join().map_err(|_| "client thread panicked".to_string())??;
    }
    Ok(total)
}

fn wire_store(_: &mut Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let frames = match wire_roundtrip(&mut rng) {
        Ok(n) => n,
        Err(e) => return fail(format!("wire: {e}")),
    };
    let local = RunningServer::start_local().unwrap();
    let prefixes = match list_oracle(&mut rng, &local.addr.into()) {
        Ok(n) => n,
        Err(e) => return fail(format!("store: {e}")),
    };
    let server = ServerProcess::start();
    let ops = match linearizability(&server.endpoint) {
        Ok(n) => n,
        Err(e) => return fail(format!("linearizability: {e}")),
    };
    pass(format!(
        "{frames} frames round-trip, truncations and corrupt headers rejected; LIST matches oracle on {prefixes} prefixes; 8 clients, {ops} ops, no stale reads"
    ))
}

// -------------------------------------------------------------------- SSIM

fn ssim(shared: &mut Shared) -> Outcome {
    let side = SyntheticCorpusSpec::default().box_side;
    let (_, original, rebuilt) = shared.default_codec();
    let (report, images): (FidelityReport, _) = report::fidelity(original, rebuilt, side, 512, 512).unwrap();
    let mut hard = true;
    for (a, b) in &images {
        hard &= image::ssim(a, a).unwrap() == 1.0 && image::ssim(b, b).unwrap() == 1.0;
        hard &= image::ssim(a, b).unwrap() == image::ssim(b, a).unwrap();
    }
    let values: Vec<String> = report.views.iter().map(|v| format!("{:?} {:.4}", v.axis, v.ssim)).collect();
    let min = report.min_ssim();
    let detail = format!(
        "ssim(a,a) = 1 and symmetry hold: {hard}; 512x512 projections at ABS 0.003: {} (soft target {} {})",
        values.join(", "),
        report.target,
        if min >= report.target { "met" } else { "missed" }
    );
    if hard { pass(detail) } else { fail(detail) }
}

type Criterion = (&'static str, fn(&mut Shared) -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("error-bound", error_bound),
        ("compression-ratio", ratio),
        ("putget-scaling", putget),
        ("throughput-report", throughput),
        ("mini-sim", minisim),
        ("wire-store", wire_store),
        ("ssim", ssim),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared = Shared::default();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| run(&mut shared)))
            .unwrap_or_else(|p| {
                let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
                fail(format!("panicked: {}", msg.unwrap_or_default()))
            });
        failed += usize::from(!outcome.pass);
        println!(
            "{} {name} ({:.1} s): {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
