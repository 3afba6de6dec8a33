//! Multi-process mini-simulation: `simulate` launches one `rank` process per
//! rank plus a `verify` process that follows the simulation through the
//! analysis session and checks every chunk against regenerated data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use stagex::analysis::{AnalysisError, Session};
use stagex::codec::{effective_abs_bound, Compression};
use stagex::dtype::FieldData;
use stagex::keys::DATA_KIND;
use stagex::report::corpus_field;
use stagex::sim::SimClient;
use stagex::synth::{rank_slice, Particles};
use stagex::SimConfig;

use crate::output::emit;
use crate::Common;

pub const VARIABLES: [&str; 4] = ["x", "y", "z", "id"];

/// Shape shared by `simulate`, `rank` and `verify`; all three must agree
/// for the verifier to regenerate what the ranks sent.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct Shape {
    /// Number of rank processes.
    #[arg(long, default_value_t = 4)]
    pub ranks: u64,
    /// Timesteps per rank.
    #[arg(long, default_value_t = 3)]
    pub steps: u64,
    /// Particles per rank per step.
    #[arg(long, default_value_t = 100_000)]
    pub particles: usize,
    /// Halos per rank slice.
    #[arg(long, default_value_t = 8)]
    pub halos: usize,
}

fn load_config(common: &Common) -> Result<SimConfig> {
    let path = common.config.as_ref().context("--config <sim config JSON> is required")?;
    Ok(SimConfig::load(path)?)
}

#[derive(Args)]
pub struct RankArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    shape: Shape,
    #[arg(long)]
    rank: u64,
    /// Pause after each step, to stretch the run out.
    #[arg(long, default_value_t = 0)]
    step_delay_ms: u64,
}

#[derive(Debug, Serialize)]
struct RankReport {
    rank: u64,
    steps_sent: u64,
    chunks_sent: u64,
    stored_bytes: u64,
    original_bytes: u64,
}

pub fn rank(args: RankArgs) -> Result<ExitCode> {
    let config = load_config(&args.common)?;
    let Shape { ranks, steps, particles, halos } = args.shape;
    let mut client = SimClient::with_config(ranks, config)?;
    let mut report = RankReport {
        rank: args.rank,
        steps_sent: 0,
        chunks_sent: 0,
        stored_bytes: 0,
        original_bytes: 0,
    };
    for step in 0..steps {
        let slice = rank_slice(args.common.seed, args.rank, step, particles, halos);
        for var in VARIABLES {
            let values = corpus_field(&slice, var).expect("corpus variable");
            let meta = client
                .send_data(args.rank, step, var, DATA_KIND, values)
                .with_context(|| format!("rank {} step {step} {var}", args.rank))?;
            report.chunks_sent += 1;
            report.stored_bytes += meta.stored_bytes;
            report.original_bytes += meta.original_bytes;
        }
        client.ts_done(args.rank, step)?;
        report.steps_sent += 1;
        if args.step_delay_ms > 0 {
            thread::sleep(Duration::from_millis(args.step_delay_ms));
        }
    }
    if steps > 0 {
        client.sim_done(args.rank, steps - 1)?;
    }
    emit(&report, args.common.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    shape: Shape,
    /// Give up after this many seconds.
    #[arg(long, default_value_t = 120.0)]
    timeout_secs: f64,
    /// Readiness polling interval.
    #[arg(long, default_value_t = 50)]
    poll_ms: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VariableCheck {
    pub chunks: u64,
    pub elements: u64,
    pub max_abs_error: f64,
    /// Largest per-chunk bound recorded in metadata.
    pub max_epsilon: f64,
    pub stored_bytes: u64,
    pub original_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub sim_id: String,
    pub shape: Shape,
    pub seed: u64,
    /// Steps in the order they were first seen ready.
    pub ready_order: Vec<u64>,
    /// (step, rank) pairs whose four chunks were all checked.
    pub chunk_groups_verified: u64,
    pub variables: BTreeMap<String, VariableCheck>,
    pub finished_step: Option<u64>,
    pub violations: Vec<String>,
    pub wall_seconds: f64,
    pub ok: bool,
}

fn attach_with_retry(config: &SimConfig, deadline: Instant, poll: Duration) -> Result<Session> {
    let server0 = &config.databases[0].endpoint;
    loop {
        match Session::attach(server0, &config.sim_id) {
            Ok(s) => return Ok(s.with_poll_interval(poll)),
            Err(AnalysisError::UnknownSimulation(_) | AnalysisError::Transport(_)) if Instant::now() < deadline => {
                thread::sleep(poll)
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Checks one variable of one ready step against the regenerated slices.
fn check_variable(
    session: &Session,
    config: &SimConfig,
    step: u64,
    var: &str,
    expected: &[Particles],
    check: &mut VariableCheck,
    violations: &mut Vec<String>,
) -> Result<()> {
    let (values, metas) = session.get_variable_all_ranks(step, var)?;
    let originals: Vec<FieldData> = expected.iter().map(|p| corpus_field(p, var).unwrap().to_owned()).collect();
    let mut concat = originals[0].clone();
    for o in &originals[1..] {
        concat.extend_from(o);
    }
    if values.len() != concat.len() {
        violations.push(format!("step {step} {var}: {} values, expected {}", values.len(), concat.len()));
        return Ok(());
    }
    let (got, want) = (values.to_f64(), concat.to_f64());
    let mut offset = 0;
    for (rank, (meta, original)) in metas.iter().zip(&originals).enumerate() {
        let n = original.len();
        let bound = match config.spec_for(var) {
            Some(Compression::Lossy { mode, value }) => effective_abs_bound(*mode, *value, original.to_f64()),
            _ => 0.0,
        };
        if meta.epsilon != bound {
            violations.push(format!("step {step} rank {rank} {var}: chunk bound {} but config implies {bound}", meta.epsilon));
        }
        let err = got[offset..offset + n]
            .iter()
            .zip(&want[offset..offset + n])
            .map(|(g, w)| (g - w).abs())
            .fold(0.0, f64::max);
        if !(err <= bound) {
            violations.push(format!("step {step} rank {rank} {var}: max error {err} exceeds {bound}"));
        }
        if bound == 0.0 && values.dtype() == concat.dtype() && got[offset..offset + n] != want[offset..offset + n] {
            violations.push(format!("step {step} rank {rank} {var}: exact chunk differs"));
        }
        check.max_abs_error = check.max_abs_error.max(err);
        check.max_epsilon = check.max_epsilon.max(meta.epsilon);
        check.stored_bytes += meta.stored_bytes;
        check.original_bytes += meta.original_bytes;
        check.chunks += 1;
        offset += n;
    }
    check.elements += values.len() as u64;
    if values.dtype() != concat.dtype() {
        violations.push(format!("step {step} {var}: dtype {} expected {}", values.dtype(), concat.dtype()));
    }
    Ok(())
}

pub fn run_verifier(config: &SimConfig, shape: &Shape, seed: u64, timeout: Duration, poll: Duration) -> Result<VerifyReport> {
    let start = Instant::now();
    let deadline = start + timeout;
    let session = attach_with_retry(config, deadline, poll)?;
    let mut report = VerifyReport {
        sim_id: config.sim_id.clone(),
        shape: shape.clone(),
        seed,
        ready_order: Vec::new(),
        chunk_groups_verified: 0,
        variables: VARIABLES.iter().map(|v| (v.to_string(), VariableCheck::default())).collect(),
        finished_step: None,
        violations: Vec::new(),
        wall_seconds: 0.0,
        ok: false,
    };
    if session.num_ranks() != shape.ranks {
        report.violations.push(format!("simulation has {} ranks, expected {}", session.num_ranks(), shape.ranks));
    }
    let mut seen = BTreeSet::new();
    while (seen.len() as u64) < shape.steps {
        let ready = session.ready_steps()?;
        report.finished_step = ready.finished;
        for step in &seen {
            if !ready.contains(*step) {
                report.violations.push(format!("step {step} stopped being ready"));
            }
        }
        for &step in &ready.steps {
            if step >= shape.steps {
                if seen.insert(step) {
                    report.violations.push(format!("unexpected ready step {step}"));
                }
                continue;
            }
            if !seen.insert(step) {
                continue;
            }
            report.ready_order.push(step);
            let expected: Vec<Particles> = (0..shape.ranks)
                .map(|r| rank_slice(seed, r, step, shape.particles, shape.halos))
                .collect();
            for var in VARIABLES {
                let check = report.variables.get_mut(var).unwrap();
                if let Err(e) = check_variable(&session, config, step, var, &expected, check, &mut report.violations) {
                    report.violations.push(format!("step {step} {var}: {e:#}"));
                }
            }
            report.chunk_groups_verified += shape.ranks;
        }
        if (seen.len() as u64) >= shape.steps {
            break;
        }
        if Instant::now() >= deadline {
            let missing: Vec<u64> = (0..shape.steps).filter(|s| !seen.contains(s)).collect();
            report.violations.push(format!("timed out waiting for steps {missing:?}"));
            break;
        }
        thread::sleep(poll);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    report.ok = report.violations.is_empty();
    Ok(report)
}

pub fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let config = load_config(&args.common)?;
    let report = run_verifier(
        &config,
        &args.shape,
        args.common.seed,
        Duration::from_secs_f64(args.timeout_secs),
        Duration::from_millis(args.poll_ms),
    )?;
    emit(&report, args.common.out.as_deref())?;
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    Ok(if report.ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    shape: Shape,
    /// Pause after each step, passed to every rank.
    #[arg(long, default_value_t = 0)]
    step_delay_ms: u64,
    /// Give up on the verifier after this many seconds.
    #[arg(long, default_value_t = 120.0)]
    timeout_secs: f64,
    /// Skip the verifier process.
    #[arg(long)]
    no_verify: bool,
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    operation: &'static str,
    sim_id: String,
    shape: Shape,
    seed: u64,
    rank_exit_codes: Vec<Option<i32>>,
    verifier_exit_code: Option<i32>,
    verifier: Option<VerifyReport>,
    wall_seconds: f64,
    ok: bool,
}

fn shape_args(shape: &Shape, common: &Common, config: &Path) -> Vec<String> {
    vec![
        "--config".into(),
        config.display().to_string(),
        "--seed".into(),
        common.seed.to_string(),
        "--ranks".into(),
        shape.ranks.to_string(),
        "--steps".into(),
        shape.steps.to_string(),
        "--particles".into(),
        shape.particles.to_string(),
        "--halos".into(),
        shape.halos.to_string(),
    ]
}

pub fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let config_path: PathBuf = args.common.config.clone().context("--config <sim config JSON> is required")?;
    let config = SimConfig::load(&config_path)?;
    let exe = std::env::current_exe().context("locating the stagex binary")?;
    let base = shape_args(&args.shape, &args.common, &config_path);

    let verifier = if args.no_verify {
        None
    } else {
        let mut cmd = Command::new(&exe);
        cmd.arg("verify")
            .args(&base)
            .args(["--timeout-secs", &args.timeout_secs.to_string()])
            .stdout(Stdio::piped());
        Some(cmd.spawn().context("spawning verifier")?)
    };
    let mut ranks = Vec::new();
    for rank in 0..args.shape.ranks {
        let child = Command::new(&exe)
            .arg("rank")
            .args(&base)
            .args(["--rank", &rank.to_string(), "--step-delay-ms", &args.step_delay_ms.to_string()])
            .stdout(Stdio::null())
            .spawn()
            .with_context(|| format!("spawning rank {rank}"))?;
        ranks.push(child);
    }
    let rank_exit_codes: Vec<Option<i32>> = ranks
        .into_iter()
        .map(|mut c| c.wait().map(|s| s.code()).unwrap_or(None))
        .collect();
    let (verifier_exit_code, verifier) = match verifier {
        None => (None, None),
        Some(child) => {
            let out = child.wait_with_output()?;
            let report = serde_json::from_slice::<VerifyReport>(&out.stdout).ok();
            (out.status.code(), report)
        }
    };
    let ranks_ok = rank_exit_codes.iter().all(|c| *c == Some(0));
    let verify_ok = args.no_verify || (verifier_exit_code == Some(0) && verifier.as_ref().is_some_and(|v| v.ok));
    let report = SimulateReport {
        operation: "simulate",
        sim_id: config.sim_id.clone(),
        shape: args.shape.clone(),
        seed: args.common.seed,
        rank_exit_codes,
        verifier_exit_code,
        verifier,
        wall_seconds: start.elapsed().as_secs_f64(),
        ok: ranks_ok && verify_ok,
    };
    emit(&report, args.common.out.as_deref())?;
    if !ranks_ok {
        bail!("rank processes failed: {:?}", report.rank_exit_codes);
    }
    Ok(if report.ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
