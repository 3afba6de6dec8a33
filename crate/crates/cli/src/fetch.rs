use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use stagex::analysis::{Session, WaitOutcome};
use stagex::keys::ChunkMeta;
use stagex::net::Endpoint;

use crate::output::emit;
use crate::Common;

#[derive(Args)]
pub struct FetchArgs {
    #[command(flatten)]
    common: Common,
    /// Server 0, when not taken from `--config`.
    #[arg(long)]
    endpoint: Option<Endpoint>,
    /// Simulation id, overriding the config.
    #[arg(long)]
    sim_id: Option<String>,
    /// Timestep to download; needs `--variable`.
    #[arg(long)]
    step: Option<u64>,
    /// Variable to download; needs `--step`.
    #[arg(long)]
    variable: Option<String>,
    /// Write the concatenated values here as raw little-endian elements.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Wait up to this long for `--step` to become ready.
    #[arg(long, default_value_t = 0.0)]
    wait_secs: f64,
}

#[derive(Serialize)]
struct SummaryReport {
    operation: &'static str,
    sim_id: String,
    num_ranks: u64,
    variables: Vec<String>,
    databases: Vec<String>,
    ready_steps: Vec<u64>,
    finished_step: Option<u64>,
}

#[derive(Serialize)]
struct VariableReport {
    operation: &'static str,
    sim_id: String,
    step: u64,
    variable: String,
    dtype: String,
    count: usize,
    min: Option<f64>,
    max: Option<f64>,
    raw_path: Option<PathBuf>,
    chunks: Vec<ChunkMeta>,
}

fn open(args: &FetchArgs) -> Result<Session> {
    if let (Some(ep), Some(sim)) = (&args.endpoint, &args.sim_id) {
        return Ok(Session::attach(ep, sim)?);
    }
    let path = args
        .common
        .config
        .as_ref()
        .context("give --config, or --endpoint and --sim-id")?;
    let mut config = stagex::SimConfig::load(path)?;
    if let Some(sim) = &args.sim_id {
        config.sim_id = sim.clone();
    }
    let ep = args.endpoint.clone().unwrap_or_else(|| config.databases[0].endpoint.clone());
    Ok(Session::attach(&ep, &config.sim_id)?)
}

pub fn run(args: FetchArgs) -> Result<ExitCode> {
    let session = open(&args)?;
    let out = args.common.out.as_deref();
    let (Some(step), Some(variable)) = (args.step, args.variable.as_deref()) else {
        if args.variable.is_some() {
            bail!("--variable needs --step");
        }
        let ready = session.ready_steps()?;
        let report = SummaryReport {
            operation: "fetch",
            sim_id: session.sim_id().into(),
            num_ranks: session.num_ranks(),
            variables: session.variables().to_vec(),
            databases: session.info().databases.clone(),
            ready_steps: ready.steps,
            finished_step: ready.finished,
        };
        emit(&report, out)?;
        return Ok(ExitCode::SUCCESS);
    };

    match session.wait_for_step(step, Duration::from_secs_f64(args.wait_secs))? {
        WaitOutcome::Ready => {}
        WaitOutcome::TimedOut => bail!("step {step} is not ready"),
        WaitOutcome::SimFinishedWithoutStep { last_step } => {
            bail!("simulation finished at step {last_step} without producing step {step}")
        }
    }
    let (values, chunks) = session.get_variable_all_ranks(step, variable)?;
    let floats = values.to_f64();
    let finite = floats.iter().copied().filter(|v| v.is_finite());
    let (min, max) = finite.fold((None, None), |(lo, hi): (Option<f64>, Option<f64>), v| {
        (Some(lo.map_or(v, |l| l.min(v))), Some(hi.map_or(v, |h| h.max(v))))
    });
    if let Some(path) = &args.raw {
        fs::write(path, values.as_ref().to_le_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    let report = VariableReport {
        operation: "fetch",
        sim_id: session.sim_id().into(),
        step,
        variable: variable.into(),
        dtype: values.dtype().name().into(),
        count: values.len(),
        min,
        max,
        raw_path: args.raw.clone(),
        chunks,
    };
    emit(&report, out)?;
    Ok(ExitCode::SUCCESS)
}
