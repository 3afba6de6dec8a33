use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod bench;
mod fetch;
mod minisim;
mod output;
mod serve;

#[derive(Parser)]
#[command(name = "stagex", version, about = "In-transit data staging: store servers, mini-simulation, benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the subcommand makes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a store server; prints `READY <host:port>` once listening.
    Serve(serve::ServeArgs),
    /// Run a multi-process mini-simulation plus a verifier.
    Simulate(minisim::SimulateArgs),
    /// One simulation rank (spawned by `simulate`).
    #[command(hide = true)]
    Rank(minisim::RankArgs),
    /// Follow a simulation and check every chunk it publishes.
    Verify(minisim::VerifyArgs),
    /// Time PUT and GET over a range of payload sizes.
    BenchPutget(bench::PutGetArgs),
    /// Compression ratio, throughput and error on the synthetic corpus.
    BenchCodec(bench::CodecArgs),
    /// SSIM between density projections of original and decompressed data.
    ProjectSsim(bench::SsimArgs),
    /// Query ready steps or download a variable from a running simulation.
    Fetch(fetch::FetchArgs),
}

/// glibc raises its mmap threshold as large blocks are freed, up to 32 MiB,
/// so payloads just under it reuse warm heap pages while larger ones fault
/// in fresh mappings. Pinning the threshold gives every large value the same
/// allocation path and keeps transfer time proportional to size.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn pin_mmap_threshold() {
    // SAFETY: mallopt only adjusts allocator tuning and is called before any
    // other thread exists.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 128 * 1024);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn pin_mmap_threshold() {}

/// The error and its causes, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    pin_mmap_threshold();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(a) => serve::run(a),
        Command::Simulate(a) => minisim::simulate(a),
        Command::Rank(a) => minisim::rank(a),
        Command::Verify(a) => minisim::verify(a),
        Command::BenchPutget(a) => bench::putget(a),
        Command::BenchCodec(a) => bench::codec(a),
        Command::ProjectSsim(a) => bench::project_ssim(a),
        Command::Fetch(a) => fetch::run(a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("stagex: {}", describe(&err));
            ExitCode::FAILURE
        }
    }
}
