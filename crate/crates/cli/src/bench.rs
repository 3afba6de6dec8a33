use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use stagex::codec::CompressionSpec;
use stagex::net::Endpoint;
use stagex::report::{self, BenchReport};
use stagex::store::RunningServer;
use stagex::synth::SyntheticCorpusSpec;
use stagex::SimConfig;

use crate::output::emit;
use crate::Common;

/// Endpoints from repeated `--endpoint` flags, else the config's databases.
fn endpoints(common: &Common, flags: &[Endpoint]) -> Result<Vec<Endpoint>> {
    if !flags.is_empty() {
        return Ok(flags.to_vec());
    }
    match &common.config {
        Some(path) => Ok(SimConfig::load(path)?.endpoints()),
        None => Ok(Vec::new()),
    }
}

#[derive(Args)]
pub struct PutGetArgs {
    #[command(flatten)]
    common: Common,
    /// Server to use (repeatable). Without one, an in-process server is started.
    #[arg(long = "endpoint")]
    endpoints: Vec<Endpoint>,
    /// Payload sizes in MiB.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256")]
    sizes_mib: Vec<f64>,
    /// Timed rounds per size, after one untimed warm-up round.
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
}

pub fn putget(args: PutGetArgs) -> Result<ExitCode> {
    let mut eps = endpoints(&args.common, &args.endpoints)?;
    let _local = if eps.is_empty() {
        let server = RunningServer::start_local()?;
        eps.push(server.addr.into());
        Some(server)
    } else {
        None
    };
    let sizes: Vec<u64> = args.sizes_mib.iter().map(|m| (m * 1024.0 * 1024.0).round() as u64).collect();
    let result = report::bench_putget(&eps, &sizes, args.repetitions, args.common.seed)?;
    for e in &result.sizes {
        eprintln!(
            "{:>12} B  put {:>9.4} s {:>9.1} MB/s  get {:>9.4} s {:>9.1} MB/s",
            e.bytes,
            e.put.median_seconds,
            e.put.throughput_mb_s.unwrap_or(0.0),
            e.get.median_seconds,
            e.get.throughput_mb_s.unwrap_or(0.0),
        );
    }
    emit(&BenchReport::PutGet(result), args.common.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Clone)]
pub struct CorpusArgs {
    /// Number of particles in the corpus.
    #[arg(long, default_value_t = stagex::synth::DEFAULT_PARTICLES)]
    particles: usize,
    /// Number of halos.
    #[arg(long, default_value_t = stagex::synth::DEFAULT_HALOS)]
    halos: usize,
    /// Side length of the cubic box.
    #[arg(long, default_value_t = stagex::synth::DEFAULT_BOX)]
    box_side: f64,
    /// Fraction of particles placed uniformly instead of in halos.
    #[arg(long, default_value_t = stagex::synth::DEFAULT_BACKGROUND)]
    background: f64,
}

impl CorpusArgs {
    fn spec(&self, seed: u64) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            n_particles: self.particles,
            n_halos: self.halos,
            box_side: self.box_side,
            halo_sigma: None,
            background_fraction: self.background,
            seed,
        }
    }
}

/// Compression specs from the config's `data` list, else x/y/z at ABS
/// `abs` and lossless ids.
fn specs(common: &Common, abs: f64) -> Result<Vec<CompressionSpec>> {
    if let Some(path) = &common.config {
        let cfg = SimConfig::load(path)?;
        if !cfg.data.is_empty() {
            return Ok(cfg.data);
        }
    }
    Ok(vec![
        CompressionSpec::abs("x", abs),
        CompressionSpec::abs("y", abs),
        CompressionSpec::abs("z", abs),
        CompressionSpec::lossless("id"),
    ])
}

#[derive(Args)]
pub struct CodecArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Absolute bound for x/y/z when the config has no `data` list.
    #[arg(long, default_value_t = 0.003)]
    abs: f64,
    /// Server for the end-to-end (compress + PUT) figure. Without one, an
    /// in-process server is started; `--no-store` skips PUT entirely.
    #[arg(long)]
    endpoint: Option<Endpoint>,
    /// Skip the PUT and its end-to-end figure.
    #[arg(long)]
    no_store: bool,
}

pub fn codec(args: CodecArgs) -> Result<ExitCode> {
    let specs = specs(&args.common, args.abs)?;
    let mut local = None;
    let endpoint = match (&args.endpoint, args.no_store) {
        (_, true) => None,
        (Some(ep), false) => Some(ep.clone()),
        (None, false) => {
            let server = RunningServer::start_local()?;
            let ep = Endpoint::from(server.addr);
            local = Some(server);
            Some(ep)
        }
    };
    let (result, _, _) = report::bench_codec(&args.corpus.spec(args.common.seed), &specs, endpoint.as_ref())?;
    drop(local);
    for e in &result.variables {
        eprintln!(
            "{:>4} {:>5} ratio {:>6.3}  codec {:>8.1} MB/s  end-to-end {:>8.1} MB/s  max err {:.3e} (bound {:.3e})",
            e.variable,
            e.compressor,
            e.ratio,
            e.codec_mb_s.unwrap_or(0.0),
            e.end_to_end_mb_s.unwrap_or(0.0),
            e.max_abs_error,
            e.epsilon,
        );
    }
    let ok = result.variables.iter().all(|e| e.bound_holds);
    emit(&BenchReport::Codec(result), args.common.out.as_deref())?;
    if !ok {
        bail!("error bound violated");
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
pub struct SsimArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Absolute bound on x/y/z.
    #[arg(long, default_value_t = 0.003)]
    abs: f64,
    /// Image width in pixels.
    #[arg(long, default_value_t = 512)]
    width: usize,
    /// Image height in pixels.
    #[arg(long, default_value_t = 512)]
    height: usize,
    /// Directory for PGM images of each projection pair.
    #[arg(long)]
    pgm_dir: Option<PathBuf>,
}

fn write_pgm(dir: &Path, name: &str, img: &stagex::ProjectionImage) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    img.write_pgm(BufWriter::new(file))?;
    Ok(())
}

pub fn project_ssim(args: SsimArgs) -> Result<ExitCode> {
    let specs = specs(&args.common, args.abs)?;
    let corpus = args.corpus.spec(args.common.seed);
    let (_, original, rebuilt) = report::bench_codec(&corpus, &specs, None)?;
    let (result, images) = report::fidelity(&original, &rebuilt, corpus.box_side, args.width, args.height)?;
    if let Some(dir) = &args.pgm_dir {
        fs::create_dir_all(dir)?;
        for (view, (a, b)) in result.views.iter().zip(&images) {
            let axis = serde_json::to_value(view.axis)?;
            let axis = axis.as_str().unwrap_or("axis");
            write_pgm(dir, &format!("original_{axis}.pgm"), a)?;
            write_pgm(dir, &format!("decompressed_{axis}.pgm"), b)?;
        }
    }
    for v in &result.views {
        eprintln!("{:?}: ssim {:.6}", v.axis, v.ssim);
    }
    emit(&BenchReport::ProjectSsim(result), args.common.out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}
