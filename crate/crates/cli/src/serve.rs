use std::fs;
use std::io::Write;
use std::process::ExitCode;
use std::thread;

use anyhow::{Context, Result};
use clap::Args;
use signal_hook::consts::{SIGINT, SIGTERM};
use signal_hook::iterator::Signals;
use stagex::store::{Server, ServerConfig};

use crate::Common;

#[derive(Args)]
pub struct ServeArgs {
    #[command(flatten)]
    common: Common,
    /// Address to listen on; port 0 picks a free one.
    #[arg(long)]
    bind: Option<String>,
    /// Byte cap on stored keys and values; 0 is unlimited.
    #[arg(long)]
    max_memory: Option<u64>,
}

pub fn run(args: ServeArgs) -> Result<ExitCode> {
    let mut config = match &args.common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ServerConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ServerConfig::new("127.0.0.1:0"),
    };
    if let Some(bind) = args.bind {
        config.bind = bind;
    }
    if let Some(cap) = args.max_memory {
        config.max_memory = cap;
    }

    let server = Server::bind(&config)?;
    let addr = server.local_addr();
    let handle = server.shutdown_handle();
    let mut signals = Signals::new([SIGTERM, SIGINT])?;
    thread::spawn(move || {
        if let Some(sig) = signals.forever().next() {
            log::info!("signal {sig}, shutting down");
            handle.shutdown();
        }
    });

    if let Some(out) = &args.common.out {
        let info = serde_json::json!({ "endpoint": addr.to_string(), "max_memory": config.max_memory });
        fs::write(out, format!("{info}\n")).with_context(|| format!("writing {}", out.display()))?;
    }
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "READY {addr}")?;
    stdout.flush()?;
    drop(stdout);

    server.run()?;
    Ok(ExitCode::SUCCESS)
}
