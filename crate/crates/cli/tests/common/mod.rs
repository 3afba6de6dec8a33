#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use stagex::net::Endpoint;

pub fn stagex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stagex"))
}

/// A `stagex serve` child process, killed on drop.
pub struct ServerProcess {
    pub child: Child,
    pub endpoint: Endpoint,
}

impl ServerProcess {
    pub fn start() -> ServerProcess {
        let mut child = stagex()
            .args(["serve", "--bind", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .expect("spawn stagex serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("READY ").unwrap_or_else(|| panic!("unexpected banner {line:?}"));
        ServerProcess {
            endpoint: addr.parse().unwrap(),
            child,
        }
    }

    pub fn signal(&self, sig: &str) {
        let status = Command::new("kill").args([sig, &self.child.id().to_string()]).status().unwrap();
        assert!(status.success());
    }

    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Writes a simulation config using ABS 0.003 on x/y/z and lossless ids.
pub fn write_sim_config(dir: &Path, sim_id: &str, endpoints: &[&Endpoint]) -> PathBuf {
    let databases: Vec<_> = endpoints
        .iter()
        .map(|e| serde_json::json!({ "address": e.to_string(), "protocol": "ofi+tcp" }))
        .collect();
    let config = serde_json::json!({
        "sim-id": sim_id,
        "libraries": "unused",
        "databases": databases,
        "data": [
            { "name": "x", "compressor": "SZ3", "mode": "abs", "value": 0.003 },
            { "name": "y", "compressor": "SZ3", "mode": "abs", "value": 0.003 },
            { "name": "z", "compressor": "SZ3", "mode": "abs", "value": 0.003 },
            { "name": "id", "compressor": "BLOSC" }
        ]
    });
    let path = dir.join(format!("{sim_id}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path
}

pub fn json_of(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        )
    })
}
