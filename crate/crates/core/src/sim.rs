//! Simulation-side client.
//!
//! Each rank owns one [`SimClient`]. Ranks never talk to each other: all
//! coordination happens through keys on server 0. A rank's data chunks go to
//! shard `rank % n_databases`; metadata, step markers and the info record
//! always go to server 0.
//!
//! Rank uniqueness is the caller's responsibility; two processes claiming
//! the same rank overwrite each other's chunks.

use std::collections::HashSet;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use thiserror::Error;

use crate::codec::{self, CodecError, Compression};
use crate::config::{ConfigError, SimConfig};
use crate::dtype::{Dtype, FieldData, FieldRef, UnknownDtype};
use crate::keys::{valid_segment, ChunkKey, ChunkMeta, SimInfo, META_KIND};
use crate::net::{ClientError, Endpoint, StoreClient};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("database {endpoint} is unreachable: {source}")]
    Unreachable { endpoint: Endpoint, source: ClientError },
    #[error("simulation {sim_id} already registered differently: {reason}")]
    InfoConflict { sim_id: String, reason: String },
    #[error("rank {rank} out of range for {num_ranks} ranks")]
    RankOutOfRange { rank: u64, num_ranks: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    UnknownDtype(#[from] UnknownDtype),
    #[error("compressing {variable}: {source}")]
    Codec { variable: String, source: CodecError },
    #[error("PUT {key} to {endpoint} failed: {source}")]
    Put { endpoint: Endpoint, key: String, source: ClientError },
    #[error("corrupt info record at {key}: {message}")]
    BadInfo { key: String, message: String },
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

/// Shard holding a rank's data chunks.
pub fn shard_for(rank: u64, n_databases: usize) -> usize {
    assert!(n_databases >= 1, "at least one database is required");
    (rank % n_databases as u64) as usize
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub struct SimClient {
    config: SimConfig,
    num_ranks: u64,
    conns: Vec<Option<StoreClient>>,
    warned: HashSet<String>,
}

impl SimClient {
    /// Loads the config and registers the simulation; see [`SimClient::with_config`].
    pub fn init(num_ranks: u64, config_path: impl AsRef<Path>) -> Result<Self> {
        SimClient::with_config(num_ranks, SimConfig::load(config_path)?)
    }

    /// PINGs every database and writes the info record to server 0. A
    /// second process registering the same simulation with the same rank
    /// count and database list succeeds without rewriting it.
    pub fn with_config(num_ranks: u64, config: SimConfig) -> Result<Self> {
        if num_ranks == 0 {
            return Err(SimError::InvalidArgument("num_ranks must be positive".into()));
        }
        let mut client = SimClient {
            conns: config.databases.iter().map(|_| None).collect(),
            config,
            num_ranks,
            warned: HashSet::new(),
        };
        for shard in 0..client.conns.len() {
            let endpoint = client.config.databases[shard].endpoint.clone();
            client
                .conn(shard)
                .and_then(|c| c.ping())
                .map_err(|source| SimError::Unreachable { endpoint, source })?;
        }
        client.register()?;
        Ok(client)
    }

    fn register(&mut self) -> Result<()> {
        let sim_id = self.config.sim_id.clone();
        let key = ChunkKey::info(&sim_id).to_string();
        let info = SimInfo {
            num_ranks: self.num_ranks,
            variables: self.config.data.iter().map(|s| s.name.clone()).collect(),
            databases: self.config.databases.iter().map(|d| d.endpoint.to_string()).collect(),
            created_at: now_secs(),
        };
        let existing = self.call0(|c| c.get(key.clone()))?;
        if let Some(bytes) = existing {
            let old: SimInfo = serde_json::from_slice(&bytes).map_err(|e| SimError::BadInfo {
                key: key.clone(),
                message: e.to_string(),
            })?;
            let conflict = |reason: String| SimError::InfoConflict {
                sim_id: sim_id.clone(),
                reason,
            };
            if old.num_ranks != info.num_ranks {
                return Err(conflict(format!("num_ranks {} vs existing {}", info.num_ranks, old.num_ranks)));
            }
            if old.databases != info.databases {
                return Err(conflict(format!("databases {:?} vs existing {:?}", info.databases, old.databases)));
            }
            debug!("{sim_id} already registered at {}", old.created_at);
            return Ok(());
        }
        let body = serde_json::to_vec(&info).expect("info serializes");
        self.put(0, key, body)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn sim_id(&self) -> &str {
        &self.config.sim_id
    }

    pub fn num_ranks(&self) -> u64 {
        self.num_ranks
    }

    fn conn(&mut self, shard: usize) -> Result<&mut StoreClient, ClientError> {
        if self.conns[shard].is_none() {
            self.conns[shard] = Some(StoreClient::connect(&self.config.databases[shard].endpoint)?);
        }
        Ok(self.conns[shard].as_mut().unwrap())
    }

    /// Runs one call on a shard, dropping the connection on failure so the
    /// next call reconnects.
    fn with_conn<T>(&mut self, shard: usize, f: impl FnOnce(&mut StoreClient) -> Result<T, ClientError>) -> Result<T, ClientError> {
        let result = self.conn(shard).and_then(f);
        if matches!(result, Err(ClientError::Connect { .. } | ClientError::Transport { .. })) {
            self.conns[shard] = None;
        }
        result
    }

    fn call0<T>(&mut self, f: impl FnOnce(&mut StoreClient) -> Result<T, ClientError>) -> Result<T> {
        let endpoint = self.config.databases[0].endpoint.clone();
        self.with_conn(0, f).map_err(|source| SimError::Unreachable { endpoint, source })
    }

    fn put(&mut self, shard: usize, key: String, value: Vec<u8>) -> Result<()> {
        let endpoint = self.config.databases[shard].endpoint.clone();
        let k = key.clone();
        self.with_conn(shard, move |c| c.put(k, value))
            .map_err(|source| SimError::Put { endpoint, key, source })
    }

    fn check_rank(&self, rank: u64) -> Result<()> {
        if rank >= self.num_ranks {
            return Err(SimError::RankOutOfRange {
                rank,
                num_ranks: self.num_ranks,
            });
        }
        Ok(())
    }

    fn compression_for(&mut self, variable: &str) -> Compression {
        match self.config.spec_for(variable) {
            Some(c) => *c,
            None => {
                if self.warned.insert(variable.to_string()) {
                    warn!("no compression spec for {variable:?}; storing uncompressed");
                }
                Compression::None
            }
        }
    }

    /// Compresses one chunk, stores it on the rank's shard, then stores its
    /// metadata on server 0. Returns once both writes are acknowledged.
    pub fn send_data(&mut self, rank: u64, step: u64, variable: &str, kind: &str, values: FieldRef<'_>) -> Result<ChunkMeta> {
        self.check_rank(rank)?;
        if !valid_segment(variable) {
            return Err(SimError::InvalidArgument(format!("variable name {variable:?}")));
        }
        if !valid_segment(kind) || kind == META_KIND {
            return Err(SimError::InvalidArgument(format!("chunk kind {kind:?}")));
        }
        let compression = self.compression_for(variable);
        let container = codec::compress(values, &compression).map_err(|source| SimError::Codec {
            variable: variable.to_string(),
            source,
        })?;
        let shard = shard_for(rank, self.config.databases.len());
        let meta = ChunkMeta {
            dtype: values.dtype().name().into(),
            count: values.len() as u64,
            compressor: compression.compressor_name().into(),
            mode: compression.mode().map(|m| m.name().into()),
            epsilon: container.header.epsilon,
            original_bytes: container.header.original_size,
            stored_bytes: container.stored_size() as u64,
            shard,
            kind: kind.to_string(),
        };
        let sim_id = self.config.sim_id.clone();
        self.put(shard, ChunkKey::data(&sim_id, step, rank, variable, kind).to_string(), container.to_bytes())?;
        let meta_bytes = serde_json::to_vec(&meta).expect("meta serializes");
        self.put(0, ChunkKey::meta(&sim_id, step, rank, variable).to_string(), meta_bytes)?;
        Ok(meta)
    }

    /// Untyped form matching the C-style call: `dtype` names the element
    /// type (`"float"`, `"double"`, ...) and `bytes` holds `n` little-endian
    /// elements.
    #[allow(clippy::too_many_arguments)]
    pub fn send_raw(&mut self, rank: u64, step: u64, variable: &str, kind: &str, dtype: &str, n: usize, bytes: &[u8]) -> Result<ChunkMeta> {
        let dtype: Dtype = dtype.parse()?;
        if n.checked_mul(dtype.size()) != Some(bytes.len()) {
            return Err(SimError::InvalidArgument(format!(
                "{n} {dtype} elements need {} bytes, got {}",
                n.saturating_mul(dtype.size()),
                bytes.len()
            )));
        }
        let data = FieldData::from_le_bytes(dtype, bytes).expect("length checked");
        self.send_data(rank, step, variable, kind, data.as_ref())
    }

    /// Marks `step` complete for `rank`. Call after every `send_data` for the
    /// step has returned.
    pub fn ts_done(&mut self, rank: u64, step: u64) -> Result<()> {
        self.check_rank(rank)?;
        let key = ChunkKey::done(&self.config.sim_id, step, rank).to_string();
        self.put(0, key, b"1".to_vec())
    }

    /// Records `last_step` as the final step of the simulation.
    pub fn sim_done(&mut self, rank: u64, last_step: u64) -> Result<()> {
        self.check_rank(rank)?;
        let key = ChunkKey::sim_done(&self.config.sim_id).to_string();
        self.put(0, key, last_step.to_string().into_bytes())
    }
}
