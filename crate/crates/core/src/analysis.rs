//! Analysis-side retrieval: discovers a simulation from server 0, tracks
//! which steps are ready and fetches, decodes and reassembles chunks.
//!
//! A step is ready once every rank's `<sim>/<step>/done/<rank>` marker exists.
//! Readiness is polled; the store has no notifications.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::{self, CodecError};
use crate::config::{ConfigError, SimConfig};
use crate::dtype::FieldData;
use crate::keys::{sim_prefix, ChunkKey, ChunkMeta, SimInfo};
use crate::net::{ClientError, Endpoint, StoreClient};

pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPart {
    Meta,
    Data,
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown simulation {0:?}: no info record on server 0")]
    UnknownSimulation(String),
    #[error("malformed record {key}: {message}")]
    BadRecord { key: String, message: String },
    #[error("missing {part:?} chunk {key}")]
    MissingChunk { part: MissingPart, key: String },
    #[error(transparent)]
    Transport(#[from] ClientError),
    #[error("chunk {key} failed integrity checks: {source}")]
    Integrity { key: String, source: CodecError },
    #[error("chunk {key} holds {actual} elements, metadata says {expected}")]
    CountMismatch { key: String, expected: u64, actual: u64 },
    #[error("{0}")]
    Inconsistent(String),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepStatus {
    pub step: u64,
    pub ranks_done: BTreeSet<u64>,
    pub ready: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadySteps {
    /// Ascending.
    pub steps: Vec<u64>,
    /// Last step recorded by `simDone`, once the simulation has finished.
    pub finished: Option<u64>,
}

impl ReadySteps {
    pub fn contains(&self, step: u64) -> bool {
        self.steps.binary_search(&step).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldResult {
    pub values: FieldData,
    pub meta: ChunkMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaitOutcome {
    Ready,
    TimedOut,
    /// The simulation finished at `last_step` without producing the step.
    SimFinishedWithoutStep { last_step: u64 },
}

/// A read-only view of one simulation. Fetch methods take `&self` and may be
/// called from several threads; each call checks out its own connection.
pub struct Session {
    sim_id: String,
    info: SimInfo,
    shards: Vec<Endpoint>,
    pool: Mutex<Vec<Vec<StoreClient>>>,
    poll_interval: Duration,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("sim_id", &self.sim_id)
            .field("info", &self.info)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Attaches using only server 0. The shard list comes from the info record.
    pub fn attach(server0: &Endpoint, sim_id: &str) -> Result<Self> {
        let mut conn = StoreClient::connect(server0)?;
        let key = ChunkKey::info(sim_id).to_string();
        let bytes = conn
            .get(key.clone())?
            .ok_or_else(|| AnalysisError::UnknownSimulation(sim_id.to_string()))?;
        let info: SimInfo = serde_json::from_slice(&bytes).map_err(|e| AnalysisError::BadRecord {
            key: key.clone(),
            message: e.to_string(),
        })?;
        let shards = info
            .databases
            .iter()
            .map(|a| a.parse::<Endpoint>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| AnalysisError::BadRecord { key, message: e.to_string() })?;
        if shards.is_empty() {
            return Err(AnalysisError::Inconsistent(format!("{sim_id} has no databases")));
        }
        let mut pool: Vec<Vec<StoreClient>> = shards.iter().map(|_| Vec::new()).collect();
        // Server 0 as listed in the record may be spelled differently from
        // what the caller used; only reuse the connection when they match.
        if &shards[0] == server0 {
            pool[0].push(conn);
        }
        Ok(Session {
            sim_id: sim_id.to_string(),
            info,
            shards,
            pool: Mutex::new(pool),
            poll_interval: DEFAULT_POLL_INTERVAL,
        })
    }

    pub fn attach_config(path: impl AsRef<Path>) -> Result<Self> {
        let config = SimConfig::load(path)?;
        Session::attach(&config.databases[0].endpoint, &config.sim_id)
    }

    pub fn with_poll_interval(mut self, interval: Duration) -> Self {
        self.poll_interval = interval;
        self
    }

    pub fn sim_id(&self) -> &str {
        &self.sim_id
    }

    pub fn num_ranks(&self) -> u64 {
        self.info.num_ranks
    }

    pub fn variables(&self) -> &[String] {
        &self.info.variables
    }

    pub fn shards(&self) -> &[Endpoint] {
        &self.shards
    }

    pub fn info(&self) -> &SimInfo {
        &self.info
    }

    fn with_conn<T>(&self, shard: usize, f: impl FnOnce(&mut StoreClient) -> Result<T, ClientError>) -> Result<T> {
        let pooled = self.pool.lock().unwrap()[shard].pop();
        let mut conn = match pooled {
            Some(conn) => conn,
            None => StoreClient::connect(&self.shards[shard])?,
        };
        let result = f(&mut conn);
        // Only connections that answered cleanly go back in the pool.
        if !matches!(result, Err(ClientError::Connect { .. } | ClientError::Transport { .. })) {
            self.pool.lock().unwrap()[shard].push(conn);
        }
        Ok(result?)
    }

    fn step_markers(&self) -> Result<(BTreeMap<u64, BTreeSet<u64>>, Option<u64>)> {
        let keys = self.with_conn(0, |c| c.list(sim_prefix(&self.sim_id)))?;
        let mut steps: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
        let mut finished_marker = false;
        for key in &keys {
            match ChunkKey::parse(key) {
                Some(ChunkKey::Done { sim_id, step, rank }) if sim_id == self.sim_id && rank < self.info.num_ranks => {
                    steps.entry(step).or_default().insert(rank);
                }
                Some(ChunkKey::SimDone { sim_id }) if sim_id == self.sim_id => finished_marker = true,
                _ => {}
            }
        }
        let finished = if finished_marker { self.finished_step()? } else { None };
        Ok((steps, finished))
    }

    fn finished_step(&self) -> Result<Option<u64>> {
        let key = ChunkKey::sim_done(&self.sim_id).to_string();
        let Some(bytes) = self.with_conn(0, |c| c.get(key.clone()))? else {
            return Ok(None);
        };
        let text = String::from_utf8_lossy(&bytes);
        text.trim()
            .parse()
            .map(Some)
            .map_err(|_| AnalysisError::BadRecord { key, message: format!("{text:?} is not a step number") })
    }

    pub fn timestep_status(&self, step: u64) -> Result<TimestepStatus> {
        let (mut steps, _) = self.step_markers()?;
        let ranks_done = steps.remove(&step).unwrap_or_default();
        Ok(TimestepStatus {
            step,
            ready: ranks_done.len() as u64 == self.info.num_ranks,
            ranks_done,
        })
    }

    pub fn ready_steps(&self) -> Result<ReadySteps> {
        let (steps, finished) = self.step_markers()?;
        let ready = steps
            .into_iter()
            .filter(|(_, ranks)| ranks.len() as u64 == self.info.num_ranks)
            .map(|(step, _)| step)
            .collect();
        Ok(ReadySteps { steps: ready, finished })
    }

    pub fn get_meta(&self, step: u64, rank: u64, variable: &str) -> Result<ChunkMeta> {
        let key = ChunkKey::meta(&self.sim_id, step, rank, variable).to_string();
        let bytes = self
            .with_conn(0, |c| c.get(key.clone()))?
            .ok_or_else(|| AnalysisError::MissingChunk {
                part: MissingPart::Meta,
                key: key.clone(),
            })?;
        serde_json::from_slice(&bytes).map_err(|e| AnalysisError::BadRecord { key, message: e.to_string() })
    }

    /// Fetches and decodes one rank's chunk of `variable`.
    pub fn get_data(&self, step: u64, rank: u64, variable: &str) -> Result<FieldResult> {
        let meta = self.get_meta(step, rank, variable)?;
        let key = ChunkKey::data(&self.sim_id, step, rank, variable, &meta.kind).to_string();
        if meta.shard >= self.shards.len() {
            return Err(AnalysisError::Inconsistent(format!(
                "{key} is on shard {} but the simulation has {} databases",
                meta.shard,
                self.shards.len()
            )));
        }
        let bytes = self
            .with_conn(meta.shard, |c| c.get(key.clone()))?
            .ok_or_else(|| AnalysisError::MissingChunk {
                part: MissingPart::Data,
                key: key.clone(),
            })?;
        let (values, header) = codec::decompress(&bytes).map_err(|source| AnalysisError::Integrity {
            key: key.clone(),
            source,
        })?;
        if header.count != meta.count || values.len() as u64 != meta.count {
            return Err(AnalysisError::CountMismatch {
                key,
                expected: meta.count,
                actual: values.len() as u64,
            });
        }
        if header.dtype.name() != meta.dtype {
            return Err(AnalysisError::Inconsistent(format!(
                "{key} holds {} data, metadata says {}",
                header.dtype, meta.dtype
            )));
        }
        Ok(FieldResult { values, meta })
    }

    /// Concatenates every rank's chunk of `variable`, in rank order.
    pub fn get_variable_all_ranks(&self, step: u64, variable: &str) -> Result<(FieldData, Vec<ChunkMeta>)> {
        let mut metas = Vec::with_capacity(self.info.num_ranks as usize);
        let mut all: Option<FieldData> = None;
        for rank in 0..self.info.num_ranks {
            let part = self.get_data(step, rank, variable)?;
            match &mut all {
                None => all = Some(part.values),
                Some(acc) => {
                    if !acc.extend_from(&part.values) {
                        return Err(AnalysisError::Inconsistent(format!(
                            "{variable} at step {step}: rank {rank} sent {}, earlier ranks sent {}",
                            part.values.dtype(),
                            acc.dtype()
                        )));
                    }
                }
            }
            metas.push(part.meta);
        }
        Ok((all.expect("num_ranks is positive"), metas))
    }

    /// Polls until `step` is ready, the simulation finished before reaching
    /// it, or `timeout` elapses. Always checks at least once.
    pub fn wait_for_step(&self, step: u64, timeout: Duration) -> Result<WaitOutcome> {
        let start = Instant::now();
        loop {
            let ready = self.ready_steps()?;
            if ready.contains(step) {
                return Ok(WaitOutcome::Ready);
            }
            if let Some(last_step) = ready.finished {
                if last_step < step {
                    return Ok(WaitOutcome::SimFinishedWithoutStep { last_step });
                }
            }
            let elapsed = start.elapsed();
            if elapsed >= timeout {
                return Ok(WaitOutcome::TimedOut);
            }
            thread::sleep(self.poll_interval.min(timeout - elapsed));
        }
    }
}
