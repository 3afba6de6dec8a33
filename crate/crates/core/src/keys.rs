//! Keyspace shared by the simulation and analysis sides, plus the JSON
//! records stored under the metadata and info keys.
//!
//! ```text
//! <sim>/<step>/<rank>/<variable>/<kind>   data chunk (kind is normally "data")
//! <sim>/<step>/<rank>/<variable>/meta     ChunkMeta JSON
//! <sim>/<step>/done/<rank>                per-rank step marker, value "1"
//! <sim>/info                              SimInfo JSON
//! <sim>/done                              last step number, decimal text
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ChunkKey {
    Chunk {
        sim_id: String,
        step: u64,
        rank: u64,
        variable: String,
        kind: String,
    },
    Done {
        sim_id: String,
        step: u64,
        rank: u64,
    },
    Info {
        sim_id: String,
    },
    SimDone {
        sim_id: String,
    },
}

pub const META_KIND: &str = "meta";
pub const DATA_KIND: &str = "data";

impl ChunkKey {
    pub fn data(sim_id: &str, step: u64, rank: u64, variable: &str, kind: &str) -> Self {
        ChunkKey::Chunk {
            sim_id: sim_id.into(),
            step,
            rank,
            variable: variable.into(),
            kind: kind.into(),
        }
    }

    pub fn meta(sim_id: &str, step: u64, rank: u64, variable: &str) -> Self {
        ChunkKey::data(sim_id, step, rank, variable, META_KIND)
    }

    pub fn done(sim_id: &str, step: u64, rank: u64) -> Self {
        ChunkKey::Done {
            sim_id: sim_id.into(),
            step,
            rank,
        }
    }

    pub fn info(sim_id: &str) -> Self {
        ChunkKey::Info { sim_id: sim_id.into() }
    }

    pub fn sim_done(sim_id: &str) -> Self {
        ChunkKey::SimDone { sim_id: sim_id.into() }
    }

    /// Inverse of `Display`. Segments must be non-empty and integers must be
    /// canonical decimal (no sign, no leading zeros), so `parse(render(k)) == k`.
    pub fn parse(key: &str) -> Option<ChunkKey> {
        let parts: Vec<&str> = key.split('/').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return None;
        }
        match parts.as_slice() {
            [sim, "info"] => Some(ChunkKey::info(sim)),
            [sim, "done"] => Some(ChunkKey::sim_done(sim)),
            [sim, step, "done", rank] => Some(ChunkKey::done(sim, parse_uint(step)?, parse_uint(rank)?)),
            [sim, step, rank, variable, kind] => Some(ChunkKey::data(
                sim,
                parse_uint(step)?,
                parse_uint(rank)?,
                variable,
                kind,
            )),
            _ => None,
        }
    }
}

fn parse_uint(s: &str) -> Option<u64> {
    if !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

impl fmt::Display for ChunkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChunkKey::Chunk {
                sim_id,
                step,
                rank,
                variable,
                kind,
            } => write!(f, "{sim_id}/{step}/{rank}/{variable}/{kind}"),
            ChunkKey::Done { sim_id, step, rank } => write!(f, "{sim_id}/{step}/done/{rank}"),
            ChunkKey::Info { sim_id } => write!(f, "{sim_id}/info"),
            ChunkKey::SimDone { sim_id } => write!(f, "{sim_id}/done"),
        }
    }
}

/// Prefix under which every key of a simulation lives.
pub fn sim_prefix(sim_id: &str) -> String {
    format!("{sim_id}/")
}

/// True if `segment` can be used as a sim id, variable or kind.
pub fn valid_segment(segment: &str) -> bool {
    !segment.is_empty() && !segment.contains('/') && !segment.contains('\n')
}

/// Metadata stored alongside each data chunk, always on server 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkMeta {
    pub dtype: String,
    pub count: u64,
    pub compressor: String,
    pub mode: Option<String>,
    /// Absolute bound enforced on this chunk; 0 for exact codecs.
    pub epsilon: f64,
    pub original_bytes: u64,
    pub stored_bytes: u64,
    pub shard: usize,
    /// Kind slot of the data key.
    #[serde(default = "default_kind")]
    pub kind: String,
}

fn default_kind() -> String {
    DATA_KIND.into()
}

/// Per-simulation record written by `init` to server 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimInfo {
    pub num_ranks: u64,
    pub variables: Vec<String>,
    /// Database endpoints in shard order.
    pub databases: Vec<String>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_canonical_forms() {
        assert_eq!(ChunkKey::data("sim1", 0, 3, "x", "data").to_string(), "sim1/0/3/x/data");
        assert_eq!(ChunkKey::meta("sim1", 12, 0, "x").to_string(), "sim1/12/0/x/meta");
        assert_eq!(ChunkKey::done("sim1", 2, 7).to_string(), "sim1/2/done/7");
        assert_eq!(ChunkKey::info("sim1").to_string(), "sim1/info");
        assert_eq!(ChunkKey::sim_done("sim1").to_string(), "sim1/done");
    }

    #[test]
    fn parse_rejects_non_canonical() {
        for bad in ["sim/01/done/1", "sim/1/done/-1", "sim//info", "sim/1/2/x", "sim/x/0/v/data", "a/b/c"] {
            assert_eq!(ChunkKey::parse(bad), None, "{bad}");
        }
    }

    #[test]
    fn meta_json_field_names() {
        let meta = ChunkMeta {
            dtype: "f32".into(),
            count: 1000,
            compressor: "SZ3".into(),
            mode: Some("abs".into()),
            epsilon: 0.003,
            original_bytes: 4000,
            stored_bytes: 1200,
            shard: 0,
            kind: "data".into(),
        };
        let v = serde_json::to_value(&meta).unwrap();
        assert_eq!(v["epsilon"], 0.003);
        assert_eq!(v["shard"], 0);
        let back: ChunkMeta = serde_json::from_value(v).unwrap();
        assert_eq!(back, meta);
    }

    proptest! {
        #[test]
        fn parse_inverts_render(sim in "[a-z0-9_-]{1,8}", var in "[a-z]{1,6}", step in any::<u64>(), rank in any::<u64>(), which in 0..5u8) {
            let key = match which {
                0 => ChunkKey::data(&sim, step, rank, &var, "data"),
                1 => ChunkKey::meta(&sim, step, rank, &var),
                2 => ChunkKey::done(&sim, step, rank),
                3 => ChunkKey::info(&sim),
                _ => ChunkKey::sim_done(&sim),
            };
            prop_assert_eq!(ChunkKey::parse(&key.to_string()), Some(key));
        }
    }
}
