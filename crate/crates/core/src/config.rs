//! Simulation configuration file.
//!
//! ```json
//! { "sim-id": "hacc-run-1",
//!   "libraries": "<ignored>",
//!   "providers": [ { "name": "yokan_provider", "provider_id": 124 } ],
//!   "databases": [ { "address": "192.168.81.72:46593", "protocol": "ofi+tcp" } ],
//!   "data": [ { "name": "id", "compressor": "BLOSC" },
//!             { "name": "x", "compressor": "SZ3", "mode": "abs", "value": 0.003 } ] }
//! ```
//!
//! `libraries` and `providers` are accepted and ignored. Any other unknown
//! top-level field is ignored with a warning.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use log::warn;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::codec::{Compression, CompressionSpec};
use crate::keys::valid_segment;
use crate::net::Endpoint;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config field {field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Database {
    pub endpoint: Endpoint,
    /// Transport string as written, e.g. `ofi+tcp`. Only TCP is used.
    pub protocol: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub sim_id: String,
    pub databases: Vec<Database>,
    pub data: Vec<CompressionSpec>,
}

const KNOWN_FIELDS: [&str; 5] = ["sim-id", "libraries", "providers", "databases", "data"];

impl SimConfig {
    pub fn new(sim_id: impl Into<String>, endpoints: impl IntoIterator<Item = Endpoint>, data: Vec<CompressionSpec>) -> Self {
        SimConfig {
            sim_id: sim_id.into(),
            databases: endpoints
                .into_iter()
                .map(|endpoint| Database {
                    endpoint,
                    protocol: "tcp".into(),
                })
                .collect(),
            data,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        SimConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        SimConfig::from_json(&serde_json::from_str(text)?)
    }

    pub fn from_json(value: &Value) -> Result<Self, ConfigError> {
        let obj = value.as_object().ok_or_else(|| invalid("<root>", "expected a JSON object"))?;
        for key in obj.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str())) {
            warn!("ignoring unknown config field {key:?}");
        }

        let sim_id = match obj.get("sim-id") {
            Some(Value::String(s)) if valid_segment(s) => s.clone(),
            Some(Value::String(s)) => return Err(invalid("sim-id", format!("{s:?} must be non-empty and contain no '/'"))),
            Some(_) => return Err(invalid("sim-id", "expected a string")),
            None => return Err(invalid("sim-id", "missing")),
        };

        let dbs = obj
            .get("databases")
            .ok_or_else(|| invalid("databases", "missing"))?
            .as_array()
            .ok_or_else(|| invalid("databases", "expected a list"))?;
        if dbs.is_empty() {
            return Err(invalid("databases", "at least one database is required"));
        }
        let databases = dbs
            .iter()
            .enumerate()
            .map(|(i, db)| {
                let field = |name: &str| format!("databases[{i}].{name}");
                let address = db
                    .get("address")
                    .and_then(Value::as_str)
                    .ok_or_else(|| invalid(field("address"), "expected a host:port string"))?;
                let endpoint = address.parse::<Endpoint>().map_err(|e| invalid(field("address"), e.to_string()))?;
                let protocol = match db.get("protocol") {
                    None => "tcp".to_string(),
                    Some(Value::String(p)) => p.clone(),
                    Some(_) => return Err(invalid(field("protocol"), "expected a string")),
                };
                if !protocol.split('+').any(|t| t.eq_ignore_ascii_case("tcp")) {
                    warn!("{}: transport {protocol:?} is not available, using TCP", field("protocol"));
                }
                Ok(Database { endpoint, protocol })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let data = match obj.get("data") {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    CompressionSpec::from_json(item).map_err(|e| {
                        let e = e.within(&format!("data[{i}]"));
                        invalid(e.field, e.message)
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
            Some(_) => return Err(invalid("data", "expected a list")),
        };
        let mut seen = HashSet::new();
        for (i, spec) in data.iter().enumerate() {
            if !seen.insert(spec.name.as_str()) {
                return Err(invalid(format!("data[{i}].name"), format!("duplicate variable {:?}", spec.name)));
            }
        }

        Ok(SimConfig { sim_id, databases, data })
    }

    pub fn to_json(&self) -> Value {
        let databases: Vec<Value> = self
            .databases
            .iter()
            .map(|db| json!({ "address": db.endpoint.to_string(), "protocol": db.protocol }))
            .collect();
        let mut obj = Map::new();
        obj.insert("sim-id".into(), self.sim_id.clone().into());
        obj.insert("databases".into(), databases.into());
        obj.insert("data".into(), self.data.iter().map(CompressionSpec::to_json).collect());
        Value::Object(obj)
    }

    pub fn endpoints(&self) -> Vec<Endpoint> {
        self.databases.iter().map(|db| db.endpoint.clone()).collect()
    }

    pub fn spec_for(&self, variable: &str) -> Option<&Compression> {
        self.data.iter().find(|s| s.name == variable).map(|s| &s.compression)
    }
}
