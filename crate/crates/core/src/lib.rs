pub mod analysis;
pub mod codec;
pub mod config;
pub mod dtype;
pub mod image;
pub mod keys;
pub mod net;
pub mod report;
pub mod sim;
pub mod store;
pub mod synth;
pub mod wire;

pub use analysis::{AnalysisError, ReadySteps, Session, WaitOutcome};
pub use codec::{BoundMode, CodecError, Compression, CompressionSpec, Container};
pub use config::{ConfigError, SimConfig};
pub use dtype::{Dtype, FieldData, FieldRef};
pub use image::{ProjectionImage, ssim};
pub use keys::{ChunkKey, ChunkMeta, SimInfo};
pub use net::{ClientError, Endpoint, StoreClient};
pub use report::BenchReport;
pub use sim::{SimClient, SimError};
pub use store::{RunningServer, Server, ServerConfig, Store};
pub use synth::{Axis, Particles, SyntheticCorpusSpec};
pub use wire::{Opcode, Request, Response, Status};
