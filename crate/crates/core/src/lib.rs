//! Core engine for interactive data-preparation pipelines.

pub mod dataset;
pub mod hash;
pub mod rng;
pub mod script;
pub mod stats;
pub mod ops;
pub mod codegen;
pub mod cache;
pub mod exec;
pub mod linear;
pub mod recommender;
pub mod synth;
pub mod session;
pub mod versions;

pub use cache::{CachePlan, CacheStore};
pub use codegen::{GenBackend, GenError, Prompt, PromptKind};
pub use dataset::{Column, Dataset, DatasetError};
pub use exec::{execute, ExecContext, ExecResult, ExecStatus};
pub use ops::{catalog, BoundOp, Family, OpError, PhysicalOperation};
pub use recommender::{QNetwork, RecKind, Recommendation, RecommenderError};
pub use rng::SeededRng;
pub use script::{emit, parse, PipelineGraph, PipelineNode, ScriptError, ScriptSource};
pub use session::{ServiceConfig, SessionError, SessionManager};
pub use versions::{diff, EditScript, Version, VersionStore};
