//! File formats, HTTP and cassette backends, persistent stores, engine
//! assembly, the benchmark runner and the command line for `medaide-core`.

pub mod bench;
pub mod cassette;
pub mod cli;
pub mod config;
pub mod engine;
pub mod formats;
pub mod http;
pub mod stores;

pub use config::{EngineConfig, Overrides, Profile};
pub use engine::{Engine, EngineError};
