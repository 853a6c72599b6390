//! Core of the MedAide orchestration engine.
//!
//! Everything in this crate is pure computation over owned data: it needs an
//! allocator but no operating system. File formats, HTTP transports, cassettes
//! and the command line live in the `medaide` companion crate, which drives
//! the types here through the [`gateway::ChatBackend`] and
//! [`gateway::Embedder`] traits.
//!
//! The pipeline has three phases:
//!
//! 1. query extraction ([`grammar`], [`standardizer`]): tokenize, chart-parse,
//!    rewrite to a fixed point, extract clinical elements, assemble guideline
//!    context and build the refined query;
//! 2. intent prototype matching ([`intent`]): cosine similarity against one
//!    prototype per intent, softmax, threshold activation;
//! 3. rotation collaboration ([`protocol`]): one main contact per activated
//!    stage, polling of every other agent, integration and final synthesis,
//!    with knowledge from [`retrieval`].
//!
//! [`metrics`] holds the text and intent metrics used by the benchmark runner.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod gateway;
pub mod grammar;
pub mod intent;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod retrieval;
pub mod standardizer;
pub mod text;

pub use gateway::{ChatBackend, ChatReply, ChatRequest, Embedder, EmbeddingVector, GatewayError};
pub use pipeline::{Consultation, Pipeline, PipelineConfig, PipelineError, Recognizer};
