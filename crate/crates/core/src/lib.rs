//! Collaborative policy learning over an open knowledge graph.
//!
//! Two jointly trained policy-gradient agents: a path reasoner that walks
//! the knowledge graph for a fixed horizon, and a fact extractor that mines
//! candidate edges from a sentence corpus to widen the reasoner's action
//! space. Edges that end up on successful reasoning paths are retained in
//! the graph; the rest are rolled back after each episode.
//!
//! Layout:
//! - [`graph`]: triple store with a base edge set plus an augmentation overlay
//! - [`corpus`]: sentence bags keyed by entity pair, distant supervision
//! - [`diff`]: reverse-mode tape, Adam, gradient checking, checkpoints
//! - [`reasoner`]: the path-walking agent and its policy network
//! - [`extractor`]: piecewise-convolutional sentence encoder and edge policy
//! - [`trainer`]: pre-training, alternating REINFORCE, replay memories
//! - [`eval`]: beam search, Hits@K / MRR, the two-step baseline
//! - [`synth`]: planted-pattern dataset generator
//! - [`config`]: run configuration and manifests

pub mod config;
pub mod corpus;
pub mod diff;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod graph;
pub mod reasoner;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{CplError, Result};
pub use graph::{EntityId, KnowledgeGraph, RelationId, Triple};
