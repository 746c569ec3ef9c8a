//! Introspective Monte Carlo tree search over staged machine-learning pipelines.
//!
//! The crate is organised around the search loop:
//!
//! - [`tree`] holds the search tree, UCT selection, hybrid reward blending and
//!   backpropagation.
//! - [`introspection`] and [`valuation`] render the expansion and evaluation
//!   prompts and parse the model replies.
//! - [`experimenter`] plans and executes pipeline configurations, with a
//!   state-saving stage cache and a seeded simulated landscape for offline runs.
//! - [`llm`] is the chat transport: an OpenAI-compatible HTTP client plus
//!   scripted and record/replay oracles.
//! - [`metrics`] computes normalized scores and cross-method aggregates.
//! - [`harness`] drives complete searches, policy ablations, tree dumps and
//!   persisted run state.

pub mod experimenter;
pub mod harness;
pub mod introspection;
pub mod llm;
pub mod metrics;
pub mod pyrepr;
pub mod rng;
pub mod stage;
pub mod tree;
pub mod valuation;

pub use stage::PipelineStage;
