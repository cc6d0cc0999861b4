//! Wire service and command-line front end for the factweave store,
//! retrieval index, query trie, accounting and lookup harness.
//!
//! [`engine::Engine`] implements every operation in-process on JSON values;
//! [`http`] exposes the same operations over HTTP with identical response
//! bodies.

pub mod config;
pub mod engine;
pub mod error;
pub mod http;

pub use config::ServiceConfig;
pub use engine::{Engine, Op};
pub use error::ApiError;
