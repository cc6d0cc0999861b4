//! Non-neural machinery for language models that look facts up in an
//! external triplet database instead of memorizing them.
//!
//! - [`markup`]: lookup-call syntax, token categories, loss mask
//! - [`store`]: the triplet database, deletion-based unlearning, snapshots
//! - [`retrieval`]: embedding cosine retrieval with a rejection threshold
//! - [`trie`]: prefix tree for constrained lookup-call generation
//! - [`accounting`]: NLL, perplexities, offloading ranker, corrector filter
//! - [`harness`]: interleaved generate/lookup inference loop
//! - [`corpus`]: JSON-lines corpus records

pub mod accounting;
pub mod corpus;
pub mod harness;
pub mod markup;
pub mod retrieval;
pub mod store;
pub mod trie;

pub use markup::{AnnotatedDocument, Format, LookupCall, Token, TokenCategory, Triplet};
pub use store::{Selector, StoreKey, StoreStats, TripletStore};
