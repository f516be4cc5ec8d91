//! Grounded retrieval engine.
//!
//! Documents are chunked into overlapping token windows, indexed in a hybrid
//! BM25 + HNSW store, retrieved with rank fusion and reranking, answered
//! through a sectioned prompt, and checked sentence by sentence against the
//! cited context before an answer is released.

pub mod align;
pub mod eval;
pub mod generation;
pub mod index;
pub mod ingest;
pub mod providers;
pub mod retrieval;
pub mod verify;

mod util;

pub use util::sha256_hex;
