//! Multi-stage text ranking.
//!
//! The engine is organised as a cascade of stages, each consuming the ranked
//! list produced by its predecessor:
//!
//! * [`expansion`]: append predicted queries to every indexable unit before indexing.
//! * [`index`]: inverted index, BM25 first-stage retrieval and RM3 feedback.
//! * [`mono`]: pointwise reranking with relevance probabilities (plus MaxP for long documents).
//! * [`duo`]: pairwise reranking of the head of the list, aggregated into per-candidate scores.
//! * [`fusion`]: reciprocal rank fusion across indexes or pipelines.
//! * [`eval`]: TREC run/qrels I/O and the usual metrics.
//!
//! Neural scoring and query generation live behind the [`scorer`] traits, which
//! are implemented in-process by deterministic stubs and, with the `http`
//! feature, by a JSON-over-HTTP client.

mod batch;
pub mod corpus;
pub mod duo;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod fusion;
pub mod index;
pub mod mono;
pub mod pipeline;
pub mod ranked;
pub mod scorer;

pub use error::{Error, Result};
pub use ranked::RankedList;
