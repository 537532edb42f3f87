//! Knowledge-graph completion by retrieving and reading text.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for callers that do not care.

pub mod binio;
pub mod bm25;
pub mod corpus;
pub mod dense;
pub mod encoder;
pub mod eval;
pub mod kg;
pub mod pipeline;
pub mod reader;
pub mod scalar;
pub mod text;

pub use kg::{KgDataset, Split, Triple, TripleQuery};
pub use pipeline::{PipelineError, RunConfig, Stage};
pub use scalar::Scalar;

pub type Bm25Index32 = bm25::Bm25Index<f32>;
pub type Bm25Index64 = bm25::Bm25Index<f64>;
pub type DualEncoder32 = encoder::DualEncoder<f32>;
pub type DualEncoder64 = encoder::DualEncoder<f64>;
pub type EmbeddingStore32 = dense::EmbeddingStore<f32>;
pub type EmbeddingStore64 = dense::EmbeddingStore<f64>;
pub type KgeRanker32 = eval::KgeRanker<f32>;
pub type KgeRanker64 = eval::KgeRanker<f64>;
pub type RankedPrediction32 = reader::RankedPrediction<f32>;
pub type RankedPrediction64 = reader::RankedPrediction<f64>;
