//! File formats and token streaming.
//!
//! All binary formats are little-endian with a 4-byte magic, a `u16`
//! version and a `u8` dtype code. Manifests are JSON lines.

mod binary;
mod checkpoint;
mod corpus;
mod direction_file;
mod embedding;
mod manifest;

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, read_checkpoint, write_checkpoint};
pub use corpus::{stream_batches, BatchStream, CyclingBatches, TokenCorpus, CORPUS_EXTENSION};
pub use direction_file::{direction_from_bytes, direction_to_bytes, read_direction, write_direction};
pub use embedding::EmbeddingSequence;
pub use manifest::{PairManifest, PairRecord};
