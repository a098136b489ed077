//! Token-embedding sequence files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       4           magic "SAED"
//! 4       2           version = 1
//! 6       1           dtype   = 1 (f32)
//! 7       4           n_tokens
//! 11      4           d_model
//! 15      4·n·d       embeddings, row-major f32
//! ..      n           padding mask, one byte per token (0 = token, 1 = padding)
//! ..      per token   u32 byte length + UTF-8 label
//! ```

use std::path::Path;

use crate::dataio::binary::{checked_u32, read_file, write_file, ByteReader, ByteWriter, DTYPE_F32};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 4] = b"SAED";
const VERSION: u16 = 1;

/// Ordered token embeddings of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    /// Source prompt, when known. Not stored in the embedding file.
    pub prompt: Option<String>,
    pub labels: Vec<String>,
    /// `n_tokens × d_model`
    pub embeddings: Matrix,
    /// `true` marks a padding position.
    pub padding: Vec<bool>,
}

impl EmbeddingSequence {
    pub fn new(embeddings: Matrix, padding: Vec<bool>, labels: Vec<String>) -> Result<Self> {
        let n = embeddings.rows();
        if padding.len() != n || labels.len() != n {
            return Err(Error::Shape(format!(
                "{n} tokens but {} mask entries and {} labels",
                padding.len(),
                labels.len()
            )));
        }
        Ok(Self {
            prompt: None,
            labels,
            embeddings,
            padding,
        })
    }

    /// Unpadded sequence with labels `t0, t1, ...`.
    pub fn unpadded(embeddings: Matrix) -> Self {
        let n = embeddings.rows();
        Self {
            prompt: None,
            labels: (0..n).map(|i| format!("t{i}")).collect(),
            embeddings,
            padding: vec![false; n],
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn d_model(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    /// Non-padding token rows with their positions.
    pub fn active_tokens(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.embeddings
            .iter_rows()
            .enumerate()
            .filter(|(i, _)| !self.padding[*i])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u8(DTYPE_F32);
        w.u32(checked_u32(self.n_tokens(), "n_tokens")?);
        w.u32(checked_u32(self.d_model(), "d_model")?);
        for (i, &v) in self.embeddings.as_slice().iter().enumerate() {
            let x = v as f32;
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    index: i,
                    context: "embedding value (as f32)".into(),
                });
            }
            w.bytes(&x.to_le_bytes());
        }
        for &p in &self.padding {
            w.u8(u8::from(p));
        }
        for label in &self.labels {
            w.string(label)?;
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        r.dtype(DTYPE_F32)?;
        let n = r.u32("n_tokens")? as usize;
        let d = r.u32("d_model")? as usize;
        let values = r.f32_vec(n.saturating_mul(d), "embedding payload")?;
        let mask_at = r.offset();
        let mask = r.take(n, "padding mask")?;
        let mut padding = Vec::with_capacity(n);
        for (i, &b) in mask.iter().enumerate() {
            match b {
                0 => padding.push(false),
                1 => padding.push(true),
                other => {
                    return Err(r.error_at(mask_at + i as u64, format!("mask byte {other} is not 0 or 1")))
                }
            }
        }
        let mut labels = Vec::with_capacity(n.min(r.remaining() / 4));
        for _ in 0..n {
            labels.push(r.string("label")?);
        }
        r.finish()?;
        let embeddings = Matrix::from_vec(n, d, values)?;
        Self::new(embeddings, padding, labels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}
