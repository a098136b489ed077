//! Token corpora: directories of embedding files, streamed as shuffled batches.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const CORPUS_EXTENSION: &str = "saed";

/// Every non-padding token of a corpus directory, in file-name order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenCorpus {
    tokens: Matrix,
}

impl TokenCorpus {
    pub fn from_tokens(tokens: Matrix) -> Self {
        Self { tokens }
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a EmbeddingSequence>) -> Result<Self> {
        let mut data = Vec::new();
        let mut d_model = None;
        let mut n = 0;
        for seq in seqs {
            if *d_model.get_or_insert(seq.d_model()) != seq.d_model() {
                return Err(Error::Shape(format!(
                    "sequence width {} differs from corpus width {}",
                    seq.d_model(),
                    d_model.unwrap_or(0)
                )));
            }
            for (_, row) in seq.active_tokens() {
                data.extend_from_slice(row);
                n += 1;
            }
        }
        let d = d_model.ok_or_else(|| Error::Data("corpus holds no sequences".into()))?;
        if n == 0 {
            return Err(Error::Data("corpus holds no non-padding tokens".into()));
        }
        Ok(Self {
            tokens: Matrix::from_vec(n, d, data)?,
        })
    }

    /// Sorted `*.saed` files directly inside `dir`.
    pub fn files(dir: &Path) -> Result<Vec<PathBuf>> {
        let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for entry in rd {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            if p.is_file() && p.extension().is_some_and(|x| x == CORPUS_EXTENSION) {
                files.push(p);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("no .{CORPUS_EXTENSION} files in {}", dir.display())));
        }
        Ok(files)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let seqs = Self::files(dir)?
            .iter()
            .map(|p| EmbeddingSequence::read(p))
            .collect::<Result<Vec<_>>>()?;
        Self::from_sequences(&seqs)
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.rows()
    }

    pub fn d_model(&self) -> usize {
        self.tokens.cols()
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    /// One shuffled pass; the last batch may be short.
    pub fn epoch(&self, batch_tokens: usize, seed: u64) -> Result<BatchStream<'_>> {
        if batch_tokens == 0 {
            return Err(Error::Config("batch_tokens must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..self.n_tokens()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(BatchStream {
            corpus: self,
            order,
            pos: 0,
            batch_tokens,
        })
    }

    /// Endless full batches, reshuffled each epoch with seed `seed + epoch`.
    pub fn cycling(&self, batch_tokens: usize, seed: u64) -> Result<CyclingBatches<'_>> {
        if batch_tokens == 0 {
            return Err(Error::Config("batch_tokens must be at least 1".into()));
        }
        Ok(CyclingBatches {
            corpus: self,
            batch_tokens,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        })
    }

    fn gather(&self, idx: &[usize]) -> Matrix {
        let d = self.d_model();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.tokens.row(i));
        }
        Matrix::from_vec(idx.len(), d, data).expect("rows come from a finite matrix")
    }
}

pub struct BatchStream<'a> {
    corpus: &'a TokenCorpus,
    order: Vec<usize>,
    pos: usize,
    batch_tokens: usize,
}

impl Iterator for BatchStream<'_> {
    type Item = Matrix;

    fn next(&mut self) -> Option<Matrix> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_tokens).min(self.order.len());
        let batch = self.corpus.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Full-size batches only; a batch may span an epoch boundary.
pub struct CyclingBatches<'a> {
    corpus: &'a TokenCorpus,
    batch_tokens: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Iterator for CyclingBatches<'_> {
    type Item = Matrix;

    fn next(&mut self) -> Option<Matrix> {
        let mut idx = Vec::with_capacity(self.batch_tokens);
        while idx.len() < self.batch_tokens {
            if self.pos >= self.order.len() {
                self.order = (0..self.corpus.n_tokens()).collect();
                self.order
                    .shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(self.epoch)));
                self.epoch += 1;
                self.pos = 0;
            }
            let take = (self.batch_tokens - idx.len()).min(self.order.len() - self.pos);
            idx.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        Some(self.corpus.gather(&idx))
    }
}

/// Loads `dir` and returns one shuffled epoch of its tokens.
pub fn stream_batches(dir: &Path, batch_tokens: usize, seed: u64) -> Result<Vec<Matrix>> {
    Ok(TokenCorpus::load(dir)?.epoch(batch_tokens, seed)?.collect())
}
