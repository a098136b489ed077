use crate::error::{Error, Result};

/// Non-negative sparse latent vector with explicit support.
///
/// `active` is sorted by index with strictly positive, finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    dim: usize,
    active: Vec<(usize, f64)>,
}

impl SparseCode {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            active: Vec::new(),
        }
    }

    pub fn new(dim: usize, active: Vec<(usize, f64)>) -> Result<Self> {
        for (pos, &(idx, val)) in active.iter().enumerate() {
            if idx >= dim {
                return Err(Error::Shape(format!("code index {idx} out of range for dim {dim}")));
            }
            if pos > 0 && active[pos - 1].0 >= idx {
                return Err(Error::Data(format!("code indices not strictly increasing at {idx}")));
            }
            if !val.is_finite() {
                return Err(Error::NonFinite {
                    index: idx,
                    context: "sparse code".into(),
                });
            }
            if val <= 0.0 {
                return Err(Error::Data(format!("code value {val} at {idx} is not positive")));
            }
        }
        Ok(Self { dim, active })
    }

    /// Keeps the strictly positive entries of a dense vector.
    pub fn from_dense(dense: &[f64]) -> Self {
        Self {
            dim: dense.len(),
            active: dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub(crate) fn from_sorted_unchecked(dim: usize, active: Vec<(usize, f64)>) -> Self {
        debug_assert!(active.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(active.iter().all(|&(i, v)| i < dim && v > 0.0));
        Self { dim, active }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn active(&self) -> &[(usize, f64)] {
        &self.active
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().map(|&(i, _)| i)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.active
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |pos| self.active[pos].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.active {
            out[i] = v;
        }
        out
    }
}
