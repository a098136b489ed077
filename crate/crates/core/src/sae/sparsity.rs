//! TopK-style sparsity operators over batches of dense pre-activations.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::sae::SparseCode;

/// Which operator picks the surviving latents during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityMode {
    /// Top `B·k` entries across the whole batch.
    #[default]
    BatchTopk,
    /// Top `k` entries of every token independently.
    Topk,
}

/// Candidate ordering: larger value first, then row, then column.
/// The index tie-break makes the cut deterministic on equal values.
fn by_strength(a: &(f64, usize, usize), b: &(f64, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.cmp(&b.1))
        .then_with(|| a.2.cmp(&b.2))
}

/// Keeps the `B·k` largest positive entries across the batch and zeroes the rest.
///
/// Exactly `min(B·k, #positive)` entries survive; per-row counts are free to
/// differ. Survivors keep their values.
pub fn batch_topk<R: AsRef<[f64]>>(pre_batch: &[R], k: usize) -> Vec<SparseCode> {
    let budget = pre_batch.len() * k;
    let mut candidates: Vec<(f64, usize, usize)> = pre_batch
        .iter()
        .enumerate()
        .flat_map(|(r, row)| {
            row.as_ref()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(move |(c, v)| (*v, r, c))
        })
        .collect();
    if candidates.len() > budget {
        if budget == 0 {
            candidates.clear();
        } else {
            candidates.select_nth_unstable_by(budget - 1, by_strength);
            candidates.truncate(budget);
        }
    }
    scatter(pre_batch, candidates)
}

/// Keeps the `k` largest positive entries of each row.
pub fn per_token_topk<R: AsRef<[f64]>>(pre_batch: &[R], k: usize) -> Vec<SparseCode> {
    pre_batch
        .iter()
        .map(|row| {
            let row = row.as_ref();
            let mut cand: Vec<(f64, usize, usize)> = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(|(c, v)| (*v, 0, c))
                .collect();
            if cand.len() > k {
                if k == 0 {
                    cand.clear();
                } else {
                    cand.select_nth_unstable_by(k - 1, by_strength);
                    cand.truncate(k);
                }
            }
            let mut active: Vec<(usize, f64)> = cand.into_iter().map(|(v, _, c)| (c, v)).collect();
            active.sort_unstable_by_key(|&(c, _)| c);
            SparseCode::from_sorted_unchecked(row.len(), active)
        })
        .collect()
}

pub fn apply_sparsity<R: AsRef<[f64]>>(mode: SparsityMode, pre_batch: &[R], k: usize) -> Vec<SparseCode> {
    match mode {
        SparsityMode::BatchTopk => batch_topk(pre_batch, k),
        SparsityMode::Topk => per_token_topk(pre_batch, k),
    }
}

fn scatter<R: AsRef<[f64]>>(pre_batch: &[R], survivors: Vec<(f64, usize, usize)>) -> Vec<SparseCode> {
    let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); pre_batch.len()];
    for (v, r, c) in survivors {
        per_row[r].push((c, v));
    }
    per_row
        .into_iter()
        .zip(pre_batch)
        .map(|(mut active, row)| {
            active.sort_unstable_by_key(|&(c, _)| c);
            SparseCode::from_sorted_unchecked(row.as_ref().len(), active)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn keeps_global_top_entries() {
        let codes = batch_topk(&[vec![3.0, 1.0], vec![2.0, 5.0]], 1);
        assert_eq!(codes[0].active(), &[(0, 3.0)]);
        assert_eq!(codes[1].active(), &[(1, 5.0)]);
    }

    #[test]
    fn single_vector_under_budget_is_unchanged() {
        let v = vec![0.0, 2.0, 0.5, 0.0];
        let codes = batch_topk(&[v.clone()], 5);
        assert_eq!(codes[0].to_dense(), v);
    }

    #[test]
    fn all_zero_batch_gives_empty_codes() {
        let codes = batch_topk(&[vec![0.0; 3], vec![0.0; 3]], 2);
        assert!(codes.iter().all(SparseCode::is_empty));
    }

    #[test]
    fn matches_global_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..16).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let codes = batch_topk(&batch, 3);

        let mut all: Vec<(f64, usize, usize)> = Vec::new();
        for (r, row) in batch.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                all.push((*v, r, c));
            }
        }
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut expect = vec![vec![0.0; 16]; 8];
        for &(v, r, c) in &all[..24] {
            expect[r][c] = v;
        }
        for (code, row) in codes.iter().zip(&expect) {
            assert_eq!(&code.to_dense(), row);
        }
    }

    #[test]
    fn per_token_topk_caps_each_row() {
        let codes = per_token_topk(&[vec![3.0, 1.0, 2.0], vec![0.0, 0.0, 4.0]], 2);
        assert_eq!(codes[0].active(), &[(0, 3.0), (2, 2.0)]);
        assert_eq!(codes[1].active(), &[(2, 4.0)]);
    }

    proptest! {
        #[test]
        fn survivor_count_and_monotonicity(
            batch in prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..0.0, 0.0f64..3.0], 6), 1..6),
            k in 1usize..5,
        ) {
            let codes = batch_topk(&batch, k);
            let positives = batch.iter().flatten().filter(|v| **v > 0.0).count();
            let survivors: usize = codes.iter().map(SparseCode::len).sum();
            prop_assert_eq!(survivors, positives.min(batch.len() * k));
            for (code, row) in codes.iter().zip(&batch) {
                for (out, inp) in code.to_dense().iter().zip(row) {
                    prop_assert!(*out <= inp.max(0.0));
                    if *inp <= 0.0 { prop_assert_eq!(*out, 0.0); }
                    if *out != 0.0 { prop_assert_eq!(out, inp); }
                }
            }
        }
    }
}
