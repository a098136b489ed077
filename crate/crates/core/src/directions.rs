//! Sparse edit directions from source/target prompt pairs.
//!
//! A prompt is summarised by the entry-wise max over its token codes. For a
//! pair, `R = tgt / (src + ε)` is normalised by its maximum and every latent
//! with `R/max(R) > ρ` forms the index set `M`. The direction copies the
//! target's pooled values on `M` and is zero elsewhere. Directions from many
//! pairs are merged into the top right-singular vector of their stack.
//!
//! Single-pair directions keep raw target magnitudes; aggregated directions
//! are unit-norm, so their strength lives entirely in the edit scale.

use serde::{Deserialize, Serialize};

use crate::dataio::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::linalg::{norm, top_singular_vector_of, SparseRows};
use crate::sae::{SaeModel, SparseCode};

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_RHO: f64 = 0.6;
/// Aggregated entries at or below this magnitude are numerical dust.
pub const SUPPORT_DUST: f64 = 1e-12;

const AGGREGATE_MAX_ITERS: usize = 20_000;
const AGGREGATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEncoding {
    pub prompt_id: String,
    pub codes: Vec<SparseCode>,
    /// Entry-wise max over `codes`.
    pub pooled: Vec<f64>,
}

impl PromptEncoding {
    pub fn dim(&self) -> usize {
        self.pooled.len()
    }
}

/// Max-pools token codes into one prompt-level vector.
pub fn pool_prompt(codes: Vec<SparseCode>) -> Result<PromptEncoding> {
    pool_prompt_with_id(String::new(), codes)
}

pub fn pool_prompt_with_id(prompt_id: impl Into<String>, codes: Vec<SparseCode>) -> Result<PromptEncoding> {
    let dim = codes
        .first()
        .ok_or_else(|| Error::Data("cannot pool a prompt with no tokens".into()))?
        .dim();
    if codes.iter().any(|c| c.dim() != dim) {
        return Err(Error::Shape("token codes have different widths".into()));
    }
    let mut pooled = vec![0.0f64; dim];
    for code in &codes {
        for &(i, v) in code.active() {
            if v > pooled[i] {
                pooled[i] = v;
            }
        }
    }
    Ok(PromptEncoding {
        prompt_id: prompt_id.into(),
        codes,
        pooled,
    })
}

/// Encodes every non-padding token with the model's threshold and pools.
pub fn encode_prompt(model: &SaeModel, seq: &EmbeddingSequence, prompt_id: &str) -> Result<PromptEncoding> {
    let codes = seq
        .active_tokens()
        .map(|(_, e)| model.encode(e, None))
        .collect::<Result<Vec<_>>>()?;
    if codes.is_empty() {
        return Err(Error::Data(format!("prompt {prompt_id:?} has no non-padding tokens")));
    }
    pool_prompt_with_id(prompt_id, codes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioResult {
    pub ratio: Vec<f64>,
    /// `ratio / max(ratio)`, in `[0, 1]`.
    pub r_norm: Vec<f64>,
    pub epsilon: f64,
}

impl RatioResult {
    pub fn max_ratio(&self) -> f64 {
        self.ratio.iter().copied().fold(0.0, f64::max)
    }
}

/// `R[i] = tgt[i] / (src[i] + ε)` and its max-normalised form.
pub fn entry_ratio(src: &PromptEncoding, tgt: &PromptEncoding, epsilon: f64) -> Result<RatioResult> {
    if src.dim() != tgt.dim() {
        return Err(Error::Shape(format!(
            "source width {} vs target width {}",
            src.dim(),
            tgt.dim()
        )));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let ratio: Vec<f64> = tgt
        .pooled
        .iter()
        .zip(&src.pooled)
        .map(|(t, s)| t / (s + epsilon))
        .collect();
    let max = ratio.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::Degenerate(
            "target prompt has no active latent; the ratio vector is zero".into(),
        ));
    }
    let r_norm = ratio.iter().map(|r| r / max).collect();
    Ok(RatioResult {
        ratio,
        r_norm,
        epsilon,
    })
}

/// `M = { i | r_norm[i] > ρ }`.
pub fn select_indices(r: &RatioResult, rho: f64) -> Result<Vec<usize>> {
    check_rho(rho)?;
    let m: Vec<usize> = r
        .r_norm
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > rho)
        .map(|(i, _)| i)
        .collect();
    if m.is_empty() {
        return Err(Error::Degenerate("ratio vector has no entry above the threshold".into()));
    }
    Ok(m)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must lie in [0, 1), got {rho}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionMethod {
    SinglePair,
    SvdAggregate,
}

/// Per-pair diagnostics. A `ratio_max` close to `self_ratio_max` means the
/// target barely differs from the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub pair_id: String,
    pub ratio_max: f64,
    /// `max_i tgt_i / (tgt_i + ε)`: what a pair with no edit would score.
    pub self_ratio_max: f64,
    pub index_set_size: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub pairs: Vec<PairStats>,
    /// Top singular value of the stacked directions, for aggregates.
    pub singular_value: Option<f64>,
}

/// Sparse latent-space edit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EditDirection {
    dim: usize,
    entries: Vec<(usize, f64)>,
    index_set: Vec<usize>,
    rho: f64,
    epsilon: f64,
    method: DirectionMethod,
    provenance: Provenance,
}

impl EditDirection {
    /// Validates and assembles a direction. `entries` must be sorted by index with nonzero values.
    pub fn new(
        dim: usize,
        entries: Vec<(usize, f64)>,
        index_set: Vec<usize>,
        rho: f64,
        epsilon: f64,
        method: DirectionMethod,
        provenance: Provenance,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Degenerate("edit direction has empty support".into()));
        }
        for (pos, &(i, v)) in entries.iter().enumerate() {
            if i >= dim {
                return Err(Error::Shape(format!("direction index {i} out of range for dim {dim}")));
            }
            if pos > 0 && entries[pos - 1].0 >= i {
                return Err(Error::Data(format!("direction indices not strictly increasing at {i}")));
            }
            if !v.is_finite() || v == 0.0 {
                return Err(Error::Data(format!("direction value {v} at {i} must be finite and nonzero")));
            }
        }
        if index_set.windows(2).any(|w| w[0] >= w[1]) || index_set.iter().any(|&i| i >= dim) {
            return Err(Error::Data("index set must be strictly increasing and in range".into()));
        }
        if method == DirectionMethod::SinglePair {
            let mut it = index_set.iter().peekable();
            for &(i, _) in &entries {
                while it.peek().is_some_and(|&&m| m < i) {
                    it.next();
                }
                if it.peek() != Some(&&i) {
                    return Err(Error::Data(format!("support index {i} is not in the index set")));
                }
            }
        }
        Ok(Self {
            dim,
            entries,
            index_set,
            rho,
            epsilon,
            method,
            provenance,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(i, _)| i)
    }

    /// `M` for single-pair directions. For aggregates, the entries whose
    /// magnitude relative to the largest exceeds `rho`; the direction itself
    /// keeps its full support.
    pub fn index_set(&self) -> &[usize] {
        &self.index_set
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn method(&self) -> DirectionMethod {
        self.method
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// `d[i] = tgt.pooled[i]` on `M`, zero elsewhere.
pub fn build_direction(tgt: &PromptEncoding, m: &[usize], rho: f64) -> Result<EditDirection> {
    build_direction_inner(tgt, m, rho, DEFAULT_EPSILON, Provenance::default())
}

fn build_direction_inner(
    tgt: &PromptEncoding,
    m: &[usize],
    rho: f64,
    epsilon: f64,
    provenance: Provenance,
) -> Result<EditDirection> {
    if m.is_empty() {
        return Err(Error::Usage("index set is empty".into()));
    }
    let mut index_set = m.to_vec();
    index_set.sort_unstable();
    index_set.dedup();
    if let Some(&bad) = index_set.iter().find(|&&i| i >= tgt.dim()) {
        return Err(Error::Shape(format!("index {bad} out of range for dim {}", tgt.dim())));
    }
    let entries: Vec<(usize, f64)> = index_set
        .iter()
        .map(|&i| (i, tgt.pooled[i]))
        .filter(|&(_, v)| v != 0.0)
        .collect();
    if entries.is_empty() {
        return Err(Error::Degenerate(
            "every selected latent is inactive in the target prompt".into(),
        ));
    }
    EditDirection::new(
        tgt.dim(),
        entries,
        index_set,
        rho,
        epsilon,
        DirectionMethod::SinglePair,
        provenance,
    )
}

/// Knobs for single-pair extraction, including manual curation of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub epsilon: f64,
    pub rho: f64,
    /// Latents forced into `M`.
    pub include: Vec<usize>,
    /// Latents removed from `M` (applied after `include`).
    pub exclude: Vec<usize>,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            rho: DEFAULT_RHO,
            include: Vec::new(),
            exclude: Vec::new(),
        }
    }
}

/// Pool → ratio → select → build, from raw token codes.
pub fn extract_direction(
    src_codes: Vec<SparseCode>,
    tgt_codes: Vec<SparseCode>,
    epsilon: f64,
    rho: f64,
) -> Result<EditDirection> {
    let src = pool_prompt(src_codes)?;
    let tgt = pool_prompt(tgt_codes)?;
    extract_from_encodings(
        &src,
        &tgt,
        &ExtractOptions {
            epsilon,
            rho,
            ..ExtractOptions::default()
        },
        "",
    )
}

/// Single-pair extraction from pooled encodings, with provenance.
pub fn extract_from_encodings(
    src: &PromptEncoding,
    tgt: &PromptEncoding,
    opts: &ExtractOptions,
    pair_id: &str,
) -> Result<EditDirection> {
    let ratio = entry_ratio(src, tgt, opts.epsilon)?;
    let mut m = select_indices(&ratio, opts.rho)?;
    if !opts.include.is_empty() || !opts.exclude.is_empty() {
        m.extend(opts.include.iter().copied());
        m.sort_unstable();
        m.dedup();
        m.retain(|i| !opts.exclude.contains(i));
    }
    let self_ratio_max = tgt
        .pooled
        .iter()
        .map(|t| t / (t + opts.epsilon))
        .fold(0.0, f64::max);
    let provenance = Provenance {
        pairs: vec![PairStats {
            pair_id: pair_id.to_string(),
            ratio_max: ratio.max_ratio(),
            self_ratio_max,
            index_set_size: m.len(),
        }],
        singular_value: None,
    };
    build_direction_inner(tgt, &m, opts.rho, opts.epsilon, provenance)
}

/// Unit top right-singular vector of the stacked directions.
///
/// The index set applies the `rho` rule of the inputs to `|v| / max|v|`.
pub fn aggregate_directions(dirs: &[EditDirection], seed: u64) -> Result<EditDirection> {
    if dirs.len() < 2 {
        return Err(Error::Usage(format!(
            "aggregation needs at least 2 directions, got {}",
            dirs.len()
        )));
    }
    let dim = dirs[0].dim();
    if dirs.iter().any(|d| d.dim() != dim) {
        return Err(Error::Shape("directions have different widths".into()));
    }
    let rows: Vec<Vec<(usize, f64)>> = dirs.iter().map(|d| d.entries.clone()).collect();
    let top = top_singular_vector_of(
        &SparseRows { dim, rows: &rows },
        seed,
        AGGREGATE_MAX_ITERS,
        AGGREGATE_TOL,
    )?;
    let mut entries: Vec<(usize, f64)> = top
        .vector
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > SUPPORT_DUST)
        .map(|(i, v)| (i, *v))
        .collect();
    let n = norm(&entries.iter().map(|&(_, v)| v).collect::<Vec<_>>());
    entries.iter_mut().for_each(|(_, v)| *v /= n);
    let rho = dirs[0].rho;
    let peak = entries.iter().map(|&(_, v)| v.abs()).fold(0.0, f64::max);
    let index_set = entries
        .iter()
        .filter(|&&(_, v)| v.abs() / peak > rho)
        .map(|&(i, _)| i)
        .collect();
    let provenance = Provenance {
        pairs: dirs.iter().flat_map(|d| d.provenance.pairs.clone()).collect(),
        singular_value: Some(top.value),
    };
    EditDirection::new(
        dim,
        entries,
        index_set,
        rho,
        dirs[0].epsilon,
        DirectionMethod::SvdAggregate,
        provenance,
    )
}
