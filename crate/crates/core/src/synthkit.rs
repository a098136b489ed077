//! Synthetic ground truth: a planted sparse dictionary, corpora drawn from it,
//! prompt pairs that differ by one attribute feature, and recovery scoring.
//!
//! Embeddings are `A·z + noise` where `A` has unit-norm columns (stored here
//! as rows of `dictionary`), `z` is `k_true`-sparse with Exp(1) values, and
//! noise is i.i.d. Gaussian with standard deviation `sigma`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{EmbeddingSequence, PairManifest, PairRecord};
use crate::directions::EditDirection;
use crate::error::{Error, Result};
use crate::linalg::{cosine, norm, Matrix};
use crate::sae::SaeModel;

const PAIR_SALT: u64 = 0x7061_6972_7300_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub d_model: usize,
    pub n_features: usize,
    pub k_true: usize,
    pub n_prompts: usize,
    pub tokens_per_prompt: usize,
    /// Trailing padding rows appended to every prompt.
    pub padding_tokens: usize,
    pub attribute_ids: Vec<usize>,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_features: 128,
            k_true: 4,
            n_prompts: 2500,
            tokens_per_prompt: 20,
            padding_tokens: 0,
            attribute_ids: vec![0],
            sigma: 0.01,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_features == 0 {
            return Err(Error::Config("d_model and n_features must be positive".into()));
        }
        if self.k_true == 0 || self.k_true > self.n_features {
            return Err(Error::Config(format!(
                "k_true must lie in 1..={}, got {}",
                self.n_features, self.k_true
            )));
        }
        if self.tokens_per_prompt == 0 {
            return Err(Error::Config("tokens_per_prompt must be positive".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if let Some(&a) = self.attribute_ids.iter().find(|&&a| a >= self.n_features) {
            return Err(Error::Config(format!("attribute id {a} >= n_features {}", self.n_features)));
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.n_prompts * self.tokens_per_prompt
    }
}

/// Everything needed to score recovery against the planted structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    /// `n_features × d_model`; row `i` is dictionary column `A_i`.
    pub dictionary: Matrix,
    /// True `(feature, value)` code of every non-padding token, in corpus order.
    pub supports: Vec<Vec<(usize, f64)>>,
}

impl GroundTruth {
    pub fn atom(&self, i: usize) -> &[f64] {
        self.dictionary.row(i)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Data(e.to_string()))?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let truth: Self = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: e.to_string(),
        })?;
        if truth.dictionary.shape() != (truth.spec.n_features, truth.spec.d_model) {
            return Err(Error::Data("dictionary shape disagrees with the recorded settings".into()));
        }
        Ok(truth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sequences: Vec<EmbeddingSequence>,
    pub truth: GroundTruth,
}

impl SynthCorpus {
    /// Writes `prompt_NNNNN.saed` files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (p, seq) in self.sequences.iter().enumerate() {
            seq.write(&dir.join(format!("prompt_{p:05}.saed")))?;
        }
        Ok(())
    }

    /// Non-padding tokens in corpus order.
    pub fn tokens(&self) -> Matrix {
        let d = self.truth.spec.d_model;
        let mut data = Vec::new();
        for seq in &self.sequences {
            for (_, row) in seq.active_tokens() {
                data.extend_from_slice(row);
            }
        }
        let n = data.len() / d;
        Matrix::from_vec(n, d, data).expect("generated values are finite")
    }
}

/// Unit-norm random dictionary, one atom per row.
pub fn draw_dictionary(n_features: usize, d_model: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_features * d_model);
    for _ in 0..n_features {
        let mut atom: Vec<f64> = (0..d_model).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&atom);
        atom.iter_mut().for_each(|x| *x /= n);
        data.extend(atom);
    }
    Matrix::from_vec(n_features, d_model, data).expect("normalised gaussian atoms are finite")
}

fn draw_code(rng: &mut ChaCha8Rng, n_features: usize, k: usize, exclude: &[usize]) -> Vec<(usize, f64)> {
    let mut feats: Vec<usize> = Vec::with_capacity(k);
    while feats.len() < k {
        let f = rng.random_range(0..n_features);
        if !feats.contains(&f) && !exclude.contains(&f) {
            feats.push(f);
        }
    }
    feats.sort_unstable();
    feats
        .into_iter()
        .map(|f| {
            let v: f64 = Exp1.sample(rng);
            (f, v)
        })
        .collect()
}

fn embed(dictionary: &Matrix, code: &[(usize, f64)], noise: Option<&Normal<f64>>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut e = vec![0.0; dictionary.cols()];
    for &(f, v) in code {
        for (x, a) in e.iter_mut().zip(dictionary.row(f)) {
            *x += v * a;
        }
    }
    if let Some(n) = noise {
        e.iter_mut().for_each(|x| *x += n.sample(rng));
    }
    e
}

fn noise_dist(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma validated finite and positive"))
}

fn assemble(rows: Vec<Vec<f64>>, padding: usize, d: usize) -> EmbeddingSequence {
    let n = rows.len() + padding;
    let mut data: Vec<f64> = rows.into_iter().flatten().collect();
    data.resize(n * d, 0.0);
    let mut seq = EmbeddingSequence::unpadded(Matrix::from_vec(n, d, data).expect("finite synthetic data"));
    let first_pad = n - padding;
    for p in &mut seq.padding[first_pad..] {
        *p = true;
    }
    seq
}

/// Draws the dictionary and `n_prompts` prompts of `k_true`-sparse tokens.
pub fn generate_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let dictionary = draw_dictionary(spec.n_features, spec.d_model, spec.seed);
    let noise = noise_dist(spec.sigma);
    let mut sequences = Vec::with_capacity(spec.n_prompts);
    let mut supports = Vec::with_capacity(spec.n_tokens());
    for p in 0..spec.n_prompts {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(p as u64 + 1);
        let mut rows = Vec::with_capacity(spec.tokens_per_prompt);
        for _ in 0..spec.tokens_per_prompt {
            let code = draw_code(&mut rng, spec.n_features, spec.k_true, &[]);
            rows.push(embed(&dictionary, &code, noise.as_ref(), &mut rng));
            supports.push(code);
        }
        let mut seq = assemble(rows, spec.padding_tokens, spec.d_model);
        seq.prompt = Some(format!("synthetic prompt {p}"));
        sequences.push(seq);
    }
    Ok(SynthCorpus {
        sequences,
        truth: GroundTruth {
            spec: spec.clone(),
            dictionary,
            supports,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSpec {
    pub attribute: usize,
    pub n_pairs: usize,
    /// Code value of the added attribute feature.
    pub magnitude: f64,
    /// Noise level for pair embeddings; the corpus sigma when absent.
    pub sigma: Option<f64>,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            attribute: 0,
            n_pairs: 100,
            magnitude: 3.0,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub pair_id: String,
    pub src: EmbeddingSequence,
    pub tgt: EmbeddingSequence,
    pub token_index: usize,
    /// Nuisance codes shared by both prompts, one per token.
    pub codes: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub spec: PairSpec,
    pub pairs: Vec<SynthPair>,
}

impl PairSet {
    /// Writes `<id>_src.saed`, `<id>_tgt.saed` and `pairs.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(self.pairs.len());
        for pair in &self.pairs {
            let src = format!("{}_src.saed", pair.pair_id);
            let tgt = format!("{}_tgt.saed", pair.pair_id);
            pair.src.write(&dir.join(&src))?;
            pair.tgt.write(&dir.join(&tgt))?;
            records.push(PairRecord {
                pair_id: pair.pair_id.clone(),
                src_embedding_path: src.into(),
                tgt_embedding_path: tgt.into(),
                src_prompt: pair.src.prompt.clone().unwrap_or_default(),
                tgt_prompt: pair.tgt.prompt.clone().unwrap_or_default(),
                token_index: Some(pair.token_index),
            });
        }
        let manifest = PairManifest::new(records, dir)?;
        let path = dir.join("pairs.jsonl");
        manifest.write(&path)?;
        Ok(path)
    }

    pub fn manifest(&self) -> Result<PairManifest> {
        let records = self
            .pairs
            .iter()
            .map(|p| PairRecord {
                pair_id: p.pair_id.clone(),
                src_embedding_path: format!("{}_src.saed", p.pair_id).into(),
                tgt_embedding_path: format!("{}_tgt.saed", p.pair_id).into(),
                src_prompt: p.src.prompt.clone().unwrap_or_default(),
                tgt_prompt: p.tgt.prompt.clone().unwrap_or_default(),
                token_index: Some(p.token_index),
            })
            .collect();
        PairManifest::new(records, "")
    }
}

/// Prompt pairs whose target adds `magnitude · A_attribute` to one token.
///
/// Nuisance codes never contain the attribute. Source and target noise are
/// drawn independently.
pub fn generate_pairs(truth: &GroundTruth, pairs: &PairSpec) -> Result<PairSet> {
    let spec = &truth.spec;
    if pairs.attribute >= spec.n_features {
        return Err(Error::Config(format!(
            "attribute {} >= n_features {}",
            pairs.attribute, spec.n_features
        )));
    }
    if !(pairs.magnitude.is_finite() && pairs.magnitude > 0.0) {
        return Err(Error::Config(format!("magnitude must be positive, got {}", pairs.magnitude)));
    }
    if spec.k_true >= spec.n_features {
        return Err(Error::Config("k_true must leave room to exclude the attribute".into()));
    }
    let sigma = pairs.sigma.unwrap_or(spec.sigma);
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
    }
    let noise = noise_dist(sigma);
    let mut out = Vec::with_capacity(pairs.n_pairs);
    for p in 0..pairs.n_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ PAIR_SALT ^ pairs.attribute as u64);
        rng.set_stream(p as u64 + 1);
        let codes: Vec<Vec<(usize, f64)>> = (0..spec.tokens_per_prompt)
            .map(|_| draw_code(&mut rng, spec.n_features, spec.k_true, &[pairs.attribute]))
            .collect();
        let token_index = rng.random_range(0..spec.tokens_per_prompt);
        let src_rows = codes
            .iter()
            .map(|c| embed(&truth.dictionary, c, noise.as_ref(), &mut rng))
            .collect();
        let tgt_rows = codes
            .iter()
            .enumerate()
            .map(|(t, c)| {
                let mut c = c.clone();
                if t == token_index {
                    c.push((pairs.attribute, pairs.magnitude));
                }
                embed(&truth.dictionary, &c, noise.as_ref(), &mut rng)
            })
            .collect();
        let pair_id = format!("pair_{p:05}");
        let mut src = assemble(src_rows, spec.padding_tokens, spec.d_model);
        let mut tgt = assemble(tgt_rows, spec.padding_tokens, spec.d_model);
        src.prompt = Some(format!("synthetic pair {p}"));
        tgt.prompt = Some(format!("synthetic pair {p} with attribute {}", pairs.attribute));
        out.push(SynthPair {
            pair_id,
            src,
            tgt,
            token_index,
            codes,
        });
    }
    Ok(PairSet {
        spec: pairs.clone(),
        pairs: out,
    })
}

/// Scores for one direction against the planted attribute atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    /// Fraction of `M` whose best-matching atom is an attribute.
    pub precision: f64,
    /// Fraction of attribute atoms matched by some latent in `M`.
    pub recall: f64,
    /// `cos(W_dec·d, Σ attribute atoms)`, clamped to `[0, 1]`.
    pub atom_cosine: f64,
    /// `(latent, best atom, cosine)` for every latent in `M`.
    pub matches: Vec<(usize, usize, f64)>,
}

/// Greedy latent → atom assignment by maximum decoder-column cosine.
pub fn match_latents(model: &SaeModel, truth: &GroundTruth, latents: &[usize]) -> Result<Vec<(usize, usize, f64)>> {
    if model.d_model() != truth.spec.d_model {
        return Err(Error::Shape(format!(
            "model width {} vs truth width {}",
            model.d_model(),
            truth.spec.d_model
        )));
    }
    latents
        .iter()
        .map(|&j| {
            if j >= model.d_latent() {
                return Err(Error::Shape(format!("latent {j} out of range")));
            }
            let col = model.decoder_column(j);
            let (atom, c) = truth
                .dictionary
                .iter_rows()
                .map(|a| cosine(col, a))
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, c)| if c > best.1 { (i, c) } else { best });
            Ok((j, atom, c))
        })
        .collect()
}

pub fn score_recovery(
    direction: &EditDirection,
    model: &SaeModel,
    truth: &GroundTruth,
    attributes: &[usize],
) -> Result<RecoveryReport> {
    if attributes.is_empty() {
        return Err(Error::Usage("no attribute features to score against".into()));
    }
    if let Some(&a) = attributes.iter().find(|&&a| a >= truth.spec.n_features) {
        return Err(Error::Usage(format!("attribute {a} >= n_features {}", truth.spec.n_features)));
    }
    if direction.dim() != model.d_latent() {
        return Err(Error::Shape(format!(
            "direction width {} vs model latents {}",
            direction.dim(),
            model.d_latent()
        )));
    }
    let matches = match_latents(model, truth, direction.index_set())?;
    let hits = matches.iter().filter(|(_, a, _)| attributes.contains(a)).count();
    let precision = if matches.is_empty() {
        0.0
    } else {
        hits as f64 / matches.len() as f64
    };
    let covered = attributes
        .iter()
        .filter(|a| matches.iter().any(|(_, m, _)| m == *a))
        .count();
    let recall = covered as f64 / attributes.len() as f64;
    let decoded = model.decode_entries(direction.entries(), false)?;
    let mut target = vec![0.0; truth.spec.d_model];
    for &a in attributes {
        for (t, x) in target.iter_mut().zip(truth.atom(a)) {
            *t += x;
        }
    }
    let atom_cosine = cosine(&decoded, &target).clamp(0.0, 1.0);
    Ok(RecoveryReport {
        precision,
        recall,
        atom_cosine,
        matches,
    })
}

/// An SAE whose decoder is the true dictionary (`n_features` latents).
///
/// With a square dictionary the encoder is its exact inverse, so noiseless
/// embeddings encode to their true codes. Otherwise the encoder is the
/// transposed dictionary. Theta is set to `theta`.
pub fn oracle_model(truth: &GroundTruth, theta: f64) -> Result<SaeModel> {
    let (n, d) = truth.dictionary.shape();
    let w_dec = truth.dictionary.transpose();
    let w_enc = if n == d {
        invert(&w_dec)?
    } else {
        truth.dictionary.clone()
    };
    SaeModel::from_parts(w_enc, vec![0.0; n], &w_dec, vec![0.0; d], Some(theta))
}

/// Gauss–Jordan inverse with partial pivoting.
fn invert(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut m = a.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .expect("non-empty range");
        if m.get(pivot, col).abs() < 1e-12 {
            return Err(Error::Degenerate("dictionary is singular".into()));
        }
        for c in 0..n {
            let (x, y) = (m.get(col, c), m.get(pivot, c));
            m.set(col, c, y);
            m.set(pivot, c, x);
            let (x, y) = (inv.get(col, c), inv.get(pivot, c));
            inv.set(col, c, y);
            inv.set(pivot, c, x);
        }
        let p = m.get(col, col);
        for c in 0..n {
            m.set(col, c, m.get(col, c) / p);
            inv.set(col, c, inv.get(col, c) / p);
        }
        for r in (0..n).filter(|&r| r != col) {
            let f = m.get(r, col);
            if f != 0.0 {
                for c in 0..n {
                    m.set(r, c, m.get(r, c) - f * m.get(col, c));
                    inv.set(r, c, inv.get(r, c) - f * inv.get(col, c));
                }
            }
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directions::{encode_prompt, extract_from_encodings, DirectionMethod, ExtractOptions, Provenance};
    use crate::linalg::{dot, matmul};
    use proptest::prelude::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            d_model: 8,
            n_features: 16,
            k_true: 2,
            n_prompts: 10,
            tokens_per_prompt: 5,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noiseless_single_feature_tokens_are_scaled_atoms() {
        let spec = SynthSpec {
            k_true: 1,
            sigma: 0.0,
            ..small(3)
        };
        let c = generate_corpus(&spec).unwrap();
        let tokens = c.tokens();
        for (row, code) in tokens.iter_rows().zip(&c.truth.supports) {
            let (f, v) = code[0];
            for (x, a) in row.iter().zip(c.truth.atom(f)) {
                assert!((x - v * a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let a = generate_corpus(&small(5)).unwrap();
        let b = generate_corpus(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_corpus(&small(6)).unwrap());
    }

    #[test]
    fn dictionary_atoms_are_unit() {
        let d = draw_dictionary(20, 6, 1);
        for row in d.iter_rows() {
            assert!((norm(row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_square_norm_matches_expectation() {
        // E‖e‖² = k·E[z²] + d·σ² with E[z²] = 2 for Exp(1); cross terms vanish on average
        let spec = SynthSpec {
            n_prompts: 500,
            tokens_per_prompt: 20,
            ..SynthSpec::default()
        };
        let c = generate_corpus(&spec).unwrap();
        let tokens = c.tokens();
        assert_eq!(tokens.rows(), 10_000);
        let mean: f64 = tokens.iter_rows().map(|r| dot(r, r)).sum::<f64>() / 10_000.0;
        let expect = 4.0 * 2.0 + 32.0 * 0.01 * 0.01;
        assert!((mean - expect).abs() / expect < 0.05, "{mean} vs {expect}");
    }

    #[test]
    fn padding_rows_are_masked() {
        let spec = SynthSpec {
            padding_tokens: 2,
            ..small(1)
        };
        let c = generate_corpus(&spec).unwrap();
        assert!(c.sequences.iter().all(|s| s.n_tokens() == 7 && s.active_tokens().count() == 5));
        assert_eq!(c.tokens().rows(), 50);
    }

    #[test]
    fn pairs_plant_attribute_only_in_targets() {
        let c = generate_corpus(&small(2)).unwrap();
        let set = generate_pairs(
            &c.truth,
            &PairSpec {
                attribute: 3,
                n_pairs: 12,
                ..PairSpec::default()
            },
        )
        .unwrap();
        assert_eq!(set.pairs.len(), 12);
        assert_eq!(set.manifest().unwrap().len(), 12);
        for p in &set.pairs {
            assert!(p.codes.iter().flatten().all(|&(f, _)| f != 3));
            assert!(p.token_index < 5);
        }
    }

    #[test]
    fn noiseless_pair_difference_is_the_attribute() {
        let spec = SynthSpec {
            d_model: 8,
            n_features: 8,
            sigma: 0.0,
            ..small(4)
        };
        let c = generate_corpus(&spec).unwrap();
        let model = oracle_model(&c.truth, 1e-9).unwrap();
        let set = generate_pairs(
            &c.truth,
            &PairSpec {
                attribute: 5,
                n_pairs: 5,
                ..PairSpec::default()
            },
        )
        .unwrap();
        for p in &set.pairs {
            let s = encode_prompt(&model, &p.src, "s").unwrap();
            let t = encode_prompt(&model, &p.tgt, "t").unwrap();
            let diff: Vec<usize> = (0..8).filter(|&i| (t.pooled[i] - s.pooled[i]).abs() > 1e-9).collect();
            assert_eq!(diff, vec![5]);
        }
    }

    #[test]
    fn oracle_inverse_is_exact() {
        let d = draw_dictionary(6, 6, 9);
        let inv = invert(&d).unwrap();
        let id = matmul(&inv, &d).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((id.get(i, j) - f64::from(u8::from(i == j))).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn perfect_model_scores_one() {
        let c = generate_corpus(&small(0)).unwrap();
        let model = oracle_model(&c.truth, 0.0).unwrap();
        let d = EditDirection::new(16, vec![(7, 1.3)], vec![7], 0.6, 1e-9, DirectionMethod::SinglePair, Provenance::default())
            .unwrap();
        let r = score_recovery(&d, &model, &c.truth, &[7]).unwrap();
        assert!((r.precision - 1.0).abs() < 1e-12);
        assert!((r.recall - 1.0).abs() < 1e-12);
        assert!((r.atom_cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_index_set_scores_zero_precision() {
        let c = generate_corpus(&small(0)).unwrap();
        let model = oracle_model(&c.truth, 0.0).unwrap();
        let d = EditDirection::new(16, vec![(2, 1.0)], vec![2], 0.6, 1e-9, DirectionMethod::SinglePair, Provenance::default())
            .unwrap();
        let r = score_recovery(&d, &model, &c.truth, &[7]).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert!((0.0..=1.0).contains(&r.atom_cosine));
    }

    #[test]
    fn truth_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(&small(1)).unwrap();
        c.truth.write(&dir.path().join("truth.json")).unwrap();
        assert_eq!(GroundTruth::read(&dir.path().join("truth.json")).unwrap(), c.truth);
    }

    #[test]
    fn planted_index_recovered_over_200_seeds() {
        let mut hits = 0;
        for seed in 0..200u64 {
            let spec = SynthSpec {
                d_model: 12,
                n_features: 12,
                k_true: 3,
                n_prompts: 0,
                tokens_per_prompt: 6,
                sigma: 0.0,
                seed,
                ..SynthSpec::default()
            };
            let c = generate_corpus(&spec).unwrap();
            let model = oracle_model(&c.truth, 1e-9).unwrap();
            let attribute = seed as usize % 12;
            let set = generate_pairs(
                &c.truth,
                &PairSpec {
                    attribute,
                    n_pairs: 1,
                    ..PairSpec::default()
                },
            )
            .unwrap();
            let p = &set.pairs[0];
            let s = encode_prompt(&model, &p.src, "s").unwrap();
            let t = encode_prompt(&model, &p.tgt, "t").unwrap();
            let d = extract_from_encodings(&s, &t, &ExtractOptions::default(), &p.pair_id).unwrap();
            if d.index_set() == [attribute] {
                hits += 1;
            }
        }
        assert!(hits as f64 / 200.0 >= 0.95, "{hits}/200");
    }

    proptest! {
        #[test]
        fn scores_stay_in_unit_interval(seed in 0u64..200, latents in proptest::collection::btree_set(0usize..16, 1..5), attr in 0usize..16) {
            let c = generate_corpus(&small(seed)).unwrap();
            let model = SaeModel::init(8, 16, seed).unwrap();
            let idx: Vec<usize> = latents.into_iter().collect();
            let entries = idx.iter().map(|&i| (i, 1.0 - 2.0 * (i % 2) as f64)).collect();
            let d = EditDirection::new(16, entries, idx, 0.6, 1e-9, DirectionMethod::SvdAggregate, Provenance::default()).unwrap();
            let r = score_recovery(&d, &model, &c.truth, &[attr]).unwrap();
            for v in [r.precision, r.recall, r.atom_cosine] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
