//! Applying edit directions to token embeddings.
//!
//! `e' = S_dec(S_enc(e) + ω·d)`, with `ω` either constant or taken from the
//! per-step schedule `ω_t = min(exp(t·ω) − 1, τ)`, `t = step / (steps − 1)`.
//! `ω == 0` returns the embedding untouched instead of its reconstruction.

use serde::{Deserialize, Serialize};

use crate::dataio::EmbeddingSequence;
use crate::directions::EditDirection;
use crate::error::{Error, Result};
use crate::sae::SaeModel;

pub const DEFAULT_TAU_FACTOR: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum TauRule {
    Explicit { tau: f64 },
    /// `τ = factor · ω`
    Proportional { factor: f64 },
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Proportional {
            factor: DEFAULT_TAU_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub omega: f64,
    pub tau_rule: TauRule,
    /// Number of diffusion steps `T`.
    pub steps: usize,
}

impl ScheduleConfig {
    /// `τ = 15·ω`.
    pub fn new(omega: f64, steps: usize) -> Self {
        Self {
            omega,
            tau_rule: TauRule::default(),
            steps,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau_rule = TauRule::Explicit { tau };
        self
    }

    pub fn tau(&self) -> f64 {
        match self.tau_rule {
            TauRule::Explicit { tau } => tau,
            TauRule::Proportional { factor } => factor * self.omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::Config(format!("omega must be finite and >= 0, got {}", self.omega)));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        let tau = self.tau();
        if !tau.is_finite() || tau < 0.0 || (self.omega > 0.0 && tau <= 0.0) {
            return Err(Error::Config(format!("tau must be positive when omega > 0, got {tau}")));
        }
        Ok(())
    }

    /// Normalised progress: 0 at the first step, 1 at the last.
    pub fn progress(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            0.0
        } else {
            step as f64 / (self.steps - 1) as f64
        }
    }
}

/// `min(exp(t·ω) − 1, τ)` at `step`.
///
/// # Panics
/// If `step >= cfg.steps`.
pub fn injection_scale(cfg: &ScheduleConfig, step: usize) -> f64 {
    assert!(step < cfg.steps, "step {step} outside schedule of {} steps", cfg.steps);
    let t = cfg.progress(step);
    (t * cfg.omega).exp_m1().min(cfg.tau())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub step: usize,
    pub t: f64,
    pub omega_t: f64,
}

pub fn schedule_table(cfg: &ScheduleConfig) -> Result<Vec<ScheduleRow>> {
    cfg.validate()?;
    Ok((0..cfg.steps)
        .map(|step| ScheduleRow {
            step,
            t: cfg.progress(step),
            omega_t: injection_scale(cfg, step),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ApplyOptions {
    /// At `ω == 0`, return `S_dec(S_enc(e))` instead of `e`.
    pub reconstruct_at_zero: bool,
}

/// `S_dec(S_enc(e) + ω·d)`, or `e` itself when `ω == 0`.
pub fn apply_direction(model: &SaeModel, e_tgt: &[f64], d: &EditDirection, omega: f64) -> Result<Vec<f64>> {
    apply_directions(model, e_tgt, &[(d, omega)], ApplyOptions::default())
}

/// Adds every `ω_i·d_i` in latent space before a single decode.
///
/// The bypass applies when all scales are zero.
pub fn apply_directions(
    model: &SaeModel,
    e_tgt: &[f64],
    edits: &[(&EditDirection, f64)],
    opts: ApplyOptions,
) -> Result<Vec<f64>> {
    if model.theta().is_none() {
        return Err(Error::State("model has no calibrated threshold".into()));
    }
    if e_tgt.len() != model.d_model() {
        return Err(Error::Shape(format!(
            "embedding width {} but model expects {}",
            e_tgt.len(),
            model.d_model()
        )));
    }
    for (d, omega) in edits {
        if d.dim() != model.d_latent() {
            return Err(Error::Shape(format!(
                "direction width {} but model has {} latents",
                d.dim(),
                model.d_latent()
            )));
        }
        if !omega.is_finite() {
            return Err(Error::Config(format!("edit scale {omega} is not finite")));
        }
    }
    if edits.iter().all(|(_, w)| *w == 0.0) && !opts.reconstruct_at_zero {
        return Ok(e_tgt.to_vec());
    }
    let mut z = model.encode(e_tgt, None)?.to_dense();
    for (d, omega) in edits {
        for &(i, v) in d.entries() {
            z[i] += omega * v;
        }
    }
    model.decode_dense(&z)
}

/// One replacement embedding for the edited token.
#[derive(Debug, Clone, PartialEq)]
pub struct EditStep {
    pub step: usize,
    pub omega_t: f64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditedSequence {
    pub original: EmbeddingSequence,
    pub token_index: usize,
    /// One entry per diffusion step, or a single entry for a constant scale.
    pub steps: Vec<EditStep>,
}

impl EditedSequence {
    /// The original sequence with the target token replaced by step `i`'s embedding.
    pub fn sequence_at(&self, i: usize) -> EmbeddingSequence {
        let mut seq = self.original.clone();
        seq.embeddings
            .row_mut(self.token_index)
            .copy_from_slice(&self.steps[i].embedding);
        seq
    }
}

/// Sidecar record for one written step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditStepRecord {
    /// Base scale of the run this step belongs to.
    pub omega: f64,
    pub step: usize,
    pub omega_t: f64,
    pub token_index: usize,
    pub direction_id: String,
    pub file: String,
}

fn check_token(seq: &EmbeddingSequence, token_index: usize) -> Result<()> {
    if token_index >= seq.n_tokens() {
        return Err(Error::Usage(format!(
            "token index {token_index} out of range for {} tokens",
            seq.n_tokens()
        )));
    }
    if seq.padding[token_index] {
        return Err(Error::Usage(format!("token {token_index} is padding")));
    }
    Ok(())
}

/// Per-step replacements for `seq[token_index]` following `cfg`.
pub fn edit_sequence(
    model: &SaeModel,
    seq: &EmbeddingSequence,
    token_index: usize,
    d: &EditDirection,
    cfg: &ScheduleConfig,
    opts: ApplyOptions,
) -> Result<EditedSequence> {
    cfg.validate()?;
    check_token(seq, token_index)?;
    let e = seq.token(token_index);
    let steps = (0..cfg.steps)
        .map(|step| {
            let omega_t = injection_scale(cfg, step);
            apply_directions(model, e, &[(d, omega_t)], opts).map(|embedding| EditStep {
                step,
                omega_t,
                embedding,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EditedSequence {
        original: seq.clone(),
        token_index,
        steps,
    })
}

/// A single replacement at constant scale `omega`.
pub fn edit_constant(
    model: &SaeModel,
    seq: &EmbeddingSequence,
    token_index: usize,
    d: &EditDirection,
    omega: f64,
    opts: ApplyOptions,
) -> Result<EditedSequence> {
    check_token(seq, token_index)?;
    let embedding = apply_directions(model, seq.token(token_index), &[(d, omega)], opts)?;
    Ok(EditedSequence {
        original: seq.clone(),
        token_index,
        steps: vec![EditStep {
            step: 0,
            omega_t: omega,
            embedding,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directions::{DirectionMethod, Provenance};
    use crate::linalg::Matrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model(seed: u64) -> SaeModel {
        SaeModel::init(4, 8, seed).unwrap().with_theta(Some(0.0)).unwrap()
    }

    fn dir(entries: Vec<(usize, f64)>) -> EditDirection {
        let m = entries.iter().map(|&(i, _)| i).collect();
        EditDirection::new(8, entries, m, 0.6, 1e-9, DirectionMethod::SinglePair, Provenance::default()).unwrap()
    }

    fn seq(seed: u64) -> EmbeddingSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..5 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = EmbeddingSequence::unpadded(Matrix::from_vec(5, 4, data).unwrap());
        s.padding[4] = true;
        s
    }

    #[test]
    fn scale_fixtures() {
        assert_eq!(injection_scale(&ScheduleConfig::new(3.0, 10), 0), 0.0);
        let zero = ScheduleConfig::new(0.0, 10);
        assert!((0..10).all(|s| injection_scale(&zero, s) == 0.0));
        let ln2 = std::f64::consts::LN_2;
        assert!((injection_scale(&ScheduleConfig::new(ln2, 5), 4) - 1.0).abs() < 1e-15);
        assert_eq!(injection_scale(&ScheduleConfig::new(5.0, 2).with_tau(75.0), 1), 75.0);
        assert_eq!(injection_scale(&ScheduleConfig::new(5.0, 2), 1), 75.0);
    }

    #[test]
    fn four_step_schedule() {
        let cfg = ScheduleConfig::new(1.0, 4).with_tau(15.0);
        let got: Vec<f64> = (0..4).map(|s| injection_scale(&cfg, s)).collect();
        let expect = [0.0, (1.0f64 / 3.0).exp() - 1.0, (2.0f64 / 3.0).exp() - 1.0, 1.0f64.exp() - 1.0];
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn single_step_is_unedited() {
        let cfg = ScheduleConfig::new(2.0, 1);
        assert_eq!(injection_scale(&cfg, 0), 0.0);
        let s = seq(0);
        let out = edit_sequence(&toy_model(0), &s, 1, &dir(vec![(2, 1.0)]), &cfg, ApplyOptions::default()).unwrap();
        assert_eq!(out.steps.len(), 1);
        assert_eq!(out.sequence_at(0), s);
    }

    #[test]
    fn invalid_schedules() {
        assert!(ScheduleConfig::new(-1.0, 3).validate().is_err());
        assert!(ScheduleConfig::new(1.0, 0).validate().is_err());
        assert!(ScheduleConfig::new(1.0, 3).with_tau(0.0).validate().is_err());
        ScheduleConfig::new(0.0, 3).validate().unwrap();
    }

    #[test]
    fn zero_scale_bypasses() {
        let m = toy_model(0);
        let e = [0.3, -0.7, 0.1, 0.9];
        let d = dir(vec![(1, 2.0)]);
        assert_eq!(apply_direction(&m, &e, &d, 0.0).unwrap(), e.to_vec());
        let rec = apply_directions(&m, &e, &[(&d, 0.0)], ApplyOptions { reconstruct_at_zero: true }).unwrap();
        assert_eq!(rec, m.decode(&m.encode(&e, None).unwrap()).unwrap());
    }

    #[test]
    fn single_atom_adds_its_column() {
        let m = toy_model(1);
        let e = [0.3, -0.7, 0.1, 0.9];
        let out = apply_direction(&m, &e, &dir(vec![(5, 1.5)]), 1.0).unwrap();
        let base = m.decode(&m.encode(&e, None).unwrap()).unwrap();
        for i in 0..4 {
            assert!((out[i] - base[i] - 1.5 * m.decoder_column(5)[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn omega_sweep_matches_dense_oracle() {
        let m = toy_model(0);
        let e = [0.5, 0.2, -0.4, 0.8];
        let d = dir(vec![(0, 0.7), (3, 1.2), (6, 0.4)]);
        let w_dec = m.decoder();
        let pre: Vec<f64> = (0..8)
            .map(|j| {
                let mut s = m.encoder_bias()[j];
                for i in 0..4 {
                    s += m.encoder().get(j, i) * e[i];
                }
                s
            })
            .collect();
        for omega in [0.5, 1.0, 2.0] {
            let mut z: Vec<f64> = pre.iter().map(|&p| if p > 0.0 { p } else { 0.0 }).collect();
            for &(i, v) in d.entries() {
                z[i] += omega * v;
            }
            let got = apply_direction(&m, &e, &d, omega).unwrap();
            for r in 0..4 {
                let mut s = m.decoder_bias()[r];
                for j in 0..8 {
                    s += w_dec.get(r, j) * z[j];
                }
                assert!((got[r] - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn uncalibrated_model_is_state_error() {
        let m = SaeModel::init(4, 8, 0).unwrap();
        assert!(matches!(
            apply_direction(&m, &[0.0; 4], &dir(vec![(0, 1.0)]), 1.0),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn padding_and_range_are_usage_errors() {
        let m = toy_model(0);
        let d = dir(vec![(0, 1.0)]);
        let cfg = ScheduleConfig::new(1.0, 3);
        let s = seq(0);
        assert!(matches!(edit_sequence(&m, &s, 4, &d, &cfg, ApplyOptions::default()), Err(Error::Usage(_))));
        assert!(matches!(edit_sequence(&m, &s, 9, &d, &cfg, ApplyOptions::default()), Err(Error::Usage(_))));
    }

    #[test]
    fn disjoint_directions_commute() {
        let m = toy_model(2);
        let e = [0.1, 0.2, 0.3, 0.4];
        let a = dir(vec![(0, 0.3), (2, 1.1)]);
        let b = dir(vec![(1, 0.9), (7, 0.2)]);
        let ab = apply_directions(&m, &e, &[(&a, 1.3), (&b, 0.7)], ApplyOptions::default()).unwrap();
        let ba = apply_directions(&m, &e, &[(&b, 0.7), (&a, 1.3)], ApplyOptions::default()).unwrap();
        assert_eq!(ab, ba);
    }

    proptest! {
        #[test]
        fn schedule_is_monotone_and_capped(omega in 0.0f64..10.0, tau in 0.01f64..200.0, steps in 1usize..60) {
            let cfg = ScheduleConfig::new(omega, steps).with_tau(tau);
            let rows = schedule_table(&cfg).unwrap();
            for w in rows.windows(2) {
                prop_assert!(w[1].omega_t >= w[0].omega_t);
            }
            for r in &rows {
                prop_assert!(r.omega_t >= 0.0 && r.omega_t <= tau);
            }
        }

        #[test]
        fn only_the_target_token_changes(seed in 0u64..500, token in 0usize..4, omega in 0.0f64..4.0, steps in 1usize..8) {
            let m = toy_model(seed);
            let s = seq(seed);
            let d = dir(vec![(seed as usize % 8, 1.0)]);
            let out = edit_sequence(&m, &s, token, &d, &ScheduleConfig::new(omega, steps), ApplyOptions::default()).unwrap();
            prop_assert_eq!(out.steps.len(), steps);
            for i in 0..steps {
                let edited = out.sequence_at(i);
                for t in 0..s.n_tokens() {
                    if t != token {
                        prop_assert_eq!(edited.token(t), s.token(t));
                    }
                }
            }
        }

        #[test]
        fn affine_in_omega(seed in 0u64..500, w1 in 0.01f64..5.0, w2 in 0.01f64..5.0) {
            let m = toy_model(seed);
            let e = seq(seed).token(0).to_vec();
            let d = dir(vec![(1, 0.8), (4, -0.3), (6, 1.7)]);
            let a = apply_direction(&m, &e, &d, w1).unwrap();
            let b = apply_direction(&m, &e, &d, w2).unwrap();
            let delta = m.decode_entries(d.entries(), false).unwrap();
            for i in 0..4 {
                prop_assert!((b[i] - a[i] - (w2 - w1) * delta[i]).abs() < 1e-6);
            }
        }
    }
}
