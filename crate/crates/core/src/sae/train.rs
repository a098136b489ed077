use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, AdamConfig, AdamState, Matrix};
use crate::sae::grad::{objective_and_gradients, reconstruct, select_support};
use crate::sae::loss::validate_matryoshka_sizes;
use crate::sae::{SaeModel, SparsityMode};

/// Latent width used for the full-scale text-encoder runs.
pub const FULL_SCALE_LATENT_DIM: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Target active latents per token.
    pub k: usize,
    /// Weight of the auxiliary dead-latent loss.
    pub alpha: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch_tokens: usize,
    /// Dead latents recruited per token by the auxiliary loss; 0 disables it.
    pub aux_k: usize,
    /// Tokens without surviving activation before a latent counts as dead.
    pub dead_window: u64,
    /// Nested prefix sizes; `None` trains a plain SAE.
    pub matryoshka_sizes: Option<Vec<usize>>,
    pub sparsity: SparsityMode,
    pub seed: u64,
    /// Steps per report record.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 300,
            alpha: 1.0 / 32.0,
            lr: 0.003,
            steps: 200_000,
            batch_tokens: 4096,
            aux_k: 64,
            dead_window: 10_000,
            matryoshka_sizes: None,
            sparsity: SparsityMode::BatchTopk,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, d_latent: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.k > d_latent {
            return Err(Error::Config(format!("k={} exceeds latent width {d_latent}", self.k)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_tokens == 0 {
            return Err(Error::Config("batch_tokens must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if let Some(sizes) = &self.matryoshka_sizes {
            validate_matryoshka_sizes(sizes, d_latent)?;
        }
        Ok(())
    }

    fn levels(&self, d_latent: usize) -> Vec<usize> {
        self.matryoshka_sizes.clone().unwrap_or_else(|| vec![d_latent])
    }
}

/// One reporting interval. Losses and active counts are interval means;
/// the dead fraction is taken at the interval's last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub l_rec: f64,
    pub l_aux: f64,
    pub dead_frac: f64,
    pub mean_active: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
}

impl TrainReport {
    /// CSV with header `step,L_rec,L_aux,dead_frac,mean_active`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "L_rec", "L_aux", "dead_frac", "mean_active"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.l_rec.to_string(),
                r.l_aux.to_string(),
                r.dead_frac.to_string(),
                r.mean_active.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

/// Counts tokens since each latent last survived the sparsity operator.
#[derive(Debug, Clone)]
pub struct DeadLatentTracker {
    since_active: Vec<u64>,
    window: u64,
}

impl DeadLatentTracker {
    pub fn new(d_latent: usize, window: u64) -> Self {
        Self {
            since_active: vec![0; d_latent],
            window,
        }
    }

    pub fn observe<I: IntoIterator<Item = usize>>(&mut self, batch_tokens: usize, active: I) {
        for c in self.since_active.iter_mut() {
            *c = c.saturating_add(batch_tokens as u64);
        }
        for j in active {
            self.since_active[j] = 0;
        }
    }

    pub fn dead_mask(&self) -> Vec<bool> {
        self.since_active.iter().map(|&c| c >= self.window).collect()
    }

    pub fn dead_fraction(&self) -> f64 {
        let dead = self.since_active.iter().filter(|&&c| c >= self.window).count();
        dead as f64 / self.since_active.len().max(1) as f64
    }
}

/// Trains `model` on up to `cfg.steps` batches drawn from `batches`.
///
/// Each step: encode, sparsify, pick dead latents for the auxiliary term,
/// compute the analytic gradient, drop the decoder-gradient component along
/// each column, take an Adam step, and renormalise decoder columns. Stops
/// early if the batch stream runs dry.
pub fn train<I>(mut model: SaeModel, batches: I, cfg: &TrainConfig) -> Result<(SaeModel, TrainReport)>
where
    I: IntoIterator<Item = Matrix>,
{
    cfg.validate(model.d_latent())?;
    let mut report = TrainReport::default();
    if cfg.steps == 0 {
        return Ok((model, report));
    }
    let levels = cfg.levels(model.d_latent());
    let (dl, dm) = (model.d_latent(), model.d_model());
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut opt_w_enc = AdamState::new(dl * dm, adam_cfg);
    let mut opt_b_enc = AdamState::new(dl, adam_cfg);
    let mut opt_atoms = AdamState::new(dl * dm, adam_cfg);
    let mut opt_b_dec = AdamState::new(dm, adam_cfg);
    let mut tracker = DeadLatentTracker::new(dl, cfg.dead_window);

    let mut acc = IntervalAccumulator::default();
    for (step, batch) in batches.into_iter().take(cfg.steps).enumerate() {
        if batch.cols() != dm {
            return Err(Error::Shape(format!(
                "batch {step} has width {} but model expects {dm}",
                batch.cols()
            )));
        }
        if batch.rows() == 0 {
            continue;
        }
        let dead_mask = tracker.dead_mask();
        let aux_k = if cfg.alpha > 0.0 { cfg.aux_k } else { 0 };
        let (support, _, _) = select_support(&model, &batch, cfg.k, cfg.sparsity, Some(&dead_mask), aux_k)?;
        let residual = {
            let mut r = reconstruct(&model, &batch, &support);
            for (ri, ei) in r.as_mut_slice().iter_mut().zip(batch.as_slice()) {
                *ri = ei - *ri;
            }
            r
        };
        let (parts, mut grads) =
            objective_and_gradients(&model, &batch, &support, &residual, cfg.alpha, &levels)?;
        if !parts.total.is_finite() {
            return Err(Error::Diverged {
                step,
                batch: step,
                detail: format!("loss {} (rec {}, aux {})", parts.total, parts.rec, parts.aux),
            });
        }
        if let Some((name, index)) = grads.first_non_finite() {
            return Err(Error::Diverged {
                step,
                batch: step,
                detail: format!("non-finite gradient in {name} at {index}"),
            });
        }

        // keep decoder updates tangent to the unit sphere of each column
        for j in 0..dl {
            let col = model.decoder_column(j);
            let g = grads.atoms.row(j);
            let along = dot(g, col);
            if along != 0.0 {
                let col = col.to_vec();
                for (gi, ci) in grads.atoms.row_mut(j).iter_mut().zip(&col) {
                    *gi -= along * ci;
                }
            }
        }

        {
            let (w_enc, b_enc, atoms, b_dec) = model.params_mut();
            opt_w_enc.update(w_enc.as_mut_slice(), grads.w_enc.as_slice())?;
            opt_b_enc.update(b_enc, &grads.b_enc)?;
            opt_atoms.update(atoms.as_mut_slice(), grads.atoms.as_slice())?;
            opt_b_dec.update(b_dec, &grads.b_dec)?;
        }
        model.normalize_decoder();
        model.check_finite().map_err(|e| Error::Diverged {
            step,
            batch: step,
            detail: e.to_string(),
        })?;

        let active: usize = support.main.iter().map(Vec::len).sum();
        tracker.observe(batch.rows(), support.main.iter().flatten().copied());
        acc.add(parts.rec, parts.aux, active as f64 / batch.rows() as f64);
        if (step + 1) % cfg.log_every == 0 {
            report.records.push(acc.flush(step + 1, tracker.dead_fraction()));
        }
    }
    if acc.count > 0 {
        let step = report.records.last().map_or(0, |r| r.step) + acc.count;
        report.records.push(acc.flush(step, tracker.dead_fraction()));
    }
    model.set_trained_with(Some(cfg.clone()));
    Ok((model, report))
}

#[derive(Default)]
struct IntervalAccumulator {
    rec: f64,
    aux: f64,
    active: f64,
    count: usize,
}

impl IntervalAccumulator {
    fn add(&mut self, rec: f64, aux: f64, active: f64) {
        self.rec += rec;
        self.aux += aux;
        self.active += active;
        self.count += 1;
    }

    fn flush(&mut self, step: usize, dead_frac: f64) -> TrainRecord {
        let n = self.count.max(1) as f64;
        let rec = TrainRecord {
            step,
            l_rec: self.rec / n,
            l_aux: self.aux / n,
            dead_frac,
            mean_active: self.active / n,
        };
        *self = Self::default();
        rec
    }
}
