//! Batched training objective and its analytic gradient.
//!
//! The objective is evaluated on a *fixed* support: the latents kept by the
//! sparsity operator and the dead latents picked for the auxiliary term are
//! chosen once per step, and code values on that support are the linear
//! pre-activations `W_enc[j]·e + b_enc[j]`. Gradients are therefore exact
//! for the piecewise-linear region the step sits in, and zero off-support.
//!
//! Total loss: `Σ_levels MSE(e, ê_level) + α · MSE(r, â)`, where `ê_level`
//! decodes only latents below the level's prefix size (a single level equal
//! to `d_latent` is the plain reconstruction loss), `â` is the bias-free
//! decode of the auxiliary latents, and `r` is a caller-supplied residual
//! target held constant.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};
use crate::sae::loss::dead_topk;
use crate::sae::sparsity::{apply_sparsity, SparsityMode};
use crate::sae::{SaeModel, SparseCode};

/// Per-token latent indices that participate in one forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Support {
    /// Survivors of the sparsity operator, ascending per token.
    pub main: Vec<Vec<usize>>,
    /// Dead latents recruited by the auxiliary loss.
    pub aux: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Reconstruction term (summed over nested levels when there are several).
    pub rec: f64,
    /// Unweighted auxiliary term.
    pub aux: f64,
    /// `rec + alpha · aux`
    pub total: f64,
}

/// Gradients laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    /// Decoder columns as rows (`d_latent × d_model`).
    pub atoms: Matrix,
    pub b_dec: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &SaeModel) -> Self {
        Self {
            w_enc: Matrix::zeros(model.d_latent(), model.d_model()),
            b_enc: vec![0.0; model.d_latent()],
            atoms: Matrix::zeros(model.d_latent(), model.d_model()),
            b_dec: vec![0.0; model.d_model()],
        }
    }

    /// Same order as [`SaeModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w_enc.as_slice());
        out.extend_from_slice(&self.b_enc);
        out.extend_from_slice(self.atoms.as_slice());
        out.extend_from_slice(&self.b_dec);
        out
    }

    pub(crate) fn first_non_finite(&self) -> Option<(&'static str, usize)> {
        let groups: [(&'static str, &[f64]); 4] = [
            ("encoder weights", self.w_enc.as_slice()),
            ("encoder bias", &self.b_enc),
            ("decoder weights", self.atoms.as_slice()),
            ("decoder bias", &self.b_dec),
        ];
        groups
            .into_iter()
            .find_map(|(name, g)| g.iter().position(|v| !v.is_finite()).map(|i| (name, i)))
    }
}

impl SaeModel {
    /// All parameters flattened: `W_enc`, `b_enc`, decoder columns, `b_dec`.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.encoder().as_slice());
        out.extend_from_slice(self.encoder_bias());
        out.extend_from_slice(self.decoder_atoms().as_slice());
        out.extend_from_slice(self.decoder_bias());
        out
    }

    /// Copy of the model with parameters replaced from a [`flat_params`](Self::flat_params) vector.
    pub fn with_flat_params(&self, flat: &[f64]) -> Result<SaeModel> {
        let (dl, dm) = (self.d_latent(), self.d_model());
        let expected = 2 * dl * dm + dl + dm;
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut out = self.clone();
        let (w_enc, b_enc, atoms, b_dec) = out.params_mut();
        let (a, rest) = flat.split_at(dl * dm);
        let (b, rest) = rest.split_at(dl);
        let (c, d) = rest.split_at(dl * dm);
        w_enc.as_mut_slice().copy_from_slice(a);
        b_enc.copy_from_slice(b);
        atoms.as_mut_slice().copy_from_slice(c);
        b_dec.copy_from_slice(d);
        out.check_finite()?;
        Ok(out)
    }
}

/// Runs the encoder over a batch and picks the support for one training step.
///
/// Returns the support together with the surviving codes and the dense
/// pre-activations. Dead latents are ranked by their linear pre-activation,
/// so a latent pushed fully negative can still be recruited.
pub fn select_support(
    model: &SaeModel,
    batch: &Matrix,
    k: usize,
    mode: SparsityMode,
    dead_mask: Option<&[bool]>,
    aux_k: usize,
) -> Result<(Support, Vec<SparseCode>, Vec<Vec<f64>>)> {
    let linear: Vec<Vec<f64>> = batch
        .iter_rows()
        .map(|e| model.encode_linear(e))
        .collect::<Result<_>>()?;
    let pre: Vec<Vec<f64>> = linear
        .iter()
        .map(|l| l.iter().map(|v| v.max(0.0)).collect())
        .collect();
    let codes = apply_sparsity(mode, &pre, k);
    let main = codes.iter().map(|c| c.indices().collect()).collect();
    let aux = match dead_mask {
        Some(mask) if aux_k > 0 && mask.iter().any(|d| *d) => {
            linear.iter().map(|l| dead_topk(l, mask, aux_k)).collect()
        }
        _ => vec![Vec::new(); pre.len()],
    };
    Ok((Support { main, aux }, codes, pre))
}

/// Full-model reconstruction of every token on the given main support.
pub fn reconstruct(model: &SaeModel, batch: &Matrix, support: &Support) -> Matrix {
    let mut out = Matrix::zeros(batch.rows(), batch.cols());
    for (i, e) in batch.iter_rows().enumerate() {
        let entries: Vec<(usize, f64)> = support.main[i]
            .iter()
            .map(|&j| (j, model.preactivation(j, e)))
            .collect();
        out.row_mut(i)
            .copy_from_slice(&model.decode_entries_unchecked(&entries, true));
    }
    out
}

/// Objective value on a fixed support.
pub fn objective(
    model: &SaeModel,
    batch: &Matrix,
    support: &Support,
    aux_target: &Matrix,
    alpha: f64,
    levels: &[usize],
) -> Result<LossParts> {
    run(model, batch, support, aux_target, alpha, levels, None)
}

/// Objective value and its analytic gradient on a fixed support.
pub fn objective_and_gradients(
    model: &SaeModel,
    batch: &Matrix,
    support: &Support,
    aux_target: &Matrix,
    alpha: f64,
    levels: &[usize],
) -> Result<(LossParts, Gradients)> {
    let mut grads = Gradients::zeros(model);
    let parts = run(model, batch, support, aux_target, alpha, levels, Some(&mut grads))?;
    Ok((parts, grads))
}

fn run(
    model: &SaeModel,
    batch: &Matrix,
    support: &Support,
    aux_target: &Matrix,
    alpha: f64,
    levels: &[usize],
    mut grads: Option<&mut Gradients>,
) -> Result<LossParts> {
    let (b, d) = batch.shape();
    if d != model.d_model() || aux_target.shape() != batch.shape() {
        return Err(Error::Shape("batch / residual target width mismatch".into()));
    }
    if support.main.len() != b || support.aux.len() != b {
        return Err(Error::Shape("support does not cover the batch".into()));
    }
    if levels.is_empty() || *levels.last().unwrap() != model.d_latent() {
        return Err(Error::Config("levels must end at d_latent".into()));
    }
    if b == 0 {
        return Ok(LossParts { rec: 0.0, aux: 0.0, total: 0.0 });
    }
    let scale = 1.0 / (b * d) as f64;
    let n_levels = levels.len();
    let mut rec = 0.0;
    let mut aux = 0.0;

    let mut level_grads = vec![vec![0.0; d]; n_levels];
    for (i, e) in batch.iter_rows().enumerate() {
        let mut main = support.main[i].clone();
        main.sort_unstable();
        let z: Vec<f64> = main.iter().map(|&j| model.preactivation(j, e)).collect();

        // nested reconstructions, accumulated prefix by prefix
        let mut running = model.decoder_bias().to_vec();
        let mut cursor = 0;
        for (l, &m) in levels.iter().enumerate() {
            while cursor < main.len() && main[cursor] < m {
                axpy(z[cursor], model.decoder_column(main[cursor]), &mut running);
                cursor += 1;
            }
            let g = &mut level_grads[l];
            for ((gi, r), x) in g.iter_mut().zip(&running).zip(e) {
                let diff = r - x;
                rec += diff * diff * scale;
                *gi = 2.0 * diff * scale;
            }
        }

        if let Some(gr) = grads.as_deref_mut() {
            // suffix sums: latent j feeds every level whose prefix exceeds j
            for l in (0..n_levels.saturating_sub(1)).rev() {
                let (head, tail) = level_grads.split_at_mut(l + 1);
                axpy(1.0, &tail[0], &mut head[l]);
            }
            axpy(1.0, &level_grads[0], &mut gr.b_dec);
            let mut level = 0;
            for (&j, &zj) in main.iter().zip(&z) {
                while levels[level] <= j {
                    level += 1;
                }
                let g = &level_grads[level];
                let dz = dot(model.decoder_column(j), g);
                axpy(zj, g, gr.atoms.row_mut(j));
                axpy(dz, e, gr.w_enc.row_mut(j));
                gr.b_enc[j] += dz;
            }
        }

        let aux_idx = &support.aux[i];
        if !aux_idx.is_empty() {
            let a: Vec<f64> = aux_idx.iter().map(|&j| model.preactivation(j, e)).collect();
            let mut recon = vec![0.0; d];
            for (&j, &aj) in aux_idx.iter().zip(&a) {
                axpy(aj, model.decoder_column(j), &mut recon);
            }
            let target = aux_target.row(i);
            let mut ga = vec![0.0; d];
            for ((g, r), t) in ga.iter_mut().zip(&recon).zip(target) {
                let diff = r - t;
                aux += diff * diff * scale;
                *g = alpha * 2.0 * diff * scale;
            }
            if let Some(gr) = grads.as_deref_mut() {
                for (&j, &aj) in aux_idx.iter().zip(&a) {
                    let da = dot(model.decoder_column(j), &ga);
                    axpy(aj, &ga, gr.atoms.row_mut(j));
                    axpy(da, e, gr.w_enc.row_mut(j));
                    gr.b_enc[j] += da;
                }
            }
        }
    }
    Ok(LossParts {
        rec,
        aux,
        total: rec + alpha * aux,
    })
}
