//! Per-token loss terms. The batched, differentiable versions live in `grad`.

use crate::error::{Error, Result};
use crate::sae::{SaeModel, SparseCode};

/// Mean squared error between two equal-width vectors.
pub fn reconstruction_loss(e: &[f64], e_hat: &[f64]) -> Result<f64> {
    if e.len() != e_hat.len() {
        return Err(Error::Shape(format!(
            "reconstruction widths {} vs {}",
            e.len(),
            e_hat.len()
        )));
    }
    if e.is_empty() {
        return Ok(0.0);
    }
    Ok(e.iter().zip(e_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / e.len() as f64)
}

/// Indices of the `aux_k` largest pre-activations among dead latents, in
/// descending order (ties broken by lower index). Non-positive values qualify.
pub(crate) fn dead_topk(pre: &[f64], dead_mask: &[bool], aux_k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..pre.len()).filter(|&j| dead_mask[j]).collect();
    cand.sort_by(|&a, &b| pre[b].total_cmp(&pre[a]).then(a.cmp(&b)));
    cand.truncate(aux_k);
    cand
}

/// Auxiliary dead-latent loss for one token.
///
/// The `aux_k` strongest dead pre-activations are decoded without the
/// decoder bias and scored by MSE against the residual `e − ê`. `pre` may be
/// linear or rectified; training passes the linear values so that latents
/// with negative pre-activation still receive gradient.
pub fn aux_loss(
    model: &SaeModel,
    e: &[f64],
    e_hat: &[f64],
    pre: &[f64],
    dead_mask: &[bool],
    aux_k: usize,
) -> Result<f64> {
    if pre.len() != model.d_latent() || dead_mask.len() != model.d_latent() {
        return Err(Error::Shape("pre-activation or dead mask width != d_latent".into()));
    }
    if e.len() != model.d_model() || e_hat.len() != model.d_model() {
        return Err(Error::Shape("embedding width != d_model".into()));
    }
    if aux_k == 0 || !dead_mask.iter().any(|d| *d) {
        return Ok(0.0);
    }
    let chosen: Vec<(usize, f64)> = dead_topk(pre, dead_mask, aux_k)
        .into_iter()
        .map(|j| (j, pre[j]))
        .collect();
    let aux_recon = model.decode_entries_unchecked(&chosen, false);
    let residual: Vec<f64> = e.iter().zip(e_hat).map(|(a, b)| a - b).collect();
    reconstruction_loss(&residual, &aux_recon)
}

/// Validates nested prefix sizes: strictly increasing, positive, ending at `d_latent`.
pub fn validate_matryoshka_sizes(sizes: &[usize], d_latent: usize) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::Config("matryoshka sizes must not be empty".into()));
    }
    if sizes[0] == 0 {
        return Err(Error::Config("matryoshka sizes must be positive".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("matryoshka sizes {sizes:?} not strictly increasing")));
    }
    if *sizes.last().unwrap() != d_latent {
        return Err(Error::Config(format!(
            "last matryoshka size must equal d_latent {d_latent}, got {}",
            sizes.last().unwrap()
        )));
    }
    Ok(())
}

/// Sum over nested prefixes `m` of the MSE obtained decoding only latents `< m`.
pub fn matryoshka_loss(model: &SaeModel, e: &[f64], z: &SparseCode, sizes: &[usize]) -> Result<f64> {
    validate_matryoshka_sizes(sizes, model.d_latent())?;
    if z.dim() != model.d_latent() {
        return Err(Error::Shape("code dim != d_latent".into()));
    }
    let mut total = 0.0;
    for &m in sizes {
        let prefix: Vec<(usize, f64)> = z.active().iter().copied().filter(|&(j, _)| j < m).collect();
        let recon = model.decode_entries_unchecked(&prefix, true);
        total += reconstruction_loss(e, &recon)?;
    }
    Ok(total)
}
