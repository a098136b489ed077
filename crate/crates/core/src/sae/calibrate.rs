use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sae::sparsity::batch_topk;
use crate::sae::SaeModel;

/// Sets the inference threshold to the mean, over calibration batches, of
/// the smallest activation surviving BatchTopK at `k`.
///
/// Batches with no surviving activation contribute nothing.
pub fn calibrate_threshold<I>(model: SaeModel, batches: I, k: usize) -> Result<SaeModel>
where
    I: IntoIterator<Item = Matrix>,
{
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut minima = Vec::new();
    let mut seen = 0usize;
    for batch in batches {
        seen += 1;
        let pre: Vec<Vec<f64>> = batch
            .iter_rows()
            .map(|e| model.encode_pre(e))
            .collect::<Result<_>>()?;
        let smallest = batch_topk(&pre, k)
            .iter()
            .flat_map(|c| c.active().iter().map(|&(_, v)| v))
            .fold(f64::INFINITY, f64::min);
        if smallest.is_finite() {
            minima.push(smallest);
        }
    }
    if seen == 0 {
        return Err(Error::Data("calibration stream is empty".into()));
    }
    if minima.is_empty() {
        return Err(Error::Data("no calibration batch produced an active latent".into()));
    }
    let theta = minima.iter().sum::<f64>() / minima.len() as f64;
    model.with_theta(Some(theta.max(0.0)))
}
