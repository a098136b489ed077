use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::sae::{SparseCode, TrainConfig};

/// Sparse autoencoder: `z = relu(W_enc·e + b_enc)`, `ê = W_dec·z + b_dec`.
///
/// The decoder is held as its columns (one `d_model` atom per latent) so
/// sparse decoding touches contiguous memory; [`SaeModel::decoder`] gives
/// back the conventional `d_model × d_latent` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    w_enc: Matrix,
    b_enc: Vec<f64>,
    atoms: Matrix,
    b_dec: Vec<f64>,
    theta: Option<f64>,
    trained_with: Option<TrainConfig>,
}

impl SaeModel {
    /// Random unit-norm decoder columns with the encoder tied to the decoder transpose; zero biases.
    pub fn init(d_model: usize, d_latent: usize, seed: u64) -> Result<Self> {
        check_dims(d_model, d_latent)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut atoms = Matrix::zeros(d_latent, d_model);
        for j in 0..d_latent {
            let row = atoms.row_mut(j);
            loop {
                for x in row.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
                let n = norm(row);
                if n > 1e-12 {
                    row.iter_mut().for_each(|x| *x /= n);
                    break;
                }
            }
        }
        Ok(Self {
            w_enc: atoms.clone(),
            b_enc: vec![0.0; d_latent],
            atoms,
            b_dec: vec![0.0; d_model],
            theta: None,
            trained_with: None,
        })
    }

    /// Assembles a model from explicit weights. `w_dec` is `d_model × d_latent`.
    pub fn from_parts(
        w_enc: Matrix,
        b_enc: Vec<f64>,
        w_dec: &Matrix,
        b_dec: Vec<f64>,
        theta: Option<f64>,
    ) -> Result<Self> {
        let (d_latent, d_model) = w_enc.shape();
        check_dims(d_model, d_latent)?;
        if w_dec.shape() != (d_model, d_latent) {
            return Err(Error::Shape(format!(
                "decoder {:?} does not match encoder {:?}",
                w_dec.shape(),
                w_enc.shape()
            )));
        }
        if b_enc.len() != d_latent || b_dec.len() != d_model {
            return Err(Error::Shape("bias widths do not match weights".into()));
        }
        let model = Self {
            w_enc,
            b_enc,
            atoms: w_dec.transpose(),
            b_dec,
            theta: None,
            trained_with: None,
        };
        model.check_finite()?;
        model.with_theta(theta)
    }

    pub fn with_theta(mut self, theta: Option<f64>) -> Result<Self> {
        if let Some(t) = theta {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("threshold must be finite and >= 0, got {t}")));
            }
        }
        self.theta = theta;
        Ok(self)
    }

    pub(crate) fn set_trained_with(&mut self, cfg: Option<TrainConfig>) {
        self.trained_with = cfg;
    }

    pub fn d_model(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn d_latent(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn theta(&self) -> Option<f64> {
        self.theta
    }

    pub fn trained_with(&self) -> Option<&TrainConfig> {
        self.trained_with.as_ref()
    }

    /// `d_latent × d_model`
    pub fn encoder(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn encoder_bias(&self) -> &[f64] {
        &self.b_enc
    }

    /// `d_model × d_latent`
    pub fn decoder(&self) -> Matrix {
        self.atoms.transpose()
    }

    /// Decoder columns as rows: `d_latent × d_model`.
    pub fn decoder_atoms(&self) -> &Matrix {
        &self.atoms
    }

    #[inline]
    pub fn decoder_column(&self, j: usize) -> &[f64] {
        self.atoms.row(j)
    }

    pub fn decoder_bias(&self) -> &[f64] {
        &self.b_dec
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>, &mut Matrix, &mut Vec<f64>) {
        (&mut self.w_enc, &mut self.b_enc, &mut self.atoms, &mut self.b_dec)
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let groups: [(&str, &[f64]); 4] = [
            ("encoder weights", self.w_enc.as_slice()),
            ("encoder bias", &self.b_enc),
            ("decoder weights", self.atoms.as_slice()),
            ("decoder bias", &self.b_dec),
        ];
        for (name, data) in groups {
            if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    index,
                    context: name.into(),
                });
            }
        }
        Ok(())
    }

    /// Scales every decoder column to unit L2 norm (zero columns are left alone).
    pub fn normalize_decoder(&mut self) {
        for j in 0..self.atoms.rows() {
            let col = self.atoms.row_mut(j);
            let n = norm(col);
            if n > 0.0 {
                col.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    fn check_width(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.d_model() {
            return Err(Error::Shape(format!(
                "embedding width {} but model expects {}",
                e.len(),
                self.d_model()
            )));
        }
        Ok(())
    }

    /// Raw encoder response `W_enc·e + b_enc` for one latent.
    #[inline]
    pub(crate) fn preactivation(&self, j: usize, e: &[f64]) -> f64 {
        dot(self.w_enc.row(j), e) + self.b_enc[j]
    }

    /// Dense `W_enc·e + b_enc`, before the ReLU.
    pub fn encode_linear(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check_width(e)?;
        Ok((0..self.d_latent()).map(|j| self.preactivation(j, e)).collect())
    }

    /// Dense `relu(W_enc·e + b_enc)`.
    pub fn encode_pre(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check_width(e)?;
        Ok((0..self.d_latent())
            .map(|j| self.preactivation(j, e).max(0.0))
            .collect())
    }

    /// Inference encoding: pre-activations strictly above the threshold.
    ///
    /// Uses `threshold` when given, otherwise the calibrated `theta`.
    pub fn encode(&self, e: &[f64], threshold: Option<f64>) -> Result<SparseCode> {
        let theta = threshold.or(self.theta).ok_or_else(|| {
            Error::State("model has no calibrated threshold; calibrate or pass one explicitly".into())
        })?;
        let pre = self.encode_pre(e)?;
        Ok(SparseCode::from_sorted_unchecked(
            pre.len(),
            pre.into_iter()
                .enumerate()
                .filter(|&(_, v)| v > theta && v > 0.0)
                .collect(),
        ))
    }

    pub fn decode(&self, z: &SparseCode) -> Result<Vec<f64>> {
        if z.dim() != self.d_latent() {
            return Err(Error::Shape(format!(
                "code dim {} but model has {} latents",
                z.dim(),
                self.d_latent()
            )));
        }
        Ok(self.decode_entries_unchecked(z.active(), true))
    }

    /// `W_dec·z + b_dec` for a dense latent vector (entries may be any sign).
    pub fn decode_dense(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.d_latent() {
            return Err(Error::Shape(format!(
                "latent width {} but model has {} latents",
                z.len(),
                self.d_latent()
            )));
        }
        let mut out = self.b_dec.clone();
        for (j, &v) in z.iter().enumerate() {
            if v != 0.0 {
                axpy(v, self.atoms.row(j), &mut out);
            }
        }
        Ok(out)
    }

    /// Decodes `(index, value)` pairs, optionally adding `b_dec`.
    pub fn decode_entries(&self, entries: &[(usize, f64)], with_bias: bool) -> Result<Vec<f64>> {
        if let Some(&(i, _)) = entries.iter().find(|&&(i, _)| i >= self.d_latent()) {
            return Err(Error::Shape(format!(
                "latent index {i} out of range for {} latents",
                self.d_latent()
            )));
        }
        Ok(self.decode_entries_unchecked(entries, with_bias))
    }

    pub(crate) fn decode_entries_unchecked(&self, entries: &[(usize, f64)], with_bias: bool) -> Vec<f64> {
        let mut out = if with_bias {
            self.b_dec.clone()
        } else {
            vec![0.0; self.d_model()]
        };
        for &(j, v) in entries {
            axpy(v, self.atoms.row(j), &mut out);
        }
        out
    }
}

fn check_dims(d_model: usize, d_latent: usize) -> Result<()> {
    if d_model == 0 {
        return Err(Error::Config("d_model must be positive".into()));
    }
    if d_latent < d_model {
        return Err(Error::Config(format!(
            "latent width {d_latent} must be at least the embedding width {d_model}"
        )));
    }
    Ok(())
}
