//! SAE checkpoint files.
//!
//! ```text
//! 0   4   magic "SAEC"
//! 4   2   version = 1
//! 6   1   dtype = 2 (f64)
//! 7   4   d_model
//! 11  4   d_latent
//! 15  1   theta present (0/1)
//! 16  8   theta (0.0 when absent)
//! 24  4   training-config JSON length (0 = none), then the JSON bytes
//! ..      W_enc (d_latent × d_model), b_enc, W_dec (d_model × d_latent), b_dec
//! ```
//!
//! Parameters are stored at full f64 width so a reload is bit-identical.

use std::path::Path;

use crate::dataio::binary::{checked_u32, read_file, write_file, ByteReader, ByteWriter, DTYPE_F64};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::sae::{SaeModel, TrainConfig};

const MAGIC: &[u8; 4] = b"SAEC";
const VERSION: u16 = 1;

pub fn checkpoint_to_bytes(model: &SaeModel) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u8(DTYPE_F64);
    w.u32(checked_u32(model.d_model(), "d_model")?);
    w.u32(checked_u32(model.d_latent(), "d_latent")?);
    w.u8(u8::from(model.theta().is_some()));
    w.f64(model.theta().unwrap_or(0.0));
    match model.trained_with() {
        Some(cfg) => {
            let json = serde_json::to_string(cfg).map_err(|e| Error::Data(e.to_string()))?;
            w.string(&json)?;
        }
        None => w.u32(0),
    }
    w.f64s(model.encoder().as_slice());
    w.f64s(model.encoder_bias());
    w.f64s(model.decoder().as_slice());
    w.f64s(model.decoder_bias());
    Ok(w.buf)
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<SaeModel> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    r.dtype(DTYPE_F64)?;
    let dims_at = r.offset();
    let d_model = r.u32("d_model")? as usize;
    let d_latent = r.u32("d_latent")? as usize;
    if d_model == 0 || d_latent < d_model {
        return Err(r.error_at(dims_at, format!("invalid widths d_model={d_model} d_latent={d_latent}")));
    }
    let flag_at = r.offset();
    let has_theta = match r.u8("theta flag")? {
        0 => false,
        1 => true,
        other => return Err(r.error_at(flag_at, format!("theta flag {other} is not 0 or 1"))),
    };
    let theta_at = r.offset();
    let theta = r.f64("theta")?;
    if has_theta && !(theta.is_finite() && theta >= 0.0) {
        return Err(r.error_at(theta_at, format!("invalid theta {theta}")));
    }
    let cfg_at = r.offset();
    let cfg_json = r.string("training config")?;
    let trained_with = if cfg_json.is_empty() {
        None
    } else {
        Some(
            serde_json::from_str::<TrainConfig>(&cfg_json)
                .map_err(|e| r.error_at(cfg_at, format!("training config: {e}")))?,
        )
    };
    let n_w = d_model.saturating_mul(d_latent);
    let w_enc = r.f64_vec(n_w, "encoder weights")?;
    let b_enc = r.f64_vec(d_latent, "encoder bias")?;
    let w_dec = r.f64_vec(n_w, "decoder weights")?;
    let b_dec = r.f64_vec(d_model, "decoder bias")?;
    r.finish()?;
    let mut model = SaeModel::from_parts(
        Matrix::from_vec(d_latent, d_model, w_enc)?,
        b_enc,
        &Matrix::from_vec(d_model, d_latent, w_dec)?,
        b_dec,
        has_theta.then_some(theta),
    )?;
    model.set_trained_with(trained_with);
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &SaeModel) -> Result<()> {
    write_file(path, &checkpoint_to_bytes(model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<SaeModel> {
    checkpoint_from_bytes(&read_file(path)?, path)
}
