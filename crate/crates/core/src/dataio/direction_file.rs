//! Edit-direction files.
//!
//! ```text
//! 0   4   magic "SAEV"
//! 4   2   version = 1
//! 6   1   dtype = 2 (f64)
//! 7   4   dim
//! 11  1   method (0 single-pair, 1 svd-aggregate)
//! 12  8   rho
//! 20  8   epsilon
//! 28  4   nnz, then nnz × (u32 index, f64 value), indices strictly increasing
//! ..  4   |M|, then |M| × u32 index, strictly increasing
//! ..  4   provenance JSON length, then the JSON bytes
//! ```

use std::path::Path;

use crate::dataio::binary::{checked_u32, read_file, write_file, ByteReader, ByteWriter, DTYPE_F64};
use crate::directions::{DirectionMethod, EditDirection, Provenance};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SAEV";
const VERSION: u16 = 1;

pub fn direction_to_bytes(d: &EditDirection) -> Result<Vec<u8>> {
    if d.entries().is_empty() {
        return Err(Error::Degenerate("refusing to write a direction with empty support".into()));
    }
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u8(DTYPE_F64);
    w.u32(checked_u32(d.dim(), "dim")?);
    w.u8(match d.method() {
        DirectionMethod::SinglePair => 0,
        DirectionMethod::SvdAggregate => 1,
    });
    w.f64(d.rho());
    w.f64(d.epsilon());
    w.u32(checked_u32(d.entries().len(), "nnz")?);
    for &(i, v) in d.entries() {
        w.u32(checked_u32(i, "index")?);
        w.f64(v);
    }
    w.u32(checked_u32(d.index_set().len(), "index set size")?);
    for &i in d.index_set() {
        w.u32(checked_u32(i, "index")?);
    }
    let json = serde_json::to_string(d.provenance()).map_err(|e| Error::Data(e.to_string()))?;
    w.string(&json)?;
    Ok(w.buf)
}

pub fn direction_from_bytes(bytes: &[u8], path: &Path) -> Result<EditDirection> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    r.dtype(DTYPE_F64)?;
    let dim = r.u32("dim")? as usize;
    let method_at = r.offset();
    let method = match r.u8("method")? {
        0 => DirectionMethod::SinglePair,
        1 => DirectionMethod::SvdAggregate,
        other => return Err(r.error_at(method_at, format!("unknown method code {other}"))),
    };
    let rho = r.f64("rho")?;
    let epsilon = r.f64("epsilon")?;
    let nnz = r.u32("nnz")? as usize;
    if nnz == 0 {
        return Err(r.error_at(r.offset() - 4, "empty support"));
    }
    if nnz.saturating_mul(12) > r.remaining() {
        return Err(r.error(format!("truncated: {nnz} entries declared, {} bytes left", r.remaining())));
    }
    let mut entries = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let at = r.offset();
        let i = r.u32("index")? as usize;
        let v = r.f64("value")?;
        if i >= dim || entries.last().is_some_and(|&(p, _)| p >= i) {
            return Err(r.error_at(at, format!("index {i} out of order or out of range")));
        }
        if !v.is_finite() || v == 0.0 {
            return Err(r.error_at(at + 4, format!("invalid value {v}")));
        }
        entries.push((i, v));
    }
    let m_len = r.u32("index set size")? as usize;
    if m_len.saturating_mul(4) > r.remaining() {
        return Err(r.error(format!("truncated: {m_len} indices declared, {} bytes left", r.remaining())));
    }
    let mut index_set: Vec<usize> = Vec::with_capacity(m_len);
    for _ in 0..m_len {
        let at = r.offset();
        let i = r.u32("index")? as usize;
        if i >= dim || index_set.last().is_some_and(|&p| p >= i) {
            return Err(r.error_at(at, format!("index-set entry {i} out of order or out of range")));
        }
        index_set.push(i);
    }
    let prov_at = r.offset();
    let json = r.string("provenance")?;
    let provenance: Provenance =
        serde_json::from_str(&json).map_err(|e| r.error_at(prov_at, format!("provenance: {e}")))?;
    r.finish()?;
    EditDirection::new(dim, entries, index_set, rho, epsilon, method, provenance).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        reason: e.to_string(),
    })
}

pub fn write_direction(path: &Path, d: &EditDirection) -> Result<()> {
    write_file(path, &direction_to_bytes(d)?)
}

pub fn read_direction(path: &Path) -> Result<EditDirection> {
    direction_from_bytes(&read_file(path)?, path)
}
