//! Top right-singular vector by power iteration on the Gram operator `DᵀD`.
//!
//! Rows of `D` are the stacked vectors; the returned vector lives in the
//! column space (the latent dimension). Only `D·v` and `Dᵀ·u` are needed,
//! so sparse row sets never get densified into an `N × dim` matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::matrix::{axpy, dot, norm, Matrix};

/// Relative gap `(σ1 − σ2)/σ1` under which the top singular value is treated as tied.
pub const SPECTRAL_TIE_GAP: f64 = 1e-9;

/// Something that behaves like an `n_rows × dim` matrix for products.
pub trait RowOperator {
    fn n_rows(&self) -> usize;
    fn dim(&self) -> usize;
    /// `D · v`
    fn apply(&self, v: &[f64]) -> Vec<f64>;
    /// `Dᵀ · u`
    fn apply_t(&self, u: &[f64]) -> Vec<f64>;
    fn frobenius_sq(&self) -> f64;
}

impl RowOperator for Matrix {
    fn n_rows(&self) -> usize {
        self.rows()
    }
    fn dim(&self) -> usize {
        self.cols()
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.iter_rows().map(|r| dot(r, v)).collect()
    }
    fn apply_t(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for (row, &w) in self.iter_rows().zip(u) {
            axpy(w, row, &mut out);
        }
        out
    }
    fn frobenius_sq(&self) -> f64 {
        dot(self.as_slice(), self.as_slice())
    }
}

/// Rows given as sorted `(index, value)` lists over a shared dimension.
#[derive(Debug, Clone, Copy)]
pub struct SparseRows<'a> {
    pub dim: usize,
    pub rows: &'a [Vec<(usize, f64)>],
}

impl RowOperator for SparseRows<'_> {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(i, x)| x * v[i]).sum())
            .collect()
    }
    fn apply_t(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (row, &w) in self.rows.iter().zip(u) {
            for &(i, x) in row {
                out[i] += w * x;
            }
        }
        out
    }
    fn frobenius_sq(&self) -> f64 {
        self.rows.iter().flatten().map(|&(_, x)| x * x).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularPair {
    pub vector: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Dense entry point: see [`top_singular_vector_of`].
pub fn top_singular_vector(d: &Matrix, seed: u64, max_iters: usize, tol: f64) -> Result<SingularPair> {
    top_singular_vector_of(d, seed, max_iters, tol)
}

/// Unit right-singular vector for the largest singular value of `d`.
///
/// The sign is chosen so the vector has a non-negative dot product with the
/// mean row; an exact zero falls back to making the largest-magnitude entry
/// positive. A top singular value tied within [`SPECTRAL_TIE_GAP`] is an
/// error, since the direction is then not unique.
pub fn top_singular_vector_of<D: RowOperator + ?Sized>(
    d: &D,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<SingularPair> {
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    if d.n_rows() == 0 || d.dim() == 0 || d.frobenius_sq() == 0.0 {
        return Err(Error::Degenerate("zero matrix has no singular direction".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gram = |v: &[f64]| d.apply_t(&d.apply(v));

    let mut v = random_unit(d.dim(), &mut rng);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=max_iters {
        let w = gram(&v);
        let n = norm(&w);
        if n == 0.0 {
            // start landed in the null space; redraw
            v = random_unit(d.dim(), &mut rng);
            continue;
        }
        let next: Vec<f64> = w.iter().map(|x| x / n).collect();
        residual = next.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = next;
        iterations = it;
        if residual < tol {
            break;
        }
    }
    if !(residual < tol) {
        return Err(Error::Convergence {
            iters: max_iters,
            residual,
        });
    }

    let sigma = norm(&d.apply(&v));
    check_gap(d, &v, sigma, seed, max_iters, tol)?;

    let mean_row: Vec<f64> = d.apply_t(&vec![1.0 / d.n_rows() as f64; d.n_rows()]);
    let alignment = dot(&v, &mean_row);
    let flip = if alignment != 0.0 {
        alignment < 0.0
    } else {
        let (mut best, mut best_abs) = (0.0, -1.0);
        for &x in &v {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = x;
            }
        }
        best < 0.0
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(SingularPair {
        vector: v,
        value: sigma,
        iterations,
    })
}

/// Deflated power iteration for the second singular value; errors on a tie.
fn check_gap<D: RowOperator + ?Sized>(
    d: &D,
    top: &[f64],
    sigma1: f64,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<()> {
    if d.n_rows() < 2 || d.dim() < 2 {
        return Ok(());
    }
    let lambda1 = sigma1 * sigma1;
    let tie_floor = lambda1 * (1.0 - SPECTRAL_TIE_GAP).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut u = random_unit(d.dim(), &mut rng);
    orthogonalize(&mut u, top);
    let mut best_rayleigh: f64 = 0.0;
    for _ in 0..max_iters {
        let nu = norm(&u);
        if nu == 0.0 {
            return Ok(());
        }
        u.iter_mut().for_each(|x| *x /= nu);
        let mut w = d.apply_t(&d.apply(&u));
        orthogonalize(&mut w, top);
        let rayleigh = dot(&u, &w);
        best_rayleigh = best_rayleigh.max(rayleigh);
        if best_rayleigh >= tie_floor {
            let sigma2 = best_rayleigh.max(0.0).sqrt();
            return Err(Error::SpectralTie {
                gap: ((sigma1 - sigma2) / sigma1).max(0.0),
            });
        }
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(());
        }
        let next: Vec<f64> = w.iter().map(|x| x / nw).collect();
        let residual = next.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        u = next;
        if residual < tol {
            break;
        }
    }
    Ok(())
}

fn orthogonalize(x: &mut [f64], unit: &[f64]) {
    let p = dot(x, unit);
    axpy(-p, unit, x);
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
