//! Corpus-level transforms of pooled embeddings: whitening and SoftDecay.
//!
//! Both are fitted on a matrix of training embeddings (one row per
//! utterance) and then applied to any embedding of the same dimension.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::wire::{self, WireReader};
use crate::linalg::{svd, Matrix};
use crate::{Error, Result};

pub const WHITENING_MAGIC: [u8; 4] = *b"SPW1";
/// Eigenvalue floor, keeps rank-deficient data finite.
pub const WHITENING_EPSILON: f64 = 1e-9;
pub const DEFAULT_SOFTDECAY_ALPHA: f64 = -0.6;

/// Affine map `x ↦ (x - μ)·W` that gives the fitting set identity
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    mean: Vec<f64>,
    transform: Matrix,
}

impl WhiteningModel {
    /// Fits on the rows of `x` (`N ≥ 2`). With `Σ = U diag(λ) Uᵀ` the
    /// population covariance, `W = U diag((λ+ε)^(-1/2))`.
    pub fn fit(x: &Matrix) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        if n < 2 {
            return Err(Error::Param(format!(
                "whitening needs at least 2 rows, got {n}"
            )));
        }
        if d == 0 {
            return Err(Error::Shape("whitening needs at least one column".into()));
        }
        if !x.is_finite() {
            return Err(Error::Numeric(
                "whitening input contains non-finite values".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = Matrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for i in 0..n {
            for ((c, v), m) in centered.iter_mut().zip(x.row(i)).zip(&mean) {
                *c = v - m;
            }
            for a in 0..d {
                let ca = centered[a];
                if ca == 0.0 {
                    continue;
                }
                for b in a..d {
                    cov[(a, b)] += ca * centered[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / n as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }

        // For a symmetric PSD matrix the right singular vectors are
        // eigenvectors and the singular values are the eigenvalues.
        let eig = svd(&cov)?;
        let mut transform = eig.v.clone();
        for (j, &lambda) in eig.singular_values.iter().enumerate() {
            let scale = 1.0 / (lambda + WHITENING_EPSILON).sqrt();
            for i in 0..d {
                transform[(i, j)] *= scale;
            }
        }
        if !transform.is_finite() {
            return Err(Error::Numeric("whitening transform is not finite".into()));
        }
        Ok(Self { mean, transform })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn transform(&self) -> &Matrix {
        &self.transform
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>> {
        Ok(self.apply_f64(x)?.into_iter().map(|v| v as f32).collect())
    }

    pub fn apply_f64(&self, x: &[f32]) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::Shape(format!(
                "embedding has dimension {}, model expects {d}",
                x.len()
            )));
        }
        let mut out = vec![0.0; d];
        for (i, (&v, m)) in x.iter().zip(&self.mean).enumerate() {
            let c = f64::from(v) - m;
            if c == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.transform.row(i)) {
                *o += c * w;
            }
        }
        Ok(out)
    }

    /// `SPW1`: magic, `D` u32, `μ` as `D` f64, `W` row-major as `D·D` f64.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<W> {
        out.write_all(&WHITENING_MAGIC)?;
        wire::put_u32(&mut out, self.dim() as u32)?;
        for &m in &self.mean {
            wire::put_f64(&mut out, m)?;
        }
        for &w in self.transform.as_slice() {
            wire::put_f64(&mut out, w)?;
        }
        out.flush()?;
        Ok(out)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = WireReader::new(input);
        let magic: [u8; 4] = r.array("magic")?;
        if magic != WHITENING_MAGIC {
            return Err(r.error(
                0,
                format!(
                    "bad magic {:?}, expected \"SPW1\"",
                    String::from_utf8_lossy(&magic)
                ),
            ));
        }
        let d = r.u32("D")? as usize;
        if d == 0 {
            return Err(r.error(4, "D must be at least 1"));
        }
        let mean = r.f64s(d, "mean")?;
        let at = r.offset();
        let w = r.f64s(
            d.checked_mul(d).ok_or_else(|| r.error(4, "D too large"))?,
            "W",
        )?;
        r.expect_eof()?;
        let transform = Matrix::from_vec(d, d, w)?;
        if !transform.is_finite() || mean.iter().any(|v| !v.is_finite()) {
            return Err(r.error(at, "model contains non-finite values"));
        }
        Ok(Self { mean, transform })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_to(BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

/// Parameter of the soft-exponential singular value map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftDecayParams {
    pub alpha: f64,
}

impl Default for SoftDecayParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_SOFTDECAY_ALPHA,
        }
    }
}

/// Soft-exponential function.
///
/// * `α < 0`: `-ln(1 - α(x + α)) / α`
/// * `α = 0`: `x`
/// * `α > 0`: `(e^(αx) - 1)/α + α`
///
/// Returns `None` where the function is undefined or overflows.
pub fn soft_exponential(alpha: f64, x: f64) -> Option<f64> {
    let y = if alpha == 0.0 {
        x
    } else if alpha < 0.0 {
        let arg = -alpha * (x + alpha);
        if arg <= -1.0 {
            return None;
        }
        -arg.ln_1p() / alpha
    } else {
        (alpha * x).exp_m1() / alpha + alpha
    };
    y.is_finite().then_some(y)
}

/// Maps singular values through `f_α`, rescaled so the largest value is
/// unchanged. Mapped values below zero are clamped to zero.
pub fn decay_singular_values(sigma: &[f64], params: SoftDecayParams) -> Result<Vec<f64>> {
    let alpha = params.alpha;
    if !alpha.is_finite() {
        return Err(Error::Param(format!(
            "SoftDecay alpha must be finite, got {alpha}"
        )));
    }
    let top = sigma.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(sigma.to_vec());
    }
    let mapped: Vec<f64> = sigma
        .iter()
        .map(|&s| {
            soft_exponential(alpha, s).ok_or_else(|| {
                Error::Param(format!(
                    "soft-exponential with alpha={alpha} is undefined at singular value {s}"
                ))
            })
        })
        .collect::<Result<_>>()?;
    let f_top = soft_exponential(alpha, top).expect("checked above");
    if f_top <= 0.0 {
        return Err(Error::Param(format!(
            "alpha={alpha} maps the top singular value {top} to {f_top} <= 0"
        )));
    }
    let scale = top / f_top;
    Ok(mapped.into_iter().map(|m| (m * scale).max(0.0)).collect())
}

/// Reshapes the spectrum of `x` (rows are embeddings): `X = U diag(σ) Vᵀ`
/// becomes `U diag(σ') Vᵀ`.
pub fn soft_decay_transform(x: &Matrix, params: SoftDecayParams) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::Param("SoftDecay needs at least one row".into()));
    }
    let mut s = svd(x)?;
    s.singular_values = decay_singular_values(&s.singular_values, params)?;
    Ok(s.reconstruct())
}

/// SoftDecay fitted on training embeddings and applicable to unseen ones:
/// each component along a right singular vector `v_i` is scaled by
/// `σ'_i/σ_i`; the orthogonal complement of the fitted row space passes
/// through unchanged.
#[derive(Debug, Clone)]
pub struct SoftDecayModel {
    basis: Matrix,
    scales: Vec<f64>,
}

impl SoftDecayModel {
    pub fn fit(x: &Matrix, params: SoftDecayParams) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Param("SoftDecay needs at least one row".into()));
        }
        let s = svd(x)?;
        let decayed = decay_singular_values(&s.singular_values, params)?;
        let scales = s
            .singular_values
            .iter()
            .zip(&decayed)
            .map(|(&old, &new)| if old > 0.0 { new / old } else { 1.0 })
            .collect();
        Ok(Self { basis: s.v, scales })
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn apply(&self, x: &[f32]) -> Result<Vec<f32>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::Shape(format!(
                "embedding has dimension {}, model expects {d}",
                x.len()
            )));
        }
        let mut out: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        for (k, &scale) in self.scales.iter().enumerate() {
            if scale == 1.0 {
                continue;
            }
            let coef: f64 = (0..d).map(|i| f64::from(x[i]) * self.basis[(i, k)]).sum();
            let delta = (scale - 1.0) * coef;
            for (i, o) in out.iter_mut().enumerate() {
                *o += delta * self.basis[(i, k)];
            }
        }
        Ok(out.into_iter().map(|v| v as f32).collect())
    }
}
