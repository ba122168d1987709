//! Weighted-sum pooling and the non-quantized baselines.
//!
//! Every frame-weighting method in the crate reduces to
//! `pooled = Σ_t ζ·w_t·C_t` with `ζ = 1/Σ_t w_t`. Sums are accumulated in
//! `f64` and the result is emitted as `f32`.

use crate::dataset::Frames;
use crate::{Error, Result};

/// Floor inside the square root of the statistics-pooling deviation.
pub const STD_EPSILON: f64 = 1e-10;

/// Nonnegative per-frame weights together with their normalizer `ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingWeights {
    weights: Vec<f64>,
    normalizer: f64,
}

impl PoolingWeights {
    pub fn raw(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `ζ·w_t` for every frame.
    pub fn effective(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().map(move |w| self.normalizer * w)
    }

    pub fn uniform(len: usize) -> Result<Self> {
        normalize_weights(vec![1.0; len])
    }
}

/// Normalizes raw weights so that `ζ·Σ w_t = 1`.
///
/// Zero, negative or non-finite weights indicate a bug upstream (every
/// method here derives weights from counts or constants) and are rejected.
pub fn normalize_weights(raw: Vec<f64>) -> Result<PoolingWeights> {
    if raw.is_empty() {
        return Err(Error::InvalidWeights("no frames".into()));
    }
    if let Some((t, w)) = raw
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::InvalidWeights(format!(
            "weight {w} at frame {t} is negative or non-finite"
        )));
    }
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        return Err(Error::InvalidWeights(format!(
            "weights sum to {sum}; at least one frame must carry positive weight"
        )));
    }
    Ok(PoolingWeights {
        weights: raw,
        normalizer: 1.0 / sum,
    })
}

fn check_nonempty(frames: &Frames<'_>) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Shape("cannot pool zero frames".into()));
    }
    Ok(())
}

/// `Σ_t ζ·w_t·C_t`.
pub fn pool_weighted(frames: &Frames<'_>, weights: &PoolingWeights) -> Result<Vec<f32>> {
    check_nonempty(frames)?;
    if weights.len() != frames.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} frames",
            weights.len(),
            frames.len()
        )));
    }
    let mut acc = vec![0f64; frames.dim()];
    for (row, coef) in frames.rows().zip(weights.effective()) {
        if coef == 0.0 {
            continue;
        }
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += coef * f64::from(x);
        }
    }
    Ok(acc.into_iter().map(|v| v as f32).collect())
}

/// Arithmetic mean over frames (`w_t = 1`, `ζ = 1/T`).
pub fn pool_average(frames: &Frames<'_>) -> Result<Vec<f32>> {
    check_nonempty(frames)?;
    pool_weighted(frames, &PoolingWeights::uniform(frames.len())?)
}

/// Mean concatenated with the per-dimension population standard deviation,
/// `sqrt(mean((x-μ)²) + ε)`. Output length is `2F`.
pub fn pool_statistics(frames: &Frames<'_>) -> Result<Vec<f32>> {
    check_nonempty(frames)?;
    let n = frames.len() as f64;
    let mut mean = vec![0f64; frames.dim()];
    for row in frames.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0f64; frames.dim()];
    for row in frames.rows() {
        for ((v, &x), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = f64::from(x) - m;
            *v += d * d;
        }
    }
    Ok(mean
        .iter()
        .map(|&m| m as f32)
        .chain(var.iter().map(|&v| (v / n + STD_EPSILON).sqrt() as f32))
        .collect())
}
