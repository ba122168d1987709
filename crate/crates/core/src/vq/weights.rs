use std::collections::HashMap;

use super::CodebookCounts;
use crate::dataset::Codes;
use crate::pooling::{normalize_weights, PoolingWeights};
use crate::{Error, Result};

pub const DEFAULT_SIF_A: f64 = 1e-3;

/// Smoothing for SIF weights `a/(a + N(q_t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SifOptions {
    pub a: f64,
    /// Use relative frequencies `N(q)/total_frames` instead of raw counts.
    pub normalize: bool,
}

impl Default for SifOptions {
    fn default() -> Self {
        Self {
            a: DEFAULT_SIF_A,
            normalize: false,
        }
    }
}

impl SifOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::Param(format!(
                "SIF smoothing a must be > 0, got {}",
                self.a
            )));
        }
        Ok(())
    }
}

fn check_groups(codes: &Codes<'_>, counts: &CodebookCounts) -> Result<()> {
    if codes.groups() != counts.groups() {
        return Err(Error::Shape(format!(
            "utterance has {} groups, counts were built with {}",
            codes.groups(),
            counts.groups()
        )));
    }
    if codes.is_empty() {
        return Err(Error::Shape("cannot weight zero frames".into()));
    }
    Ok(())
}

/// Smooth inverse frequency over full tuples. Tuples unseen in training
/// have `N = 0` and get the maximal raw weight 1.
pub fn weights_sif(
    codes: &Codes<'_>,
    counts: &CodebookCounts,
    options: SifOptions,
) -> Result<PoolingWeights> {
    options.validate()?;
    check_groups(codes, counts)?;
    let scale = if options.normalize && counts.total_frames() > 0 {
        1.0 / counts.total_frames() as f64
    } else {
        1.0
    };
    let a = options.a;
    normalize_weights(
        codes
            .tuples()
            .map(|t| a / (a + counts.tuple_count(t) as f64 * scale))
            .collect(),
    )
}

/// `1 / Σ_g N_g(q_t^g)` from per-group counts. `lookup(g, q)` supplies the
/// count; a zero denominator yields 1.
fn inverse_group_sum(codes: &Codes<'_>, lookup: impl Fn(usize, u16) -> u64) -> Vec<f64> {
    codes
        .tuples()
        .map(|tuple| {
            let sum: u64 = tuple.iter().enumerate().map(|(g, &q)| lookup(g, q)).sum();
            if sum == 0 {
                1.0
            } else {
                1.0 / sum as f64
            }
        })
        .collect()
}

/// Global-probability weights from training-set per-group counts.
pub fn weights_gp(codes: &Codes<'_>, counts: &CodebookCounts) -> Result<PoolingWeights> {
    check_groups(codes, counts)?;
    normalize_weights(inverse_group_sum(codes, |g, q| counts.group_count(g, q)))
}

/// Local-probability weights: the GP formula with counts taken from the
/// utterance itself.
pub fn weights_lp(codes: &Codes<'_>) -> Result<PoolingWeights> {
    if codes.is_empty() {
        return Err(Error::Shape("cannot weight zero frames".into()));
    }
    let mut local: Vec<HashMap<u16, u64>> = vec![HashMap::new(); codes.groups()];
    for tuple in codes.tuples() {
        for (g, &q) in tuple.iter().enumerate() {
            *local[g].entry(q).or_insert(0) += 1;
        }
    }
    normalize_weights(inverse_group_sum(codes, |g, q| local[g][&q]))
}

/// Product of the raw LP and GP weights, renormalized.
pub fn weights_bp(codes: &Codes<'_>, counts: &CodebookCounts) -> Result<PoolingWeights> {
    let lp = weights_lp(codes)?;
    let gp = weights_gp(codes, counts)?;
    normalize_weights(lp.raw().iter().zip(gp.raw()).map(|(a, b)| a * b).collect())
}
