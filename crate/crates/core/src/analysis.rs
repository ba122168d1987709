//! Pooling-weight analysis: KL divergence between per-frame weight
//! distributions, and a text format for exchanging them.
//!
//! A weights file has one line per utterance:
//! `id<TAB>T<TAB>p_1<TAB>…<TAB>p_T`, probabilities written with 9
//! significant digits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::dataset::UtteranceRecord;
use crate::pipeline::{frame_weights, PoolingMethod};
use crate::pooling::PoolingWeights;
use crate::vq::CodebookCounts;
use crate::{Error, Result};

/// Replaces zero entries of the second KL argument.
pub const KL_EPSILON: f64 = 1e-12;
/// Allowed deviation of a distribution's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-6;
pub const SIGNIFICANT_DIGITS: usize = 9;

/// Per-frame probabilities of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDistribution {
    pub id: String,
    probabilities: Vec<f64>,
}

impl WeightDistribution {
    pub fn new(id: impl Into<String>, probabilities: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if probabilities.is_empty() {
            return Err(Error::InvalidWeights(format!("{id:?}: no frames")));
        }
        if let Some(p) = probabilities
            .iter()
            .find(|p| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::InvalidWeights(format!(
                "{id:?}: invalid probability {p}"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "{id:?}: probabilities sum to {sum}"
            )));
        }
        Ok(Self { id, probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// `ζ·w_t` for every frame.
pub fn weights_to_distribution(
    id: impl Into<String>,
    weights: &PoolingWeights,
) -> WeightDistribution {
    WeightDistribution {
        id: id.into(),
        probabilities: weights.effective().collect(),
    }
}

/// `D_KL(P ∥ Q) = Σ_t P_t ln(P_t/Q_t)` in nats. Terms with `P_t = 0`
/// vanish; a zero `Q_t` is replaced by [`KL_EPSILON`].
pub fn kl_divergence(p: &WeightDistribution, q: &WeightDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!(
            "{:?} has {} frames, {:?} has {}",
            p.id,
            p.len(),
            q.id,
            q.len()
        )));
    }
    Ok(p.probabilities
        .iter()
        .zip(&q.probabilities)
        .filter(|(&pt, _)| pt > 0.0)
        .map(|(&pt, &qt)| {
            let qt = if qt == 0.0 { KL_EPSILON } else { qt };
            pt * (pt / qt).ln()
        })
        .sum())
}

/// `v` with [`SIGNIFICANT_DIGITS`] significant digits in plain decimal
/// notation.
pub fn format_probability(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (SIGNIFICANT_DIGITS as i64 - 1 - magnitude).clamp(0, 340) as usize;
    format!("{v:.decimals$}")
}

pub fn write_weights_line<W: Write>(out: &mut W, dist: &WeightDistribution) -> Result<()> {
    if dist.id.contains(['\t', '\n', '\r']) {
        return Err(Error::InvalidWeights(format!(
            "id {:?} contains a tab or line break",
            dist.id
        )));
    }
    write!(out, "{}\t{}", dist.id, dist.len())?;
    for &p in &dist.probabilities {
        write!(out, "\t{}", format_probability(p))?;
    }
    writeln!(out)?;
    Ok(())
}

/// Parses a weights file. Empty lines are skipped.
pub fn read_weights<R: BufRead>(input: R) -> Result<Vec<WeightDistribution>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let at = offset;
        offset += line.len() as u64 + 1;
        let err = |m: String| Error::parse(at, Some(n as u64), format!("line {}: {m}", n + 1));
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        let t: usize = fields
            .next()
            .ok_or_else(|| err("missing frame count".into()))?
            .parse()
            .map_err(|e| err(format!("bad frame count: {e}")))?;
        let probabilities: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| err(format!("bad probability {f:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if probabilities.len() != t {
            return Err(err(format!(
                "declares {t} frames but has {} probabilities",
                probabilities.len()
            )));
        }
        out.push(WeightDistribution::new(id, probabilities).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_weights(path: &Path) -> Result<Vec<WeightDistribution>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_weights(BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
}

/// KL of each candidate row against the reference row with the same id.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightComparison {
    /// `(id, KL(reference ∥ candidate))` in reference order.
    pub per_utterance: Vec<(String, f64)>,
    pub mean: f64,
    pub median: f64,
}

impl WeightComparison {
    pub fn to_key_value(&self) -> String {
        format!(
            "n={}\nmean_kl={:.9}\nmedian_kl={:.9}\n",
            self.per_utterance.len(),
            self.mean,
            self.median
        )
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<W> {
        for (id, kl) in &self.per_utterance {
            writeln!(out, "{id}\t{kl:.9}")?;
        }
        out.flush()?;
        Ok(out)
    }
}

fn id_list(ids: &[&str]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids
        .iter()
        .take(SHOWN)
        .map(|i| format!("{i:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(" and {} more", ids.len() - SHOWN));
    }
    s
}

pub fn compare_weights(
    reference: &[WeightDistribution],
    candidate: &[WeightDistribution],
) -> Result<WeightComparison> {
    let mut by_id: HashMap<&str, &WeightDistribution> = HashMap::new();
    for c in candidate {
        if by_id.insert(&c.id, c).is_some() {
            return Err(Error::Mismatch(format!("candidate repeats id {:?}", c.id)));
        }
    }
    let mut seen = HashMap::new();
    for r in reference {
        if seen.insert(r.id.as_str(), ()).is_some() {
            return Err(Error::Mismatch(format!("reference repeats id {:?}", r.id)));
        }
    }
    let missing: Vec<&str> = reference
        .iter()
        .filter(|r| !by_id.contains_key(r.id.as_str()))
        .map(|r| r.id.as_str())
        .collect();
    let extra: Vec<&str> = candidate
        .iter()
        .filter(|c| !seen.contains_key(c.id.as_str()))
        .map(|c| c.id.as_str())
        .collect();
    let lengths: Vec<&str> = reference
        .iter()
        .filter(|r| by_id.get(r.id.as_str()).is_some_and(|c| c.len() != r.len()))
        .map(|r| r.id.as_str())
        .collect();
    let mut problems = Vec::new();
    if !missing.is_empty() {
        problems.push(format!("missing from candidate: {}", id_list(&missing)));
    }
    if !extra.is_empty() {
        problems.push(format!("not in reference: {}", id_list(&extra)));
    }
    if !lengths.is_empty() {
        problems.push(format!("frame counts differ: {}", id_list(&lengths)));
    }
    if !problems.is_empty() {
        return Err(Error::Mismatch(format!(
            "weight files disagree; {}",
            problems.join("; ")
        )));
    }
    if reference.is_empty() {
        return Err(Error::Mismatch("weight files are empty".into()));
    }
    let per_utterance: Vec<(String, f64)> = reference
        .iter()
        .map(|r| Ok((r.id.clone(), kl_divergence(r, by_id[r.id.as_str()])?)))
        .collect::<Result<_>>()?;
    let mut values: Vec<f64> = per_utterance.iter().map(|p| p.1).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    let median = if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    };
    Ok(WeightComparison {
        per_utterance,
        mean,
        median,
    })
}

pub fn compare_weight_files(reference: &Path, candidate: &Path) -> Result<WeightComparison> {
    compare_weights(&load_weights(reference)?, &load_weights(candidate)?)
}

/// Writes the per-frame weights of `method` for every record, in order.
pub fn export_weights<W: Write>(
    records: &[UtteranceRecord],
    method: PoolingMethod,
    counts: Option<&CodebookCounts>,
    mut out: W,
) -> Result<W> {
    if !method.has_frame_weights() {
        return Err(Error::Unsupported(format!(
            "{} does not produce per-frame weights",
            method.name()
        )));
    }
    for record in records {
        let w = frame_weights(method, record, counts)
            .map_err(|e| e.context(format!("utterance {:?}", record.id)))?;
        write_weights_line(&mut out, &weights_to_distribution(record.id.clone(), &w))?;
    }
    out.flush()?;
    Ok(out)
}

pub fn export_weights_file(
    records: &[UtteranceRecord],
    method: PoolingMethod,
    counts: Option<&CodebookCounts>,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    export_weights(records, method, counts, BufWriter::new(file))?;
    Ok(())
}
