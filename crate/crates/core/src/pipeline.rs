//! Method dispatch and the train/test benchmark pipeline.

use std::fmt;

use rayon::prelude::*;

use crate::dataset::{DatasetShape, PooledEmbedding, UtteranceRecord};
use crate::knn::{evaluate, EvalConfig, EvalReport};
use crate::linalg::Matrix;
use crate::pooling::{pool_statistics, pool_weighted, PoolingWeights};
use crate::transform::{SoftDecayModel, SoftDecayParams, WhiteningModel};
use crate::vq::{
    allsquash_partition, build_counts, squash_partition, weights_bp, weights_gp, weights_lp,
    weights_sif, CodebookCounts, EqualityMode, SifOptions,
};
use crate::{Error, Result};

/// Frame-to-utterance pooling. Transforms are configured separately with
/// [`Transform`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoolingMethod {
    /// AP
    Average,
    /// SP: mean and standard deviation
    Statistics,
    Squash(EqualityMode),
    AllSquash(EqualityMode),
    Sif(SifOptions),
    /// GP
    GlobalProb,
    /// LP
    LocalProb,
    /// BP
    BothProb,
}

impl PoolingMethod {
    /// Short name as used on the command line.
    pub fn name(&self) -> &'static str {
        match self {
            PoolingMethod::Average => "ap",
            PoolingMethod::Statistics => "sp",
            PoolingMethod::Squash(_) => "squash",
            PoolingMethod::AllSquash(_) => "allsquash",
            PoolingMethod::Sif(_) => "sif",
            PoolingMethod::GlobalProb => "gp",
            PoolingMethod::LocalProb => "lp",
            PoolingMethod::BothProb => "bp",
        }
    }

    /// Parses a method name; `equality` and `sif` fill in the parameters
    /// of the methods that take them.
    pub fn parse(name: &str, equality: EqualityMode, sif: SifOptions) -> Result<Self> {
        Ok(match name {
            "ap" => PoolingMethod::Average,
            "sp" => PoolingMethod::Statistics,
            "squash" => PoolingMethod::Squash(equality),
            "allsquash" => PoolingMethod::AllSquash(equality),
            "sif" => PoolingMethod::Sif(sif),
            "gp" => PoolingMethod::GlobalProb,
            "lp" => PoolingMethod::LocalProb,
            "bp" => PoolingMethod::BothProb,
            _ => {
                return Err(Error::Config(format!(
                "unknown method {name:?} (expected ap, sp, squash, allsquash, sif, gp, lp or bp)"
            )))
            }
        })
    }

    /// Whether the method reads training-set index counts.
    pub fn needs_counts(&self) -> bool {
        matches!(
            self,
            PoolingMethod::Sif(_) | PoolingMethod::GlobalProb | PoolingMethod::BothProb
        )
    }

    /// Whether the method is a weighted frame average (everything but SP).
    pub fn has_frame_weights(&self) -> bool {
        !matches!(self, PoolingMethod::Statistics)
    }

    pub fn output_dim(&self, frame_dim: usize) -> usize {
        match self {
            PoolingMethod::Statistics => 2 * frame_dim,
            _ => frame_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PoolingMethod::Sif(options) = self {
            options
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

impl fmt::Display for PoolingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolingMethod::Squash(m) | PoolingMethod::AllSquash(m) => {
                write!(f, "{}({m})", self.name())
            }
            PoolingMethod::Sif(o) => write!(
                f,
                "sif(a={}{})",
                o.a,
                if o.normalize { ", normalized" } else { "" }
            ),
            _ => f.write_str(self.name()),
        }
    }
}

/// Post-pooling transform, fitted on training embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Transform {
    #[default]
    None,
    Whiten,
    SoftDecay(SoftDecayParams),
}

impl Transform {
    pub fn parse(name: &str, alpha: f64) -> Result<Self> {
        match name {
            "none" => Ok(Transform::None),
            "whiten" => Ok(Transform::Whiten),
            "softdecay" => {
                if !alpha.is_finite() {
                    return Err(Error::Config(format!(
                        "--alpha must be finite, got {alpha}"
                    )));
                }
                Ok(Transform::SoftDecay(SoftDecayParams { alpha }))
            }
            _ => Err(Error::Config(format!(
                "unknown transform {name:?} (expected none, whiten or softdecay)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Whiten => "whiten",
            Transform::SoftDecay(_) => "softdecay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub method: PoolingMethod,
    pub transform: Transform,
}

fn require_counts(
    method: PoolingMethod,
    counts: Option<&CodebookCounts>,
) -> Result<&CodebookCounts> {
    counts.ok_or_else(|| Error::Config(format!("method {} needs codebook counts", method.name())))
}

/// Per-frame weights of a weighted-average method.
pub fn frame_weights(
    method: PoolingMethod,
    record: &UtteranceRecord,
    counts: Option<&CodebookCounts>,
) -> Result<PoolingWeights> {
    let codes = record.codes();
    match method {
        PoolingMethod::Average => PoolingWeights::uniform(record.num_frames()),
        PoolingMethod::Statistics => Err(Error::Unsupported("sp has no per-frame weights".into())),
        PoolingMethod::Squash(mode) => squash_partition(&codes, mode)?.pooling_weights(),
        PoolingMethod::AllSquash(mode) => allsquash_partition(&codes, mode)?.pooling_weights(),
        PoolingMethod::Sif(options) => {
            weights_sif(&codes, require_counts(method, counts)?, options)
        }
        PoolingMethod::GlobalProb => weights_gp(&codes, require_counts(method, counts)?),
        PoolingMethod::LocalProb => weights_lp(&codes),
        PoolingMethod::BothProb => weights_bp(&codes, require_counts(method, counts)?),
    }
}

/// Pools one utterance.
pub fn pool_record(
    method: PoolingMethod,
    record: &UtteranceRecord,
    counts: Option<&CodebookCounts>,
) -> Result<PooledEmbedding> {
    let frames = record.frames();
    let vector = match method {
        PoolingMethod::Statistics => pool_statistics(&frames),
        _ => frame_weights(method, record, counts).and_then(|w| pool_weighted(&frames, &w)),
    }
    .map_err(|e| e.context(format!("utterance {:?}", record.id)))?;
    Ok(PooledEmbedding {
        id: record.id.clone(),
        label: record.label,
        vector,
    })
}

/// Pools every record in parallel; output keeps input order.
pub fn pool_records(
    method: PoolingMethod,
    records: &[UtteranceRecord],
    counts: Option<&CodebookCounts>,
) -> Result<Vec<PooledEmbedding>> {
    if method.needs_counts() {
        require_counts(method, counts)?;
    }
    records
        .par_iter()
        .map(|r| pool_record(method, r, counts))
        .collect()
}

/// A [`Transform`] with its fitted parameters.
#[derive(Debug, Clone)]
pub enum FittedTransform {
    None,
    Whiten(WhiteningModel),
    SoftDecay(SoftDecayModel),
}

fn embedding_matrix(embeddings: &[PooledEmbedding]) -> Result<Matrix> {
    let rows: Vec<&[f32]> = embeddings.iter().map(|e| e.vector.as_slice()).collect();
    Matrix::from_rows(&rows)
}

impl FittedTransform {
    pub fn fit(transform: Transform, embeddings: &[PooledEmbedding]) -> Result<Self> {
        Ok(match transform {
            Transform::None => FittedTransform::None,
            Transform::Whiten => {
                FittedTransform::Whiten(WhiteningModel::fit(&embedding_matrix(embeddings)?)?)
            }
            Transform::SoftDecay(params) => FittedTransform::SoftDecay(SoftDecayModel::fit(
                &embedding_matrix(embeddings)?,
                params,
            )?),
        })
    }

    pub fn apply_one(&self, x: &[f32]) -> Result<Vec<f32>> {
        match self {
            FittedTransform::None => Ok(x.to_vec()),
            FittedTransform::Whiten(m) => m.apply(x),
            FittedTransform::SoftDecay(m) => m.apply(x),
        }
    }

    /// Transforms every embedding in place.
    pub fn apply(&self, embeddings: &mut [PooledEmbedding]) -> Result<()> {
        if matches!(self, FittedTransform::None) {
            return Ok(());
        }
        embeddings.par_iter_mut().try_for_each(|e| {
            e.vector = self
                .apply_one(&e.vector)
                .map_err(|err| err.context(format!("utterance {:?}", e.id)))?;
            Ok(())
        })
    }
}

/// Pools `records`, then fits the transform on `fit_on` (or on the pooled
/// records themselves) and applies it.
pub fn pool_dataset(
    config: &PipelineConfig,
    records: &[UtteranceRecord],
    counts: Option<&CodebookCounts>,
    fit_on: Option<&[PooledEmbedding]>,
) -> Result<Vec<PooledEmbedding>> {
    let mut pooled =
        pool_records(config.method, records, counts).map_err(|e| e.context("pooling"))?;
    let fitted = FittedTransform::fit(config.transform, fit_on.unwrap_or(&pooled))
        .map_err(|e| e.context(format!("fitting {}", config.transform.name())))?;
    fitted
        .apply(&mut pooled)
        .map_err(|e| e.context("transforming"))?;
    Ok(pooled)
}

/// Everything a benchmark run produced.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: EvalReport,
    pub counts: Option<CodebookCounts>,
    pub transform: FittedTransform,
    pub train: Vec<PooledEmbedding>,
    pub test: Vec<PooledEmbedding>,
}

/// Pools both splits with one configuration and classifies the test split.
///
/// Counts (when the method needs them and none are given) and the
/// transform are fitted on `train` alone.
pub fn run_bench(
    shape: &DatasetShape,
    train: &[UtteranceRecord],
    test: &[UtteranceRecord],
    config: &PipelineConfig,
    eval: &EvalConfig,
    counts: Option<CodebookCounts>,
) -> Result<BenchOutcome> {
    config.method.validate()?;
    if eval.k == 0 || eval.k > train.len() {
        return Err(Error::Param(format!(
            "k={} outside [1, {}] (number of training utterances)",
            eval.k,
            train.len()
        )));
    }
    let counts = match counts {
        Some(c) => Some(c),
        None if config.method.needs_counts() => {
            Some(build_counts(shape, train).map_err(|e| e.context("counting train indices"))?)
        }
        None => None,
    };
    let mut train_pooled = pool_records(config.method, train, counts.as_ref())
        .map_err(|e| e.context("pooling train"))?;
    let mut test_pooled = pool_records(config.method, test, counts.as_ref())
        .map_err(|e| e.context("pooling test"))?;
    let transform = FittedTransform::fit(config.transform, &train_pooled)
        .map_err(|e| e.context(format!("fitting {} on train", config.transform.name())))?;
    transform
        .apply(&mut train_pooled)
        .map_err(|e| e.context("transforming train"))?;
    transform
        .apply(&mut test_pooled)
        .map_err(|e| e.context("transforming test"))?;
    let report =
        evaluate(&train_pooled, &test_pooled, eval).map_err(|e| e.context("evaluating"))?;
    Ok(BenchOutcome {
        report,
        counts,
        transform,
        train: train_pooled,
        test: test_pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: u32, c: Vec<f32>, q: Vec<u16>) -> UtteranceRecord {
        let f = c.len() / q.len();
        UtteranceRecord::new(id, label, f, 1, c, q).unwrap()
    }

    #[test]
    fn parse_names() {
        let sif = SifOptions::default();
        for name in ["ap", "sp", "squash", "allsquash", "sif", "gp", "lp", "bp"] {
            let m = PoolingMethod::parse(name, EqualityMode::And, sif).unwrap();
            assert_eq!(m.name(), name);
        }
        assert!(PoolingMethod::parse("sap", EqualityMode::And, sif).is_err());
        assert!(Transform::parse("pca", 0.0).is_err());
        assert!(Transform::parse("softdecay", f64::NAN).is_err());
    }

    #[test]
    fn dims_and_dispatch() {
        let r = rec("u", 0, vec![1.0, 3.0, 3.0, 5.0, 2.0, 0.0], vec![0, 0, 1]);
        let ap = pool_record(PoolingMethod::Average, &r, None).unwrap();
        assert_eq!(ap.vector, vec![2.0, 8.0 / 3.0]);
        let sp = pool_record(PoolingMethod::Statistics, &r, None).unwrap();
        assert_eq!(sp.vector.len(), 4);
        let lp = pool_record(PoolingMethod::LocalProb, &r, None).unwrap();
        // [0.25, 0.25, 0.5]
        assert_eq!(
            lp.vector,
            vec![1.0 * 0.25 + 3.0 * 0.25 + 1.0, 3.0 * 0.25 + 5.0 * 0.25]
        );
    }

    #[test]
    fn squash_matches_lp_on_run_example() {
        let r = rec("u", 0, vec![1.0, 2.0, 7.0], vec![4, 4, 9]);
        let s = frame_weights(PoolingMethod::Squash(EqualityMode::And), &r, None).unwrap();
        let eff: Vec<f64> = s.effective().collect();
        assert_eq!(eff, vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn missing_counts_is_config_error() {
        let r = rec("u", 0, vec![1.0], vec![0]);
        for m in [
            PoolingMethod::GlobalProb,
            PoolingMethod::BothProb,
            PoolingMethod::Sif(SifOptions::default()),
        ] {
            let err = pool_records(m, std::slice::from_ref(&r), None).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{err}");
        }
        assert!(matches!(
            frame_weights(PoolingMethod::Statistics, &r, None),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn errors_name_the_utterance() {
        let r = rec("bad-one", 0, vec![1.0], vec![0]);
        let counts = CodebookCounts::new(2, 4);
        let err = pool_records(PoolingMethod::GlobalProb, &[r], Some(&counts)).unwrap_err();
        assert!(err.to_string().contains("bad-one"), "{err}");
    }

    #[test]
    fn bench_k_bounds() {
        let shape = DatasetShape {
            dim: 1,
            groups: 1,
            codebook_size: 2,
            num_labels: 2,
        };
        let train = [
            rec("a", 0, vec![1.0], vec![0]),
            rec("b", 1, vec![-1.0], vec![1]),
        ];
        let config = PipelineConfig {
            method: PoolingMethod::Average,
            transform: Transform::None,
        };
        let eval = EvalConfig {
            k: 3,
            ..Default::default()
        };
        assert!(run_bench(&shape, &train, &train, &config, &eval, None).is_err());
        let eval = EvalConfig {
            k: 1,
            ..Default::default()
        };
        let out = run_bench(&shape, &train, &train, &config, &eval, None).unwrap();
        assert_eq!(out.report.accuracy(), 1.0);
    }
}
