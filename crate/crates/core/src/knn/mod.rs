//! Nearest-neighbor classification benchmark.
//!
//! Each test embedding is labeled by its closest training embeddings,
//! found either exhaustively or through a random-projection forest.

mod forest;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::PooledEmbedding;
use crate::{Error, Result};

pub use forest::Forest;

pub const DEFAULT_TREES: usize = 16;
pub const DEFAULT_LEAF_SIZE: usize = 32;
pub const DEFAULT_SEED: u64 = 42;
/// Rows and columns shown by [`EvalReport::to_human`].
pub const HUMAN_CONFUSION_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::Config(format!(
                "unknown metric {s:?} (expected cosine or euclidean)"
            ))),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// `1 − x·y/(‖x‖‖y‖)`, clamped to `[0, 2]`; 1 if either vector is zero.
pub fn cosine_distance(x: &[f32], y: &[f32]) -> f64 {
    cosine_with_sq_norms(x, dot(x, x), y, dot(y, y))
}

// One square root of the product keeps parallel vectors at exactly 0.
fn cosine_with_sq_norms(x: &[f32], nx2: f64, y: &[f32], ny2: f64) -> f64 {
    if nx2 == 0.0 || ny2 == 0.0 {
        return 1.0;
    }
    (1.0 - dot(x, y) / (nx2 * ny2).sqrt()).clamp(0.0, 2.0)
}

pub fn euclidean_distance(x: &[f32], y: &[f32]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnConfig {
    pub trees: usize,
    pub leaf_size: usize,
    pub seed: u64,
    /// Candidates gathered before exact reranking. `None` uses
    /// [`AnnConfig::default_search_k`].
    pub search_k: Option<usize>,
}

impl Default for AnnConfig {
    fn default() -> Self {
        Self {
            trees: DEFAULT_TREES,
            leaf_size: DEFAULT_LEAF_SIZE,
            seed: DEFAULT_SEED,
            search_k: None,
        }
    }
}

impl AnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::Config("--trees must be at least 1".into()));
        }
        if self.leaf_size == 0 {
            return Err(Error::Config("--leaf-size must be at least 1".into()));
        }
        if self.search_k == Some(0) {
            return Err(Error::Config("search_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn default_search_k(&self) -> usize {
        8 * self.trees * self.leaf_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Exact,
    Ann(AnnConfig),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Ann(_) => "ann",
        }
    }
}

/// One ranked neighbor. `position` is the entry's insertion index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub position: usize,
    pub label: u32,
    pub distance: f64,
}

/// Neighbors in ascending distance, ties in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    pub neighbors: Vec<Neighbor>,
}

impl QueryResult {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct NeighborIndex {
    dim: usize,
    metric: Metric,
    backend: Backend,
    ids: Vec<String>,
    labels: Vec<u32>,
    vectors: Vec<f32>,
    sq_norms: Vec<f64>,
    forest: Option<Forest>,
}

fn unit(v: &[f32]) -> Vec<f32> {
    let n = norm(v);
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|&x| (f64::from(x) / n) as f32).collect()
    }
}

impl NeighborIndex {
    pub fn build(entries: &[PooledEmbedding], metric: Metric, backend: Backend) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Param("cannot index an empty embedding set".into()))?;
        let dim = first.vector.len();
        if dim == 0 {
            return Err(Error::Shape("embeddings have dimension 0".into()));
        }
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for e in entries {
            if e.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "embedding {:?} has dimension {}, expected {dim}",
                    e.id,
                    e.vector.len()
                )));
            }
            vectors.extend_from_slice(&e.vector);
        }
        let sq_norms: Vec<f64> = vectors.chunks_exact(dim).map(|v| dot(v, v)).collect();
        let forest = match backend {
            Backend::Exact => None,
            Backend::Ann(config) => {
                config.validate()?;
                let points: Vec<f32> = match metric {
                    Metric::Cosine => vectors.chunks_exact(dim).flat_map(unit).collect(),
                    Metric::Euclidean => vectors.clone(),
                };
                let points = forest::Points { data: &points, dim };
                Some(Forest::build(
                    &points,
                    config.trees,
                    config.leaf_size,
                    config.seed,
                ))
            }
        };
        Ok(Self {
            dim,
            metric,
            backend,
            ids: entries.iter().map(|e| e.id.clone()).collect(),
            labels: entries.iter().map(|e| e.label).collect(),
            vectors,
            sq_norms,
            forest,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn id(&self, position: usize) -> &str {
        &self.ids[position]
    }

    pub fn label(&self, position: usize) -> u32 {
        self.labels[position]
    }

    pub fn forest(&self) -> Option<&Forest> {
        self.forest.as_ref()
    }

    fn vector(&self, position: usize) -> &[f32] {
        &self.vectors[position * self.dim..(position + 1) * self.dim]
    }

    fn check_query(&self, x: &[f32], k: usize) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has dimension {}, index has {}",
                x.len(),
                self.dim
            )));
        }
        if k == 0 || k > self.len() {
            return Err(Error::Param(format!(
                "k={k} outside [1, {}] (number of indexed entries)",
                self.len()
            )));
        }
        Ok(())
    }

    fn rank(&self, x: &[f32], k: usize, candidates: impl Iterator<Item = usize>) -> QueryResult {
        let nx2 = dot(x, x);
        let mut neighbors: Vec<Neighbor> = candidates
            .map(|p| Neighbor {
                position: p,
                label: self.labels[p],
                distance: match self.metric {
                    Metric::Cosine => {
                        cosine_with_sq_norms(x, nx2, self.vector(p), self.sq_norms[p])
                    }
                    Metric::Euclidean => euclidean_distance(x, self.vector(p)),
                },
            })
            .collect();
        neighbors.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.position.cmp(&b.position))
        });
        neighbors.truncate(k);
        QueryResult { neighbors }
    }

    /// Top-`k` through the configured backend.
    pub fn query(&self, x: &[f32], k: usize) -> Result<QueryResult> {
        self.check_query(x, k)?;
        match (&self.forest, self.backend) {
            (Some(forest), Backend::Ann(config)) => {
                let budget = config
                    .search_k
                    .unwrap_or_else(|| config.default_search_k())
                    .max(k);
                let q = match self.metric {
                    Metric::Cosine => unit(x),
                    Metric::Euclidean => x.to_vec(),
                };
                let candidates = forest.candidates(&q, budget);
                Ok(self.rank(x, k, candidates.into_iter().map(|p| p as usize)))
            }
            _ => Ok(self.rank(x, k, 0..self.len())),
        }
    }

    /// Top-`k` by exhaustive search, whatever the backend.
    pub fn query_exact(&self, x: &[f32], k: usize) -> Result<QueryResult> {
        self.check_query(x, k)?;
        Ok(self.rank(x, k, 0..self.len()))
    }
}

/// Majority label among the first `k` neighbors. A tie in votes goes to
/// the tied label that appears earliest in the ranking.
pub fn classify_vote(result: &QueryResult, k: usize) -> Result<u32> {
    if k == 0 || result.len() < k {
        return Err(Error::Param(format!(
            "cannot vote over k={k} with {} neighbors",
            result.len()
        )));
    }
    // (label, votes, first rank)
    let mut tally: Vec<(u32, usize, usize)> = Vec::new();
    for (rank, n) in result.neighbors[..k].iter().enumerate() {
        match tally.iter_mut().find(|t| t.0 == n.label) {
            Some(t) => t.1 += 1,
            None => tally.push((n.label, 1, rank)),
        }
    }
    let best = tally
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .expect("k >= 1");
    Ok(best.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalConfig {
    pub metric: Metric,
    pub k: usize,
    pub backend: Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassStats {
    pub label: u32,
    pub correct: u64,
    pub total: u64,
}

impl ClassStats {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: Metric,
    pub backend: &'static str,
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub correct: u64,
    pub num_labels: usize,
    /// Predicted label per test item, in test order.
    pub predictions: Vec<u32>,
    /// Classes that occur in the test set, ascending by label.
    pub per_class: Vec<ClassStats>,
    /// `num_labels × num_labels`, row = true label, column = prediction.
    pub confusion: Vec<u64>,
    /// Fraction of test queries whose approximate top-1 is at the exact
    /// nearest distance. Only for the ANN backend.
    pub ann_recall_at_1: Option<f64>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n_test as f64
    }

    pub fn confusion_count(&self, truth: u32, predicted: u32) -> u64 {
        self.confusion[truth as usize * self.num_labels + predicted as usize]
    }

    /// `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        line("accuracy", format!("{:.6}", self.accuracy()));
        line("correct", self.correct.to_string());
        line("n_test", self.n_test.to_string());
        line("n_train", self.n_train.to_string());
        line("k", self.k.to_string());
        line("metric", self.metric.to_string());
        line("index", self.backend.to_string());
        if let Some(r) = self.ann_recall_at_1 {
            line("ann_recall_at_1", format!("{r:.6}"));
        }
        for c in &self.per_class {
            line(
                &format!("per_class.{}", c.label),
                format!("{:.6}", c.accuracy()),
            );
        }
        s
    }

    /// Full confusion matrix as tab-separated text with a header row.
    pub fn write_confusion_tsv<W: Write>(&self, mut out: W) -> Result<W> {
        write!(out, "true\\pred")?;
        for p in 0..self.num_labels {
            write!(out, "\t{p}")?;
        }
        writeln!(out)?;
        for t in 0..self.num_labels {
            write!(out, "{t}")?;
            for p in 0..self.num_labels {
                write!(out, "\t{}", self.confusion[t * self.num_labels + p])?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(out)
    }

    /// Summary for people. The confusion matrix is omitted past
    /// [`HUMAN_CONFUSION_CAP`] classes.
    pub fn to_human(&self, label_names: Option<&[String]>) -> String {
        let name = |l: usize| -> String {
            label_names
                .and_then(|n| n.get(l).cloned())
                .unwrap_or_else(|| l.to_string())
        };
        let mut s = format!(
            "accuracy {:.2}% ({}/{}), k={}, metric={}, index={}\n",
            100.0 * self.accuracy(),
            self.correct,
            self.n_test,
            self.k,
            self.metric,
            self.backend
        );
        if let Some(r) = self.ann_recall_at_1 {
            s.push_str(&format!("ann recall@1 {:.2}%\n", 100.0 * r));
        }
        for c in &self.per_class {
            s.push_str(&format!(
                "  {:<16} {:>7.2}% ({}/{})\n",
                name(c.label as usize),
                100.0 * c.accuracy(),
                c.correct,
                c.total
            ));
        }
        if self.num_labels > HUMAN_CONFUSION_CAP {
            s.push_str(&format!(
                "confusion matrix omitted ({} classes > {HUMAN_CONFUSION_CAP}); use --confusion\n",
                self.num_labels
            ));
        } else {
            s.push_str("confusion (rows true, columns predicted):\n");
            for t in 0..self.num_labels {
                let row: Vec<String> = (0..self.num_labels)
                    .map(|p| format!("{:>4}", self.confusion[t * self.num_labels + p]))
                    .collect();
                s.push_str(&format!("  {:>4} |{}\n", t, row.join("")));
            }
        }
        s
    }
}

/// Classifies every test embedding against an index built on `train`.
pub fn evaluate(
    train: &[PooledEmbedding],
    test: &[PooledEmbedding],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Param("test set is empty".into()));
    }
    let index = NeighborIndex::build(train, config.metric, config.backend)?;
    evaluate_with_index(&index, test, config.k)
}

pub fn evaluate_with_index(
    index: &NeighborIndex,
    test: &[PooledEmbedding],
    k: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Param("test set is empty".into()));
    }
    let is_ann = matches!(index.backend(), Backend::Ann(_));
    let outcomes: Vec<(u32, bool)> = test
        .par_iter()
        .map(|e| {
            let result = index.query(&e.vector, k)?;
            let predicted = classify_vote(&result, k)?;
            let hit = if is_ann {
                let exact = index.query_exact(&e.vector, 1)?;
                result.neighbors[0].distance <= exact.neighbors[0].distance
            } else {
                true
            };
            Ok((predicted, hit))
        })
        .collect::<Result<_>>()?;

    let num_labels = test
        .iter()
        .map(|e| e.label)
        .chain(index.labels.iter().copied())
        .max()
        .expect("nonempty") as usize
        + 1;
    let mut confusion = vec![0u64; num_labels * num_labels];
    let mut totals = vec![0u64; num_labels];
    let mut hits = vec![0u64; num_labels];
    for (e, &(p, _)) in test.iter().zip(&outcomes) {
        confusion[e.label as usize * num_labels + p as usize] += 1;
        totals[e.label as usize] += 1;
        if p == e.label {
            hits[e.label as usize] += 1;
        }
    }
    let per_class = (0..num_labels)
        .filter(|&l| totals[l] > 0)
        .map(|l| ClassStats {
            label: l as u32,
            correct: hits[l],
            total: totals[l],
        })
        .collect();
    let recall = is_ann.then(|| outcomes.iter().filter(|o| o.1).count() as f64 / test.len() as f64);
    Ok(EvalReport {
        metric: index.metric(),
        backend: index.backend().name(),
        k,
        n_train: index.len(),
        n_test: test.len(),
        correct: hits.iter().sum(),
        num_labels,
        predictions: outcomes.iter().map(|o| o.0).collect(),
        per_class,
        confusion,
        ann_recall_at_1: recall,
    })
}
