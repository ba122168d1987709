use std::collections::HashMap;

use super::{frames_equal, EqualityMode};
use crate::dataset::{Codes, Frames};
use crate::pooling::{normalize_weights, pool_weighted, PoolingWeights};
use crate::{Error, Result};

/// A partition of the frame indices `0..T` into nonempty disjoint sets.
///
/// Sets are kept sorted internally and ordered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePartition {
    parts: Vec<Vec<usize>>,
    frames: usize,
}

impl FramePartition {
    /// Validates and canonicalizes `parts` as a partition of `0..frames`.
    pub fn new(mut parts: Vec<Vec<usize>>, frames: usize) -> Result<Self> {
        let mut seen = vec![false; frames];
        for part in &mut parts {
            if part.is_empty() {
                return Err(Error::Shape("partition contains an empty set".into()));
            }
            part.sort_unstable();
            for &t in part.iter() {
                if t >= frames {
                    return Err(Error::Shape(format!("frame {t} outside 0..{frames}")));
                }
                if std::mem::replace(&mut seen[t], true) {
                    return Err(Error::Shape(format!("frame {t} appears in two sets")));
                }
            }
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return Err(Error::Shape(format!("frame {t} is not covered")));
        }
        parts.sort_unstable_by_key(|p| p[0]);
        Ok(Self { parts, frames })
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    /// Raw weights `w_t = 1/|P(t)|`. They sum to the number of sets.
    pub fn frame_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.frames];
        for part in &self.parts {
            let share = 1.0 / part.len() as f64;
            for &t in part {
                w[t] = share;
            }
        }
        w
    }

    pub fn pooling_weights(&self) -> Result<PoolingWeights> {
        normalize_weights(self.frame_weights())
    }
}

/// Merges runs of consecutive equal frames, like collapsing repeats in CTC
/// greedy decoding. Frame `t` joins the current run iff it equals frame
/// `t-1` under `mode`.
pub fn squash_partition(codes: &Codes<'_>, mode: EqualityMode) -> Result<FramePartition> {
    if codes.is_empty() {
        return Err(Error::Shape("cannot partition zero frames".into()));
    }
    let mut parts: Vec<Vec<usize>> = vec![vec![0]];
    for t in 1..codes.len() {
        if frames_equal(codes.tuple(t), codes.tuple(t - 1), mode) {
            parts.last_mut().expect("nonempty").push(t);
        } else {
            parts.push(vec![t]);
        }
    }
    Ok(FramePartition {
        parts,
        frames: codes.len(),
    })
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// Merges all occurrences of equal frames anywhere in the utterance.
///
/// Under `And` this groups frames by identical tuple. `Or` equality is not
/// transitive, so the partition is the set of connected components of the
/// graph joining every pair of frames that share an index in some group.
pub fn allsquash_partition(codes: &Codes<'_>, mode: EqualityMode) -> Result<FramePartition> {
    if codes.is_empty() {
        return Err(Error::Shape("cannot partition zero frames".into()));
    }
    let frames = codes.len();
    let mut sets = DisjointSet::new(frames);
    match mode {
        EqualityMode::And => {
            let mut first: HashMap<&[u16], usize> = HashMap::new();
            for (t, tuple) in codes.tuples().enumerate() {
                let anchor = *first.entry(tuple).or_insert(t);
                sets.union(anchor, t);
            }
        }
        EqualityMode::Or => {
            for g in 0..codes.groups() {
                let mut first: HashMap<u16, usize> = HashMap::new();
                for t in 0..frames {
                    let anchor = *first.entry(codes.tuple(t)[g]).or_insert(t);
                    sets.union(anchor, t);
                }
            }
        }
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut parts: Vec<Vec<usize>> = Vec::new();
    for t in 0..frames {
        let root = sets.find(t);
        let i = *slot.entry(root).or_insert_with(|| {
            parts.push(Vec::new());
            parts.len() - 1
        });
        parts[i].push(t);
    }
    Ok(FramePartition { parts, frames })
}

/// Mean of per-set means: `(1/|S|) Σ_P (1/|P|) Σ_{t∈P} C_t`.
pub fn pool_squashed(frames: &Frames<'_>, partition: &FramePartition) -> Result<Vec<f32>> {
    if partition.num_frames() != frames.len() {
        return Err(Error::Shape(format!(
            "partition covers {} frames, utterance has {}",
            partition.num_frames(),
            frames.len()
        )));
    }
    pool_weighted(frames, &partition.pooling_weights()?)
}
