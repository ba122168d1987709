//! Synthetic utterances with a known amount of class-uninformative content.
//!
//! Every class owns a few "keyword" states, each with its own centroid and
//! its own codebook tuple. All classes share a couple of "filler" states
//! (think silence or background noise) whose tuples use indices no keyword
//! ever uses. Filler frames additionally carry a random per-utterance
//! offset, so averaging every frame mostly measures that offset while the
//! class signal sits in the minority of keyword frames.
//!
//! Frame counts per state are spread evenly inside each utterance, so when
//! more than half of every utterance is filler, each filler tuple is counted
//! more often over the whole set than any keyword tuple.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DatasetShape, UtteranceRecord};
use crate::{Error, Result};

pub const FILLER_STATES: usize = 2;
pub const KEYWORD_STATES_PER_CLASS: usize = 4;
const MAX_RUN: usize = 6;
/// Shortest utterance for which the filler-dominance guarantee holds.
pub const MIN_FRAMES: u32 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: u32,
    pub train_per_class: u32,
    pub test_per_class: u32,
    pub dim: u32,
    pub groups: u32,
    pub codebook_size: u32,
    /// Utterance lengths are drawn uniformly from `min_frames..=max_frames`.
    pub min_frames: u32,
    pub max_frames: u32,
    /// Fraction of each utterance made of filler frames, in `[0, 1)`.
    pub filler_fraction: f64,
    /// Standard deviation of per-frame Gaussian noise.
    pub noise: f64,
    /// Standard deviation of the per-utterance offset added to filler frames.
    pub drift: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            train_per_class: 50,
            test_per_class: 20,
            dim: 32,
            groups: 2,
            codebook_size: 32,
            min_frames: 20,
            max_frames: 80,
            filler_fraction: 0.8,
            noise: 0.5,
            drift: 1.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn shape(&self) -> DatasetShape {
        DatasetShape {
            dim: self.dim,
            groups: self.groups,
            codebook_size: self.codebook_size,
            num_labels: self.classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.classes == 0 || self.train_per_class == 0 {
            return bad("need at least one class and one training utterance per class".into());
        }
        if self.dim == 0 || self.groups == 0 {
            return bad("dim and groups must be at least 1".into());
        }
        if self.codebook_size as usize <= FILLER_STATES || self.codebook_size > 1 << 16 {
            return bad(format!(
                "codebook size must be in ({FILLER_STATES}, 65536], got {}",
                self.codebook_size
            ));
        }
        let base = (self.codebook_size as usize - FILLER_STATES) as u128;
        let capacity = (0..self.groups).try_fold(1u128, |acc, _| acc.checked_mul(base));
        let needed = self.classes as u128 * KEYWORD_STATES_PER_CLASS as u128;
        if capacity.is_some_and(|c| c < needed) {
            return bad(format!(
                "{needed} keyword tuples do not fit in ({base})^{} codes",
                self.groups
            ));
        }
        if self.min_frames < MIN_FRAMES || self.max_frames < self.min_frames {
            return bad(format!(
                "frame range must satisfy {MIN_FRAMES} <= min <= max, got {}..={}",
                self.min_frames, self.max_frames
            ));
        }
        if !(0.0..1.0).contains(&self.filler_fraction) {
            return bad(format!(
                "filler fraction must be in [0, 1), got {}",
                self.filler_fraction
            ));
        }
        for (name, v) in [("noise", self.noise), ("drift", self.drift)] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`]. Train and test come from the same
/// states and centroids; their ids are disjoint.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub shape: DatasetShape,
    pub train: Vec<UtteranceRecord>,
    pub test: Vec<UtteranceRecord>,
    pub label_names: Vec<String>,
    pub filler_tuples: Vec<Vec<u16>>,
    /// Keyword tuples per class.
    pub keyword_tuples: Vec<Vec<Vec<u16>>>,
}

struct State {
    centroid: Vec<f32>,
    tuple: Vec<u16>,
}

struct World {
    filler: Vec<State>,
    keywords: Vec<Vec<State>>,
}

fn gaussian(rng: &mut ChaCha8Rng, scale: f64, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|_| (scale * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect()
}

fn build_world(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> World {
    let dim = spec.dim as usize;
    let groups = spec.groups as usize;
    let filler = (0..FILLER_STATES)
        .map(|s| State {
            centroid: gaussian(rng, 1.0, dim),
            tuple: vec![s as u16; groups],
        })
        .collect();

    // Keyword tuples: mixed-radix digits over the non-filler indices, each
    // group scrambled by its own permutation.
    let base = spec.codebook_size as usize - FILLER_STATES;
    let perms: Vec<Vec<u16>> = (0..groups)
        .map(|_| {
            let mut p: Vec<u16> = (FILLER_STATES..spec.codebook_size as usize)
                .map(|v| v as u16)
                .collect();
            p.shuffle(rng);
            p
        })
        .collect();
    let tuple_for = |j: usize| -> Vec<u16> {
        let mut rest = j;
        perms
            .iter()
            .map(|perm| {
                let digit = rest % base;
                rest /= base;
                perm[digit]
            })
            .collect()
    };
    let keywords = (0..spec.classes as usize)
        .map(|c| {
            (0..KEYWORD_STATES_PER_CLASS)
                .map(|k| State {
                    centroid: gaussian(rng, 1.0, dim),
                    tuple: tuple_for(c * KEYWORD_STATES_PER_CLASS + k),
                })
                .collect()
        })
        .collect();
    World { filler, keywords }
}

/// Splits `total` frames over `states` as evenly as possible, with the
/// remainder going to a random run of states.
fn spread(total: usize, states: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut counts = vec![total / states; states];
    let start = rng.random_range(0..states);
    for i in 0..total % states {
        counts[(start + i) % states] += 1;
    }
    counts
}

fn push_runs<'a>(
    runs: &mut Vec<(&'a State, bool, usize)>,
    state: &'a State,
    filler: bool,
    mut count: usize,
    rng: &mut ChaCha8Rng,
) {
    while count > 0 {
        let len = rng.random_range(1..=MAX_RUN).min(count);
        runs.push((state, filler, len));
        count -= len;
    }
}

fn utterance(
    spec: &SyntheticSpec,
    world: &World,
    class: usize,
    id: String,
    rng: &mut ChaCha8Rng,
) -> UtteranceRecord {
    let dim = spec.dim as usize;
    let frames = rng.random_range(spec.min_frames..=spec.max_frames) as usize;
    let keyword_frames = if spec.filler_fraction == 0.0 {
        frames
    } else {
        // the small offset keeps e.g. (1 - 0.8) * 5 from flooring to 0
        (((1.0 - spec.filler_fraction) * frames as f64 + 1e-9).floor() as usize).max(1)
    };
    let filler_frames = frames - keyword_frames;
    let drift = gaussian(rng, spec.drift, dim);

    // (state, is_filler, run length)
    let mut runs: Vec<(&State, bool, usize)> = Vec::new();
    for (state, n) in world
        .filler
        .iter()
        .zip(spread(filler_frames, FILLER_STATES, rng))
    {
        push_runs(&mut runs, state, true, n, rng);
    }
    let own = &world.keywords[class];
    for (state, n) in own
        .iter()
        .zip(spread(keyword_frames, KEYWORD_STATES_PER_CLASS, rng))
    {
        push_runs(&mut runs, state, false, n, rng);
    }
    runs.shuffle(rng);

    let mut features = Vec::with_capacity(frames * dim);
    let mut indices = Vec::with_capacity(frames * spec.groups as usize);
    for (state, filler, len) in runs {
        for _ in 0..len {
            for (&c, &shift) in state.centroid.iter().zip(&drift) {
                let mut v = f64::from(c) + spec.noise * rng.sample::<f64, _>(StandardNormal);
                if filler {
                    v += f64::from(shift);
                }
                features.push(v as f32);
            }
            indices.extend_from_slice(&state.tuple);
        }
    }
    UtteranceRecord::new(
        id,
        class as u32,
        dim,
        spec.groups as usize,
        features,
        indices,
    )
    .expect("generator builds consistent shapes")
}

/// Deterministic synthetic train/test split for `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut world_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let world = build_world(spec, &mut world_rng);

    let split = |name: &str, per_class: u32, stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let mut out = Vec::with_capacity((spec.classes * per_class) as usize);
        let mut n = 0usize;
        for _ in 0..per_class {
            for class in 0..spec.classes as usize {
                out.push(utterance(
                    spec,
                    &world,
                    class,
                    format!("{name}-{n:06}"),
                    &mut rng,
                ));
                n += 1;
            }
        }
        out
    };
    let train = split("train", spec.train_per_class, 1);
    let test = split("test", spec.test_per_class, 2);

    Ok(SyntheticDataset {
        shape: spec.shape(),
        train,
        test,
        label_names: (0..spec.classes).map(|c| format!("class_{c:02}")).collect(),
        filler_tuples: world.filler.iter().map(|s| s.tuple.clone()).collect(),
        keyword_tuples: world
            .keywords
            .iter()
            .map(|ks| ks.iter().map(|s| s.tuple.clone()).collect())
            .collect(),
    })
}
