//! Property tests for the invariants of the formats, pooling, partitions,
//! weights, transforms and nearest-neighbor evaluation.

mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::*;
use vqpool::analysis::{kl_divergence, read_weights, write_weights_line, WeightDistribution};
use vqpool::dataset::{
    read_dataset, read_embeddings, write_dataset, write_embeddings, DatasetShape, Frames,
    PooledEmbedding, UtteranceRecord,
};
use vqpool::knn::{
    classify_vote, cosine_distance, evaluate, Backend, EvalConfig, Metric, NeighborIndex,
};
use vqpool::linalg::Matrix;
use vqpool::pipeline::{frame_weights, pool_record, PoolingMethod};
use vqpool::pooling::{normalize_weights, pool_average, pool_weighted, PoolingWeights};
use vqpool::transform::WhiteningModel;
use vqpool::vq::{
    allsquash_partition, build_counts, squash_partition, weights_gp, weights_sif, CodebookCounts,
    EqualityMode, SifOptions,
};

/// Sizes plus a seed; the seed drives the contents.
#[derive(Debug, Clone, Copy)]
struct Dims {
    f: usize,
    g: usize,
    v: u16,
    seed: u64,
}

fn dims() -> impl Strategy<Value = Dims> {
    (1usize..6, 1usize..4, 1u16..7, any::<u64>()).prop_map(|(f, g, v, seed)| Dims { f, g, v, seed })
}

fn shape(d: Dims, labels: u32) -> DatasetShape {
    DatasetShape {
        dim: d.f as u32,
        groups: d.g as u32,
        codebook_size: u32::from(d.v),
        num_labels: labels,
    }
}

fn records(rng: &mut ChaCha8Rng, d: Dims, n: usize, labels: u32) -> Vec<UtteranceRecord> {
    (0..n)
        .map(|i| {
            let t = rng.random_range(1..24);
            let mut r = random_record(rng, &format!("u{i}"), t, d.f, d.g, d.v);
            r.label = rng.random_range(0..labels);
            r
        })
        .collect()
}

fn all_methods(counts: &CodebookCounts) -> Vec<(PoolingMethod, Option<&CodebookCounts>)> {
    use EqualityMode::{And, Or};
    vec![
        (PoolingMethod::Average, None),
        (PoolingMethod::Statistics, None),
        (PoolingMethod::Squash(And), None),
        (PoolingMethod::Squash(Or), None),
        (PoolingMethod::AllSquash(And), None),
        (PoolingMethod::AllSquash(Or), None),
        (PoolingMethod::Sif(SifOptions::default()), Some(counts)),
        (PoolingMethod::GlobalProb, Some(counts)),
        (PoolingMethod::LocalProb, None),
        (PoolingMethod::BothProb, Some(counts)),
    ]
}

fn to_bytes(f: impl FnOnce(Vec<u8>) -> vqpool::Result<Vec<u8>>) -> Vec<u8> {
    f(Vec::new()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

// ------------------------------------------------------------ file formats

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_round_trip(d in dims(), n in 0usize..8) {
        let mut rng = rng(d.seed);
        let recs = records(&mut rng, d, n, 3);
        let bytes = to_bytes(|w| write_dataset(w, shape(d, 3), &recs));
        let reader = read_dataset(&bytes[..]).unwrap();
        prop_assert_eq!(reader.shape(), shape(d, 3));
        prop_assert_eq!(reader.read_all().unwrap(), recs);
    }

    #[test]
    fn dataset_magic_bit_flips_rejected(d in dims(), bit in 0usize..32) {
        let mut rng = rng(d.seed);
        let recs = records(&mut rng, d, 2, 2);
        let mut bytes = to_bytes(|w| write_dataset(w, shape(d, 2), &recs));
        bytes[bit / 8] ^= 1 << (bit % 8);
        prop_assert!(read_dataset(&bytes[..]).is_err());
    }

    #[test]
    fn dataset_truncation_rejected(d in dims(), cut in any::<prop::sample::Index>()) {
        let mut rng = rng(d.seed);
        let recs = records(&mut rng, d, 3, 2);
        let bytes = to_bytes(|w| write_dataset(w, shape(d, 2), &recs));
        let keep = cut.index(bytes.len());
        let result = read_dataset(&bytes[..keep]).and_then(|r| r.read_all());
        prop_assert!(result.is_err());
    }

    #[test]
    fn embeddings_round_trip(dim in 1u32..9, n in 0usize..10, seed in any::<u64>(), bit in 0usize..32) {
        let mut rng = rng(seed);
        let embs: Vec<PooledEmbedding> = (0..n)
            .map(|i| PooledEmbedding {
                id: format!("e{i}"),
                label: rng.random_range(0..4),
                vector: gaussian_f32(&mut rng, dim as usize),
            })
            .collect();
        let bytes = to_bytes(|w| write_embeddings(w, dim, 4, &embs));
        prop_assert_eq!(read_embeddings(&bytes[..]).unwrap().read_all().unwrap(), embs);
        let mut flipped = bytes.clone();
        flipped[bit / 8] ^= 1 << (bit % 8);
        prop_assert!(read_embeddings(&flipped[..]).is_err());
    }

    #[test]
    fn counts_round_trip_and_additivity(d in dims(), split in 0usize..6) {
        let mut rng = rng(d.seed);
        let recs = records(&mut rng, d, 6, 2);
        let sh = shape(d, 2);
        let whole = build_counts(&sh, &recs).unwrap();
        let bytes = to_bytes(|w| whole.write_to(w));
        prop_assert_eq!(&CodebookCounts::read_from(&bytes[..]).unwrap(), &whole);
        let mut flipped = bytes.clone();
        flipped[0] ^= 0x20;
        prop_assert!(CodebookCounts::read_from(&flipped[..]).is_err());

        let (a, b) = recs.split_at(split.max(1));
        let mut merged = build_counts(&sh, a).unwrap();
        if !b.is_empty() {
            merged.merge(&build_counts(&sh, b).unwrap()).unwrap();
        }
        prop_assert_eq!(merged, whole);
    }

    #[test]
    fn whitening_round_trip_and_affine(dim in 1usize..6, seed in any::<u64>(), lambda in 0.0f64..1.0) {
        let mut rng = rng(seed);
        let x = gaussian_matrix(&mut rng, 4 * dim + 4, dim);
        let model = WhiteningModel::fit(&x).unwrap();
        let bytes = to_bytes(|w| model.write_to(w));
        prop_assert_eq!(&WhiteningModel::read_from(&bytes[..]).unwrap(), &model);

        // affine: f(λa + (1−λ)b) = λf(a) + (1−λ)f(b), with the mix done in f64
        let a: Vec<f32> = gaussian_f32(&mut rng, dim);
        let b: Vec<f32> = gaussian_f32(&mut rng, dim);
        let mix: Vec<f32> = a
            .iter()
            .zip(&b)
            .map(|(&p, &q)| (lambda * f64::from(p) + (1.0 - lambda) * f64::from(q)) as f32)
            .collect();
        let (fa, fb, fm) = (
            model.apply_f64(&a).unwrap(),
            model.apply_f64(&b).unwrap(),
            model.apply_f64(&mix).unwrap(),
        );
        for i in 0..dim {
            let want = lambda * fa[i] + (1.0 - lambda) * fb[i];
            prop_assert!(close(fm[i], want, 1e-4), "{} vs {}", fm[i], want);
        }
    }
}

// ----------------------------------------------------------------- pooling

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn average_is_uniform_weighted(d in dims(), t in 1usize..30) {
        let mut rng = rng(d.seed);
        let c = gaussian_f32(&mut rng, t * d.f);
        let frames = Frames::new(&c, d.f).unwrap();
        let uniform = PoolingWeights::uniform(t).unwrap();
        prop_assert_eq!(pool_average(&frames).unwrap(), pool_weighted(&frames, &uniform).unwrap());
    }

    #[test]
    fn weighted_pooling_is_convex(d in dims(), t in 1usize..30) {
        let mut rng = rng(d.seed);
        let c = gaussian_f32(&mut rng, t * d.f);
        let raw: Vec<f64> = (0..t).map(|_| rng.random_range(0.01..10.0)).collect();
        let frames = Frames::new(&c, d.f).unwrap();
        let pooled = pool_weighted(&frames, &normalize_weights(raw).unwrap()).unwrap();
        for j in 0..d.f {
            let col = frames.rows().map(|r| r[j]);
            let lo = col.clone().fold(f32::INFINITY, f32::min);
            let hi = col.fold(f32::NEG_INFINITY, f32::max);
            let slack = 1e-5 * (1.0 + lo.abs().max(hi.abs()));
            prop_assert!(pooled[j] >= lo - slack && pooled[j] <= hi + slack);
        }
    }

    #[test]
    fn weighted_pooling_is_linear(d in dims(), t in 1usize..30, a in -4.0f64..4.0, b in -4.0f64..4.0) {
        let mut rng = rng(d.seed);
        let c1 = gaussian_f32(&mut rng, t * d.f);
        let c2 = gaussian_f32(&mut rng, t * d.f);
        let mix: Vec<f32> = c1
            .iter()
            .zip(&c2)
            .map(|(&x, &y)| (a * f64::from(x) + b * f64::from(y)) as f32)
            .collect();
        let raw: Vec<f64> = (0..t).map(|_| rng.random_range(0.01..10.0)).collect();
        let w = normalize_weights(raw).unwrap();
        let pool = |c: &[f32]| pool_weighted(&Frames::new(c, d.f).unwrap(), &w).unwrap();
        let (p1, p2, pm) = (pool(&c1), pool(&c2), pool(&mix));
        for j in 0..d.f {
            let want = a * f64::from(p1[j]) + b * f64::from(p2[j]);
            prop_assert!(close(f64::from(pm[j]), want, 1e-5), "{} vs {}", pm[j], want);
        }
    }

    /// Every method except the run-based squash depends on the frames only
    /// as a multiset.
    #[test]
    fn order_free_methods_are_permutation_invariant(d in dims(), t in 1usize..30) {
        let mut rng = rng(d.seed);
        let r = random_record(&mut rng, "u", t, d.f, d.g, d.v);
        let counts = build_counts(&shape(d, 1), [&r]).unwrap();
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut rng);
        let p = permute_record(&r, &perm);
        for (m, c) in all_methods(&counts) {
            if matches!(m, PoolingMethod::Squash(_)) {
                continue;
            }
            let a = pool_record(m, &r, c).unwrap().vector;
            let b = pool_record(m, &p, c).unwrap().vector;
            prop_assert!(relative_error(&b, &a) <= 1e-5, "{}", m);
        }
    }

    #[test]
    fn statistics_has_twice_the_dimension(d in dims(), t in 1usize..30) {
        let mut rng = rng(d.seed);
        let r = random_record(&mut rng, "u", t, d.f, d.g, d.v);
        let sp = pool_record(PoolingMethod::Statistics, &r, None).unwrap().vector;
        let ap = pool_record(PoolingMethod::Average, &r, None).unwrap().vector;
        prop_assert_eq!(sp.len(), 2 * d.f);
        prop_assert!(relative_error(&sp[..d.f], &ap) <= 1e-6);
        prop_assert!(sp[d.f..].iter().all(|&s| s >= 0.0));
    }
}

// ------------------------------------------------------ partitions/weights

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partitions_cover_frames_once(d in dims(), t in 1usize..40) {
        let mut rng = rng(d.seed);
        let q = random_codes(&mut rng, t, d.g, d.v);
        let codes = vqpool::dataset::Codes::new(&q, d.g).unwrap();
        for mode in [EqualityMode::And, EqualityMode::Or] {
            let squash = squash_partition(&codes, mode).unwrap();
            let all = allsquash_partition(&codes, mode).unwrap();
            for p in [&squash, &all] {
                let mut seen: Vec<usize> = p.parts().iter().flatten().copied().collect();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..t).collect::<Vec<_>>());
                let fw: f64 = p.frame_weights().iter().sum();
                prop_assert!((fw - p.len() as f64).abs() < 1e-9);
            }
            // squash parts are contiguous runs
            for part in squash.parts() {
                prop_assert!(part.windows(2).all(|w| w[1] == w[0] + 1));
            }
            // every run lies inside one allsquash class
            let mut class = vec![0; t];
            for (k, part) in all.parts().iter().enumerate() {
                for &i in part {
                    class[i] = k;
                }
            }
            for part in squash.parts() {
                prop_assert!(part.iter().all(|&i| class[i] == class[part[0]]));
            }
            prop_assert!(all.len() <= squash.len());
        }
    }

    #[test]
    fn identical_tuples_get_identical_weights(d in dims(), t in 1usize..40) {
        let mut rng = rng(d.seed);
        let r = random_record(&mut rng, "u", t, d.f, d.g, d.v);
        let counts = build_counts(&shape(d, 1), [&r]).unwrap();
        let q = r.indices();
        for (m, c) in all_methods(&counts) {
            if !m.has_frame_weights() {
                continue;
            }
            let w = frame_weights(m, &r, c).unwrap();
            let eff: Vec<f64> = w.effective().collect();
            prop_assert!((eff.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if matches!(m, PoolingMethod::Squash(_)) {
                continue;
            }
            for a in 0..t {
                for b in a + 1..t {
                    if q[a * d.g..(a + 1) * d.g] == q[b * d.g..(b + 1) * d.g] {
                        prop_assert_eq!(eff[a], eff[b], "{}", m);
                    }
                }
            }
        }
    }

    /// Rarer indices never weigh less.
    #[test]
    fn frequency_weights_are_monotone(d in dims(), t in 1usize..40, extra in 1usize..5) {
        let mut rng = rng(d.seed);
        let train = records(&mut rng, d, extra, 1);
        let counts = build_counts(&shape(d, 1), &train).unwrap();
        let q = random_codes(&mut rng, t, d.g, d.v);
        let codes = vqpool::dataset::Codes::new(&q, d.g).unwrap();
        let gp = weights_gp(&codes, &counts).unwrap();
        let sif = weights_sif(&codes, &counts, SifOptions::default()).unwrap();
        let tuples: Vec<&[u16]> = codes.tuples().collect();
        let group_sum = |tu: &[u16]| -> u64 {
            tu.iter().enumerate().map(|(g, &i)| counts.group_count(g, i)).sum()
        };
        for a in 0..t {
            for b in 0..t {
                if group_sum(tuples[a]) < group_sum(tuples[b]) {
                    prop_assert!(gp.raw()[a] >= gp.raw()[b]);
                }
                if counts.tuple_count(tuples[a]) < counts.tuple_count(tuples[b]) {
                    prop_assert!(sif.raw()[a] > sif.raw()[b]);
                }
            }
        }
    }
}

// ---------------------------------------------------------------- analysis

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn weights_file_round_trip(raws in prop::collection::vec(prop::collection::vec(0.0f64..5.0, 1..20), 1..6)) {
        let dists: Vec<WeightDistribution> = raws
            .iter()
            .enumerate()
            .filter(|(_, r)| r.iter().sum::<f64>() > 0.0)
            .map(|(i, r)| {
                let s: f64 = r.iter().sum();
                WeightDistribution::new(format!("utt {i}"), r.iter().map(|x| x / s).collect()).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        for dist in &dists {
            write_weights_line(&mut buf, dist).unwrap();
        }
        let back = read_weights(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), dists.len());
        for (a, b) in dists.iter().zip(&back) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
                prop_assert!((x - y).abs() <= 1e-8);
            }
            prop_assert!((b.probabilities().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative(p in prop::collection::vec(0.0f64..1.0, 1..30), seed in any::<u64>()) {
        let mut rng = rng(seed);
        let q: Vec<f64> = p.iter().map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let norm = |v: &[f64]| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect::<Vec<_>>()
        };
        prop_assume!(p.iter().sum::<f64>() > 0.0 && q.iter().sum::<f64>() > 0.0);
        let p = WeightDistribution::new("p", norm(&p)).unwrap();
        let q = WeightDistribution::new("q", norm(&q)).unwrap();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-9);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-12);
    }
}

// --------------------------------------------------------------------- kNN

fn embeddings(rng: &mut ChaCha8Rng, n: usize, dim: usize, labels: u32) -> Vec<PooledEmbedding> {
    (0..n)
        .map(|i| PooledEmbedding {
            id: format!("e{i}"),
            label: rng.random_range(0..labels),
            vector: gaussian_f32(rng, dim),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distances_sorted_and_bounded(seed in any::<u64>(), n in 1usize..60, dim in 1usize..8, k_frac in 0.0f64..1.0) {
        let mut rng = rng(seed);
        let train = embeddings(&mut rng, n, dim, 3);
        let k = 1 + (k_frac * (n - 1) as f64) as usize;
        let q = gaussian_f32(&mut rng, dim);
        for metric in [Metric::Cosine, Metric::Euclidean] {
            let index = NeighborIndex::build(&train, metric, Backend::Exact).unwrap();
            let res = index.query(&q, k).unwrap();
            prop_assert_eq!(res.len(), k);
            prop_assert!(res.neighbors.windows(2).all(|w| w[0].distance <= w[1].distance));
            if metric == Metric::Cosine {
                prop_assert!(res.neighbors.iter().all(|nb| (0.0..=2.0).contains(&nb.distance)));
            }
        }
        let x = gaussian_f32(&mut rng, dim);
        let c = cosine_distance(&x, &q);
        prop_assert!((0.0..=2.0).contains(&c));
        prop_assert_eq!(cosine_distance(&x, &x), 0.0);
    }

    #[test]
    fn k1_vote_is_nearest_label(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = rng(seed);
        let train = embeddings(&mut rng, n, 4, 5);
        let index = NeighborIndex::build(&train, Metric::Cosine, Backend::Exact).unwrap();
        let q = gaussian_f32(&mut rng, 4);
        let res = index.query(&q, 1).unwrap();
        prop_assert_eq!(classify_vote(&res, 1).unwrap(), res.neighbors[0].label);
    }

    /// Power-of-two scaling is exact in floating point, so cosine decisions
    /// must not move at all.
    #[test]
    fn cosine_predictions_ignore_scale(seed in any::<u64>(), exp in -8i32..8, k in 1usize..4) {
        let mut rng = rng(seed);
        let train = embeddings(&mut rng, 40, 6, 4);
        let test = embeddings(&mut rng, 20, 6, 4);
        let scale = 2f32.powi(exp);
        let scaled: Vec<PooledEmbedding> = test
            .iter()
            .map(|e| PooledEmbedding { vector: e.vector.iter().map(|v| v * scale).collect(), ..e.clone() })
            .collect();
        let config = EvalConfig { metric: Metric::Cosine, k, backend: Backend::Exact };
        let a = evaluate(&train, &test, &config).unwrap();
        let b = evaluate(&train, &scaled, &config).unwrap();
        prop_assert_eq!(a.predictions, b.predictions);
    }

    #[test]
    fn evaluation_ignores_test_order(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = rng(seed);
        let train = embeddings(&mut rng, 50, 5, 3);
        let test = embeddings(&mut rng, 25, 5, 3);
        let mut order: Vec<usize> = (0..test.len()).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<PooledEmbedding> = order.iter().map(|&i| test[i].clone()).collect();
        let config = EvalConfig { metric: Metric::Cosine, k, backend: Backend::Exact };
        let a = evaluate(&train, &test, &config).unwrap();
        let b = evaluate(&train, &shuffled, &config).unwrap();
        prop_assert_eq!(a.correct, b.correct);
        prop_assert_eq!(&a.confusion, &b.confusion);
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(a.predictions[i], b.predictions[j]);
        }
    }
}

#[test]
fn whitening_rejects_single_row() {
    let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    assert!(WhiteningModel::fit(&x).is_err());
}
