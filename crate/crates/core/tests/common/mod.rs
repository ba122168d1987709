#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vqpool::dataset::UtteranceRecord;
use vqpool::linalg::{svd, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| gaussian(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn gaussian_f32(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| gaussian(rng) as f32).collect()
}

/// `n × n` orthogonal matrix from the left factor of a Gaussian matrix.
pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    svd(&gaussian_matrix(rng, n, n)).unwrap().u
}

/// Random index matrix, `t` frames of `g` groups over `[0, v)`.
pub fn random_codes(rng: &mut ChaCha8Rng, t: usize, g: usize, v: u16) -> Vec<u16> {
    (0..t * g).map(|_| rng.random_range(0..v)).collect()
}

pub fn record(
    id: &str,
    label: u32,
    f: usize,
    g: usize,
    c: Vec<f32>,
    q: Vec<u16>,
) -> UtteranceRecord {
    UtteranceRecord::new(id, label, f, g, c, q).unwrap()
}

pub fn random_record(
    rng: &mut ChaCha8Rng,
    id: &str,
    t: usize,
    f: usize,
    g: usize,
    v: u16,
) -> UtteranceRecord {
    let c = gaussian_f32(rng, t * f);
    let q = random_codes(rng, t, g, v);
    record(id, 0, f, g, c, q)
}

/// Applies the frame permutation `perm` to both C and Q.
pub fn permute_record(r: &UtteranceRecord, perm: &[usize]) -> UtteranceRecord {
    let (f, g) = (r.dim(), r.groups());
    let mut c = Vec::with_capacity(r.features().len());
    let mut q = Vec::with_capacity(r.indices().len());
    for &t in perm {
        c.extend_from_slice(&r.features()[t * f..(t + 1) * f]);
        q.extend_from_slice(&r.indices()[t * g..(t + 1) * g]);
    }
    record(&r.id, r.label, f, g, c, q)
}

/// `‖a − b‖ / ‖b‖`, or `‖a − b‖` when `b` is zero.
pub fn relative_error(a: &[f32], b: &[f32]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    let base: f64 = b.iter().map(|&y| f64::from(y).powi(2)).sum();
    if base == 0.0 {
        diff.sqrt()
    } else {
        (diff / base).sqrt()
    }
}

/// Covariance `(1/N) (X − μ)ᵀ (X − μ)` of the rows of `x`.
pub fn covariance(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let d = x[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in x {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n;
            }
        }
    }
    cov
}
