//! Small dense linear algebra: a row-major matrix and a one-sided Jacobi
//! SVD.

use std::ops::{Index, IndexMut};

use crate::{Error, Result};

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Stacks equally sized `f32` rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend(r.iter().map(|&v| f64::from(v)));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Thin SVD `X = U diag(σ) Vᵀ` with `k = min(N, D)` columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows {
            for (j, s) in self.singular_values.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.v.transpose()).expect("consistent shapes")
    }
}

/// Off-diagonal tolerance: a column pair counts as orthogonal once
/// `|a_p·a_q| <= TOL · ‖a_p‖ ‖a_q‖`.
pub const SVD_TOLERANCE: f64 = 1e-10;

/// Column-major scratch copy of an `m×n` matrix.
struct Columns {
    m: usize,
    data: Vec<f64>,
}

impl Columns {
    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    fn pair_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let (lo, hi) = self.data.split_at_mut(q * self.m);
        (&mut lo[p * self.m..(p + 1) * self.m], &mut hi[..self.m])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

/// One-sided Jacobi SVD of a tall (`m >= n`) matrix given by columns.
/// Returns unsorted `(columns of U·Σ, V columns)`.
fn jacobi_tall(mut a: Columns, n: usize, max_sweeps: usize) -> Result<(Columns, Columns)> {
    let mut v = Columns {
        m: n,
        data: vec![0.0; n * n],
    };
    for i in 0..n {
        v.data[i * n + i] = 1.0;
    }
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(a.col(p), a.col(p));
                let beta = dot(a.col(q), a.col(q));
                let gamma = dot(a.col(p), a.col(q));
                if gamma == 0.0 || gamma.abs() <= SVD_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (ap, aq) = a.pair_mut(p, q);
                rotate(ap, aq, c, s);
                let (vp, vq) = v.pair_mut(p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            return Ok((a, v));
        }
    }
    Err(Error::Numeric(format!(
        "Jacobi SVD did not converge within {max_sweeps} sweeps"
    )))
}

/// Fills columns of `u` listed in `missing` with unit vectors orthogonal to
/// every other column. Each is the coordinate vector with the largest
/// residual after projecting out the filled columns.
fn complete_basis(u: &mut Matrix, missing: &[usize]) {
    let m = u.rows;
    let mut filled: Vec<usize> = (0..u.cols).filter(|j| !missing.contains(j)).collect();
    let residual = |u: &Matrix, filled: &[usize], mut e: Vec<f64>| {
        for _ in 0..2 {
            for &f in filled {
                let col = u.column(f);
                let proj = dot(&e, &col);
                e.iter_mut().zip(&col).for_each(|(x, c)| *x -= proj * c);
            }
        }
        e
    };
    for &j in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for candidate in 0..m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            let e = residual(u, &filled, e);
            let norm = dot(&e, &e).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, e));
            }
        }
        let Some((_, e)) = best else { return };
        // one more pass against the now-known direction keeps it clean
        let e = residual(u, &filled, e);
        let norm = dot(&e, &e).sqrt();
        for i in 0..m {
            u[(i, j)] = e[i] / norm;
        }
        filled.push(j);
    }
}

/// Thin singular value decomposition by one-sided Jacobi rotations.
///
/// Singular values come out non-increasing. Columns of `U` belonging to
/// (numerically) zero singular values are completed to an orthonormal set.
/// Signs are fixed so that the largest-magnitude entry of every right
/// singular vector is positive.
pub fn svd(x: &Matrix) -> Result<Svd> {
    if !x.is_finite() {
        return Err(Error::Numeric(
            "SVD input contains non-finite values".into(),
        ));
    }
    let (rows, cols) = (x.rows, x.cols);
    let transposed = rows < cols;
    let work = if transposed { x.clone() } else { x.transpose() };
    // `work` is row-major over the tall matrix's columns, i.e. column-major.
    let (m, n) = if transposed {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let a = Columns { m, data: work.data };
    let max_sweeps = 100 * rows.max(cols).max(1);
    let (a, v) = jacobi_tall(a, n, max_sweeps)?;

    let norms: Vec<f64> = (0..n).map(|j| dot(a.col(j), a.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let top = norms.iter().copied().fold(0.0, f64::max);
    let floor = top * 1e-13 * (m as f64);

    let mut left = Matrix::zeros(m, n);
    let mut right = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s > floor && s > 0.0 {
            for (i, &val) in a.col(j).iter().enumerate() {
                left[(i, k)] = val / s;
            }
            sigma.push(s);
        } else {
            missing.push(k);
            sigma.push(if s > floor { s } else { 0.0 });
        }
        for (i, &val) in v.col(j).iter().enumerate() {
            right[(i, k)] = val;
        }
    }
    complete_basis(&mut left, &missing);

    let (mut u, mut vm) = if transposed {
        (right, left)
    } else {
        (left, right)
    };
    for k in 0..n {
        let col = vm.column(k);
        let pivot = col.iter().copied().fold(
            0.0f64,
            |best, x| if x.abs() > best.abs() { x } else { best },
        );
        if pivot < 0.0 {
            for i in 0..vm.rows {
                vm[(i, k)] = -vm[(i, k)];
            }
            for i in 0..u.rows {
                u[(i, k)] = -u[(i, k)];
            }
        }
    }
    Ok(Svd {
        u,
        singular_values: sigma,
        v: vm,
    })
}

/// Largest absolute deviation of `QᵀQ` from the identity.
pub fn orthonormality_error(q: &Matrix) -> f64 {
    let gram = q.transpose().matmul(q).expect("square gram");
    gram.max_abs_diff(&Matrix::identity(q.cols))
}
