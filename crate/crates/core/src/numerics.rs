//! Dense row-major matrices, column scalers, a cyclic Jacobi symmetric
//! eigensolver, and PCA / kernel PCA.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::invalid(format!(
                "row {bad} has {} columns, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            values.extend_from_slice(self.row(r));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let dst = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += aik * b;
                }
            }
        }
        Ok(out)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn col_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (m, v) in means.iter_mut().zip(self.row(r)) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Copy with every column shifted to zero mean.
    pub fn centered(&self) -> Self {
        let means = self.col_means();
        Self::from_fn(self.rows, self.cols, |r, c| self[(r, c)] - means[c])
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.values[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.values[r * self.cols + c]
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    MinMax,
    Gaussian,
}

/// Fitted per-column statistics: `(min, max)` for min-max, `(mean, stddev)`
/// for gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub kind: ScalerKind,
    pub stats: Vec<(f64, f64)>,
}

impl ScalerParams {
    pub fn fit(x: &Matrix, kind: ScalerKind) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::invalid("cannot fit a scaler on an empty matrix"));
        }
        if !x.is_finite() {
            return Err(Error::invalid("scaler input contains non-finite entries"));
        }
        let stats = (0..x.cols())
            .map(|c| {
                let col = x.column(c);
                match kind {
                    ScalerKind::MinMax => {
                        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        (lo, hi)
                    }
                    ScalerKind::Gaussian => {
                        let n = col.len() as f64;
                        let mean = col.iter().sum::<f64>() / n;
                        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        (mean, var.sqrt())
                    }
                }
            })
            .collect();
        Ok(Self { kind, stats })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.stats.len() {
            return Err(Error::invalid(format!(
                "scaler fitted on {} columns, input has {}",
                self.stats.len(),
                x.cols()
            )));
        }
        Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            let v = x[(r, c)];
            let (a, b) = self.stats[c];
            match self.kind {
                ScalerKind::MinMax => {
                    let span = b - a;
                    if span > 0.0 {
                        ((v - a) / span).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                }
                ScalerKind::Gaussian => {
                    if b > 0.0 {
                        (v - a) / b
                    } else {
                        0.0
                    }
                }
            }
        }))
    }
}

pub fn fit_apply_scaler(x: &Matrix, kind: ScalerKind) -> Result<(Matrix, ScalerParams)> {
    let params = ScalerParams::fit(x, kind)?;
    let scaled = params.apply(x)?;
    Ok((scaled, params))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    /// Descending.
    pub values: Vec<f64>,
    /// One eigenvector per column, aligned with `values`.
    pub vectors: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFF_TOL: f64 = 1e-10;

/// Top-`k` eigenpairs of a symmetric matrix via cyclic Jacobi rotations.
///
/// Each eigenvector is sign-normalised so its largest-magnitude entry is
/// non-negative.
pub fn sym_eigen(a: &Matrix, k: usize) -> Result<SymEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::invalid(format!(
            "eigen input must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    let scale = a.norm_inf().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::invalid(format!(
                    "matrix not symmetric at ({i}, {j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }

    let mut m = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let frob = m.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };
    let tol = JACOBI_OFF_TOL * frob;

    let mut converged = frob == 0.0 || off_norm(&m) <= tol;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let rp = m[(r, p)];
                    let rq = m[(r, q)];
                    m[(r, p)] = c * rp - s * rq;
                    m[(r, q)] = s * rp + c * rq;
                }
                for col in 0..n {
                    let pc = m[(p, col)];
                    let qc = m[(q, col)];
                    m[(p, col)] = c * pc - s * qc;
                    m[(q, col)] = s * pc + c * qc;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for r in 0..n {
                    let rp = v[(r, p)];
                    let rq = v[(r, q)];
                    v[(r, p)] = c * rp - s * rq;
                    v[(r, q)] = s * rp + c * rq;
                }
            }
        }
        converged = off_norm(&m) <= tol;
    }
    if !converged {
        return Err(Error::Convergence {
            sweeps,
            residual: off_norm(&m),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    order.truncate(k);

    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, k);
    for (dst, &src) in order.iter().enumerate() {
        let mut col: Vec<f64> = (0..n).map(|r| v[(r, src)]).collect();
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, x)| if x.abs() > best.1.abs() { (i, *x) } else { best })
            .0;
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (r, x) in col.into_iter().enumerate() {
            vectors[(r, dst)] = x;
        }
    }
    Ok(SymEigen { values, vectors })
}

fn check_target_dim(x: &Matrix, d: usize) -> Result<()> {
    let max = x.rows().min(x.cols());
    if d == 0 || d > max {
        return Err(Error::invalid(format!(
            "target dimension {d} outside 1..={max} for a {}x{} input",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// Project rows onto the top-`d` principal directions of the column-centred
/// data. Returns `rows x d` scores.
pub fn pca(x: &Matrix, d: usize) -> Result<Matrix> {
    check_target_dim(x, d)?;
    let xc = x.centered();
    if xc.cols() <= xc.rows() {
        let cov = xc.transpose().matmul(&xc)?;
        let eig = sym_eigen(&cov, d)?;
        xc.matmul(&eig.vectors)
    } else {
        // Wide input: eigendecompose the Gram matrix instead; scores are
        // u_j * sqrt(lambda_j).
        let gram = xc.matmul(&xc.transpose())?;
        let eig = sym_eigen(&gram, d)?;
        Ok(Matrix::from_fn(xc.rows(), d, |r, c| {
            eig.vectors[(r, c)] * eig.values[c].max(0.0).sqrt()
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Kernel {
    Rbf { gamma: f64 },
    /// Plain inner product; kernel PCA with it reduces to PCA.
    Linear,
}

impl Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => (-gamma * squared_distance(a, b)).exp(),
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }
}

const KPCA_EIGEN_FLOOR: f64 = 1e-12;

/// Kernel PCA with an RBF kernel `exp(-gamma |x - y|^2)`.
pub fn kernel_pca(x: &Matrix, d: usize, gamma: f64) -> Result<Matrix> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("kernel gamma must be positive, got {gamma}")));
    }
    kernel_pca_with(x, d, Kernel::Rbf { gamma })
}

/// Default RBF width for kernel PCA: `1 / cols`.
pub fn default_kpca_gamma(x: &Matrix) -> f64 {
    1.0 / x.cols().max(1) as f64
}

pub fn kernel_pca_with(x: &Matrix, d: usize, kernel: Kernel) -> Result<Matrix> {
    check_target_dim(x, d)?;
    let n = x.rows();
    let xc;
    let x = if matches!(kernel, Kernel::Linear) {
        xc = x.centered();
        &xc
    } else {
        x
    };
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(x.row(i), x.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    // Double centring: K - 1K - K1 + 1K1.
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let kc = Matrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - row_means[j] + grand);

    let eig = sym_eigen(&kc, d)?;
    // Training-point projection onto alpha_j = u_j / sqrt(lambda_j) is
    // Kc alpha_j = sqrt(lambda_j) u_j.
    Ok(Matrix::from_fn(n, d, |r, c| {
        let lambda = eig.values[c];
        if lambda <= KPCA_EIGEN_FLOOR {
            0.0
        } else {
            eig.vectors[(r, c)] * lambda.sqrt()
        }
    }))
}
