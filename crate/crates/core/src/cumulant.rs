//! Unfolded third-order cumulants.
//!
//! The unfolding of an `n x n x n` tensor `T` is the `n x n^2` matrix whose
//! entry `(a, b + c n)` is `T[a][b][c]` (slices stacked side by side). The
//! empirical estimator accumulates raw moments in one pass and combines them as
//! `k3 = m3 - m2 (x) m1 [three roles] + 2 m1 (x) m1 (x) m1`.

use nalgebra::DMatrix;

use crate::circulant::FilterBank;
use crate::error::{invalid, Error, Result};
use crate::parallel;

/// Samples per accumulation block. Blocks are summed sequentially and merged
/// in order, so the result depends only on the global sample order.
pub const ACCUMULATION_BLOCK: usize = 1024;

/// The `n x n^2` unfolded cumulant, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantUnfolding {
    n: usize,
    data: Vec<f64>,
}

impl CumulantUnfolding {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    /// Wraps row-major `n x n^2` data.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n * n {
            return Err(invalid(format!(
                "cumulant of dimension {n} needs {} entries, got {}",
                n * n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn from_matrix(mat: &DMatrix<f64>) -> Result<Self> {
        let n = mat.nrows();
        if mat.ncols() != n * n {
            return Err(invalid(format!(
                "unfolding must be n x n^2, got {} x {}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let mut data = vec![0.0; n * n * n];
        for a in 0..n {
            for col in 0..n * n {
                data[a * n * n + col] = mat[(a, col)];
            }
        }
        Self::from_row_major(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row `a` of the unfolding (length `n^2`).
    pub fn row(&self, a: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.data[a * nn..(a + 1) * nn]
    }

    /// Tensor entry `T[a][b][c]`.
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.data[a * self.n * self.n + b + c * self.n]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let nn = self.n * self.n;
        DMatrix::from_row_slice(self.n, nn, &self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sub_assign(&mut self, other: &Self) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x -= y;
        }
    }

    /// Largest violation of the tensor symmetries `T[a][b][c] = T[b][a][c] =
    /// T[a][c][b]`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let t = self.get(a, b, c);
                    worst = worst
                        .max((t - self.get(b, a, c)).abs())
                        .max((t - self.get(a, c, b)).abs());
                }
            }
        }
        worst
    }

    /// Averages every entry over the six permutations of its indices.
    pub fn symmetrize(&mut self) {
        let n = self.n;
        for a in 0..n {
            for b in a..n {
                for c in b..n {
                    let perms = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)];
                    let mean = perms.iter().map(|&(x, y, z)| self.get(x, y, z)).sum::<f64>() / 6.0;
                    for (x, y, z) in perms {
                        self.data[x * n * n + y + z * n] = mean;
                    }
                }
            }
        }
    }
}

/// `Gamma^{(m)}`: row `m` of the unfolding reshaped to `n x n` with
/// `Gamma[i][j] = Cum[m][i + j n]`.
pub fn matricize_row(cum: &CumulantUnfolding, m: usize) -> Result<DMatrix<f64>> {
    let n = cum.n();
    if m >= n {
        return Err(invalid(format!("row {m} out of range for dimension {n}")));
    }
    let row = cum.row(m);
    // column-major storage: element (i, j) sits at i + j n, exactly the row layout
    Ok(DMatrix::from_column_slice(n, n, row))
}

/// Raw-moment sums for the one-pass cumulant estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentAccumulator {
    n: usize,
    count: u64,
    s1: Vec<f64>,
    s2: Vec<f64>,
    // s3[a n^2 + b + c n] = sum x_a x_b x_c
    s3: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            count: 0,
            s1: vec![0.0; n],
            s2: vec![0.0; n * n],
            s3: vec![0.0; n * n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let inv = 1.0 / self.count as f64;
        Ok(self.s1.iter().map(|s| s * inv).collect())
    }

    pub fn accumulate(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(invalid(format!(
                "sample of length {} into accumulator of dimension {}",
                x.len(),
                self.n
            )));
        }
        self.add_unchecked(x);
        Ok(())
    }

    fn add_unchecked(&mut self, x: &[f64]) {
        let n = self.n;
        self.count += 1;
        for a in 0..n {
            let xa = x[a];
            self.s1[a] += xa;
            let s2 = &mut self.s2[a * n..(a + 1) * n];
            for (s, xb) in s2.iter_mut().zip(x) {
                *s += xa * xb;
            }
            for c in 0..n {
                let xac = xa * x[c];
                let base = a * n * n + c * n;
                for (s, xb) in self.s3[base..base + n].iter_mut().zip(x) {
                    *s += xac * xb;
                }
            }
        }
    }

    /// Accumulates row-major samples (`samples.len()` a multiple of `n`).
    /// Work is split into [`ACCUMULATION_BLOCK`]-sample blocks processed in
    /// parallel and merged in order, so the result is independent of the
    /// thread count. Batches whose size is a multiple of the block size give
    /// results independent of how a stream is batched.
    pub fn accumulate_batch(&mut self, samples: &[f64]) -> Result<()> {
        let n = self.n;
        if n == 0 || !samples.len().is_multiple_of(n) {
            return Err(invalid(format!(
                "batch of {} values is not a whole number of length-{n} samples",
                samples.len()
            )));
        }
        let blocks: Vec<&[f64]> = samples.chunks(ACCUMULATION_BLOCK * n).collect();
        let partials = parallel::map_slice(&blocks, |block| {
            let mut acc = MomentAccumulator::new(n);
            for x in block.chunks_exact(n) {
                acc.add_unchecked(x);
            }
            acc
        });
        for p in &partials {
            self.merge(p)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.n != self.n {
            return Err(invalid(format!(
                "merging accumulators of dimensions {} and {}",
                self.n, other.n
            )));
        }
        self.count += other.count;
        for (x, y) in self.s1.iter_mut().zip(&other.s1) {
            *x += y;
        }
        for (x, y) in self.s2.iter_mut().zip(&other.s2) {
            *x += y;
        }
        for (x, y) in self.s3.iter_mut().zip(&other.s3) {
            *x += y;
        }
        Ok(())
    }

    /// Combines the raw moments into the symmetrized unfolded cumulant.
    pub fn finalize(&self) -> Result<CumulantUnfolding> {
        if self.count == 0 {
            return Err(Error::EmptyAccumulator);
        }
        let n = self.n;
        let inv = 1.0 / self.count as f64;
        let m1: Vec<f64> = self.s1.iter().map(|s| s * inv).collect();
        let m2: Vec<f64> = self.s2.iter().map(|s| s * inv).collect();
        let rows = parallel::map_range(n, |a| {
            let mut row = vec![0.0; n * n];
            for c in 0..n {
                for b in 0..n {
                    let m3 = self.s3[a * n * n + b + c * n] * inv;
                    row[b + c * n] = m3 - m2[a * n + b] * m1[c] - m2[a * n + c] * m1[b] - m2[b * n + c] * m1[a]
                        + 2.0 * m1[a] * m1[b] * m1[c];
                }
            }
            row
        });
        let mut cum = CumulantUnfolding::from_row_major(n, rows.concat())?;
        cum.symmetrize();
        Ok(cum)
    }
}

/// `sum_j lambda_j A_j (C_j ⊙ B_j)^T` for stacked-circulant factors, i.e. the
/// tensor `sum_j lambda_j A_j ⊗ B_j ⊗ C_j`, built row by row without forming
/// any `n x nL` factor.
pub fn model_cumulant(a: &FilterBank, b: &FilterBank, c: &FilterBank, lambdas: &[f64]) -> Result<CumulantUnfolding> {
    let n = a.n();
    let cols = n * a.len();
    if b.n() != n || c.n() != n || b.len() != a.len() || c.len() != a.len() {
        return Err(invalid("factor banks differ in shape"));
    }
    if lambdas.len() != cols {
        return Err(invalid(format!("need {cols} weights, got {}", lambdas.len())));
    }
    if lambdas.iter().any(|l| !l.is_finite()) {
        return Err(invalid("non-finite weight"));
    }
    let acols: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j)).collect();
    let bcols: Vec<Vec<f64>> = (0..cols).map(|j| b.column(j)).collect();
    let ccols: Vec<Vec<f64>> = (0..cols).map(|j| c.column(j)).collect();
    let rows = parallel::map_range(n, |x| {
        let mut row = vec![0.0; n * n];
        for j in 0..cols {
            let w = lambdas[j] * acols[j][x];
            if w == 0.0 {
                continue;
            }
            for (z, cz) in ccols[j].iter().enumerate() {
                let wz = w * cz;
                for (r, by) in row[z * n..(z + 1) * n].iter_mut().zip(&bcols[j]) {
                    *r += wz * by;
                }
            }
        }
        row
    });
    CumulantUnfolding::from_row_major(n, rows.concat())
}

/// Model cumulant of a convolutional ICA model: `F Λ (F ⊙ F)^T`.
pub fn analytic_cumulant(bank: &FilterBank, lambdas: &[f64]) -> Result<CumulantUnfolding> {
    model_cumulant(bank, bank, bank, lambdas)
}
