//! Fast computation of the ALS least-squares target
//! `M = Cum ((C ⊙ B)^T)^+` for stacked-circulant factors `B` and `C`.
//!
//! Three identities keep everything in `O(n)`-length diagonals:
//!
//! * `((C ⊙ B)^T)^+ = (C ⊙ B) ((C^T C) .* (B^T B))^+` for full column rank.
//! * The Gram-Hadamard matrix is an `L x L` grid of circulant blocks, so
//!   `(C^T C) .* (B^T B) = 𝐔 Ψ 𝐔^H` with `Ψ` an `L x L` grid of diagonals,
//!   `𝐔 = blkdiag(U, ..., U)`. Block `(j, l)` of the grid is the spectrum of
//!   the elementwise product of the two generating cross-correlations,
//!   `dft(idft(conj(ĝ_j) ĝ_l) .* idft(conj(ĥ_j) ĥ_l))`.
//! * Row `m` of `Cum (C ⊙ B)` is the diagonal of `B^T Γ^{(m)} C`, which in the
//!   Fourier basis needs only `Φ^{(m)} = U^H Γ^{(m)} U`. `Φ^{(m)}` depends on
//!   the cumulant alone and is computed once per cumulant.
//!
//! `Ψ` is inverted by recursive 2 x 2 block partitioning with the last
//! diagonal block as pivot; the grid-of-diagonals class is closed under every
//! step, so inversion costs `O(L^3 n)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::circulant::{fft_in_place, SpectralBank};
use crate::cumulant::CumulantUnfolding;
use crate::error::{invalid, Error, Result};
use crate::parallel;

/// Pivot moduli below this are treated as singular.
pub const PIVOT_EPS: f64 = 1e-12;

/// Relative tolerance on the imaginary residue of the fast path.
pub const IMAG_TOL: f64 = 1e-8;

/// `L x L` grid of length-`n` complex diagonals, standing for the
/// `nL x nL` matrix whose `(j, l)` block is `diag(block(j, l))`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiMatrix {
    n: usize,
    l: usize,
    blocks: Vec<Vec<Complex64>>,
}

/// The inverse has the same block-diagonal layout.
pub type PsiInverse = PsiMatrix;

impl PsiMatrix {
    pub fn from_blocks(n: usize, l: usize, blocks: Vec<Vec<Complex64>>) -> Result<Self> {
        if blocks.len() != l * l || blocks.iter().any(|b| b.len() != n) {
            return Err(invalid(format!("Ψ needs {} blocks of length {n}", l * l)));
        }
        Ok(Self { n, l, blocks })
    }

    pub fn identity(n: usize, l: usize) -> Self {
        let blocks = (0..l * l)
            .map(|k| {
                let v = if k / l == k % l { 1.0 } else { 0.0 };
                vec![Complex64::new(v, 0.0); n]
            })
            .collect();
        Self { n, l, blocks }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of block rows `L`.
    pub fn num_blocks(&self) -> usize {
        self.l
    }

    pub fn block(&self, j: usize, l: usize) -> &[Complex64] {
        &self.blocks[j * self.l + l]
    }

    /// Sum of the diagonal, which is real for a valid Ψ.
    pub fn trace(&self) -> f64 {
        (0..self.l).flat_map(|j| self.block(j, j).iter()).map(|z| z.re).sum()
    }

    /// Largest `|block(j, l) - conj(block(l, j))|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.l {
            for l in 0..self.l {
                for (a, b) in self.block(j, l).iter().zip(self.block(l, j)) {
                    worst = worst.max((a - b.conj()).norm());
                }
            }
        }
        worst
    }

    /// Dense `nL x nL` matrix.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let (n, l) = (self.n, self.l);
        let mut out = DMatrix::zeros(n * l, n * l);
        for j in 0..l {
            for k in 0..l {
                for (p, z) in self.block(j, k).iter().enumerate() {
                    out[(j * n + p, k * n + p)] = *z;
                }
            }
        }
        out
    }

    /// Grid product `self * other`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.n != other.n || self.l != other.l {
            return Err(invalid("Ψ shapes differ"));
        }
        let (n, l) = (self.n, self.l);
        let blocks = (0..l * l)
            .map(|idx| {
                let (j, k) = (idx / l, idx % l);
                let mut acc = vec![Complex64::new(0.0, 0.0); n];
                for m in 0..l {
                    for ((a, x), y) in acc.iter_mut().zip(self.block(j, m)).zip(other.block(m, k)) {
                        *a += x * y;
                    }
                }
                acc
            })
            .collect();
        Ok(Self { n, l, blocks })
    }
}

fn check_banks(g: &SpectralBank, h: &SpectralBank) -> Result<()> {
    if g.n() != h.n() || g.len() != h.len() {
        return Err(invalid(format!(
            "spectral banks differ: {}x{} vs {}x{}",
            g.len(),
            g.n(),
            h.len(),
            h.n()
        )));
    }
    Ok(())
}

/// Builds Ψ from the spectra of the second-mode (`g`) and third-mode (`h`)
/// filters.
pub fn psi_build(g: &SpectralBank, h: &SpectralBank) -> Result<PsiMatrix> {
    check_banks(g, h)?;
    let (n, l) = (g.n(), g.len());
    let blocks = parallel::map_range(l * l, |idx| {
        let (j, k) = (idx / l, idx % l);
        // generating vectors of Cir(g_j)^T Cir(g_k) and Cir(h_j)^T Cir(h_k)
        let mut cg: Vec<Complex64> = g
            .spectrum(j)
            .iter()
            .zip(g.spectrum(k))
            .map(|(a, b)| a.conj() * b)
            .collect();
        let mut ch: Vec<Complex64> = h
            .spectrum(j)
            .iter()
            .zip(h.spectrum(k))
            .map(|(a, b)| a.conj() * b)
            .collect();
        fft_in_place(&mut cg, true);
        fft_in_place(&mut ch, true);
        let mut prod: Vec<Complex64> = cg
            .iter()
            .zip(&ch)
            .map(|(a, b)| Complex64::new(a.re * b.re, 0.0))
            .collect();
        fft_in_place(&mut prod, false);
        prod
    });
    Ok(PsiMatrix { n, l, blocks })
}

/// Default regularization: `1e-10 trace(Ψ) / (nL)`.
pub fn default_ridge(psi: &PsiMatrix) -> f64 {
    1e-10 * psi.trace() / (psi.n * psi.l) as f64
}

type Grid = Vec<Vec<Vec<Complex64>>>;

fn invert_pivot(pivot: &[Complex64], block: usize) -> Result<Vec<Complex64>> {
    pivot
        .iter()
        .enumerate()
        .map(|(frequency, z)| {
            let modulus = z.norm();
            if modulus < PIVOT_EPS || !modulus.is_finite() {
                Err(Error::Singular {
                    block,
                    frequency,
                    modulus,
                })
            } else {
                Ok(z.inv())
            }
        })
        .collect()
}

fn invert_grid(grid: Grid) -> Result<Grid> {
    let k = grid.len();
    let last = k - 1;
    let d_inv = invert_pivot(&grid[last][last], last)?;
    if k == 1 {
        return Ok(vec![vec![d_inv]]);
    }
    let n = d_inv.len();
    let zero = Complex64::new(0.0, 0.0);

    // Schur complement of the pivot: S = J - O D^{-1} R
    let schur: Vec<Vec<Complex64>> = parallel::map_range(last * last, |idx| {
        let (i, j) = (idx / last, idx % last);
        (0..n)
            .map(|p| grid[i][j][p] - grid[i][last][p] * d_inv[p] * grid[last][j][p])
            .collect()
    });
    let mut s_grid: Grid = Vec::with_capacity(last);
    let mut it = schur.into_iter();
    for _ in 0..last {
        s_grid.push(it.by_ref().take(last).collect());
    }
    let s_inv = invert_grid(s_grid)?;

    // top-right: -S^{-1} O D^{-1}
    let top_right: Vec<Vec<Complex64>> = (0..last)
        .map(|i| {
            (0..n)
                .map(|p| {
                    let acc = (0..last).fold(zero, |acc, m| acc + s_inv[i][m][p] * grid[m][last][p]);
                    -acc * d_inv[p]
                })
                .collect()
        })
        .collect();
    // bottom-left: -D^{-1} R S^{-1}
    let bottom_left: Vec<Vec<Complex64>> = (0..last)
        .map(|j| {
            (0..n)
                .map(|p| {
                    let acc = (0..last).fold(zero, |acc, m| acc + grid[last][m][p] * s_inv[m][j][p]);
                    -d_inv[p] * acc
                })
                .collect()
        })
        .collect();
    // bottom-right: D^{-1} + D^{-1} R S^{-1} O D^{-1}
    let bottom_right: Vec<Complex64> = (0..n)
        .map(|p| {
            let acc = (0..last).fold(zero, |acc, m| acc + bottom_left[m][p] * grid[m][last][p]);
            d_inv[p] - acc * d_inv[p]
        })
        .collect();

    let mut out: Grid = Vec::with_capacity(k);
    for (i, mut row) in s_inv.into_iter().enumerate() {
        row.push(top_right[i].clone());
        out.push(row);
    }
    let mut last_row = bottom_left;
    last_row.push(bottom_right);
    out.push(last_row);
    Ok(out)
}

/// Inverts Ψ (plus `ridge` on its diagonal) by recursive block partitioning.
pub fn psi_invert(psi: &PsiMatrix, ridge: f64) -> Result<PsiInverse> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(invalid(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let l = psi.l;
    if l == 0 {
        return Err(invalid("empty Ψ"));
    }
    let grid: Grid = (0..l)
        .map(|j| {
            (0..l)
                .map(|k| {
                    let mut b = psi.block(j, k).to_vec();
                    if j == k && ridge > 0.0 {
                        b.iter_mut().for_each(|z| z.re += ridge);
                    }
                    b
                })
                .collect()
        })
        .collect();
    let inv = invert_grid(grid)?;
    Ok(PsiMatrix {
        n: psi.n,
        l,
        blocks: inv.into_iter().flatten().collect(),
    })
}

/// Least-squares target for one mode update: `n x nL`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeTarget {
    n: usize,
    l: usize,
    data: Vec<f64>,
}

impl ModeTarget {
    pub fn from_row_major(n: usize, l: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n * l {
            return Err(invalid("mode target has wrong size"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("mode target has non-finite entries"));
        }
        Ok(Self { n, l, data })
    }

    pub fn from_matrix(mat: &DMatrix<f64>) -> Result<Self> {
        let n = mat.nrows();
        if n == 0 || !mat.ncols().is_multiple_of(n) {
            return Err(invalid("mode target must be n x nL"));
        }
        let l = mat.ncols() / n;
        let data = (0..n)
            .flat_map(|i| (0..n * l).map(move |j| (i, j)))
            .map(|(i, j)| mat[(i, j)])
            .collect();
        Self::from_row_major(n, l, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_blocks(&self) -> usize {
        self.l
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n * self.l + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// The `n x n` block belonging to filter `l`.
    pub fn block(&self, l: usize) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| self.get(i, l * n + j))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n * self.l, &self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A cumulant with its per-row Fourier images `Φ^{(m)} = U^H Γ^{(m)} U`
/// precomputed. Reused across every ALS iteration on the same cumulant.
#[derive(Clone, Debug)]
pub struct PreparedCumulant {
    n: usize,
    // phi[m][p n + q]
    phi: Vec<Vec<Complex64>>,
}

impl PreparedCumulant {
    pub fn new(cum: &CumulantUnfolding) -> Self {
        let n = cum.n();
        let phi = parallel::map_range(n, |m| {
            let row = cum.row(m);
            // gamma[b][c] = row[b + c n]; transform c with idft (unnormalized),
            // then b with dft, divide by n overall.
            let mut t = vec![Complex64::new(0.0, 0.0); n * n];
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for b in 0..n {
                for c in 0..n {
                    buf[c] = Complex64::new(row[b + c * n], 0.0);
                }
                fft_in_place(&mut buf, true);
                t[b * n..(b + 1) * n].copy_from_slice(&buf);
            }
            let mut phi = vec![Complex64::new(0.0, 0.0); n * n];
            for q in 0..n {
                for b in 0..n {
                    buf[b] = t[b * n + q];
                }
                fft_in_place(&mut buf, false);
                for p in 0..n {
                    phi[p * n + q] = buf[p];
                }
            }
            phi
        });
        Self { n, phi }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Φ^{(m)}` as a dense matrix.
    pub fn phi(&self, m: usize) -> DMatrix<Complex64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |p, q| self.phi[m][p * n + q])
    }

    /// Row `m` of `Cum (C ⊙ B)` restricted to filter `l`: the diagonal of
    /// `Cir(g_l)^T Γ^{(m)} Cir(h_l)`.
    fn correlation_block(&self, m: usize, g: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let phi = &self.phi[m];
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        for p in 0..n {
            let gp = g[p].conj();
            let row = &phi[p * n..(p + 1) * n];
            for (q, (z, hq)) in row.iter().zip(h).enumerate() {
                e[(p + n - q) % n] += gp * z * hq;
            }
        }
        fft_in_place(&mut e, true);
        e
    }

    /// `Cum (C ⊙ B)` as an `n x nL` matrix, row-major. Exposed for testing.
    pub fn correlate(&self, g: &SpectralBank, h: &SpectralBank) -> Result<Vec<f64>> {
        check_banks(g, h)?;
        if g.n() != self.n {
            return Err(invalid("filter length does not match cumulant dimension"));
        }
        let rows = parallel::map_range(self.n, |m| {
            (0..g.len())
                .flat_map(|l| {
                    self.correlation_block(m, g.spectrum(l), h.spectrum(l))
                        .into_iter()
                        .map(|z| z.re)
                })
                .collect::<Vec<f64>>()
        });
        Ok(rows.concat())
    }

    /// `M = Cum ((C ⊙ B)^T)^+` given `Ψ^{-1}`.
    pub fn compute_m_with(&self, g: &SpectralBank, h: &SpectralBank, psi_inv: &PsiInverse) -> Result<ModeTarget> {
        check_banks(g, h)?;
        let (n, l) = (self.n, g.len());
        if g.n() != n {
            return Err(invalid("filter length does not match cumulant dimension"));
        }
        if psi_inv.n != n || psi_inv.l != l {
            return Err(invalid("Ψ^{-1} shape does not match filter banks"));
        }
        let rows = parallel::map_range(n, |m| {
            // a_j = idft(d_j): d 𝐔 up to a sqrt(n) factor cancelled by 𝐔^H
            let a: Vec<Vec<Complex64>> = (0..l)
                .map(|j| {
                    let mut d = self.correlation_block(m, g.spectrum(j), h.spectrum(j));
                    d.iter_mut().for_each(|z| z.im = 0.0);
                    fft_in_place(&mut d, true);
                    d
                })
                .collect();
            let mut row = Vec::with_capacity(n * l);
            let mut max_imag: f64 = 0.0;
            for k in 0..l {
                let mut b = vec![Complex64::new(0.0, 0.0); n];
                for (j, aj) in a.iter().enumerate() {
                    for ((bp, x), y) in b.iter_mut().zip(aj).zip(psi_inv.block(j, k)) {
                        *bp += x * y;
                    }
                }
                fft_in_place(&mut b, false);
                for z in &b {
                    max_imag = max_imag.max(z.im.abs());
                    row.push(z.re);
                }
            }
            (row, max_imag)
        });
        let max_imag = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        let data: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
        let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
        if max_imag > IMAG_TOL * norm.max(f64::MIN_POSITIVE) && max_imag > 1e-300 {
            return Err(Error::ImaginaryResidue { max_imag, norm });
        }
        ModeTarget::from_row_major(n, l, data)
    }

    pub fn compute_m(&self, g: &SpectralBank, h: &SpectralBank, ridge: f64) -> Result<ModeTarget> {
        let psi = psi_build(g, h)?;
        let inv = psi_invert(&psi, ridge)?;
        self.compute_m_with(g, h, &inv)
    }
}

/// Fast path for `M = Cum ((C ⊙ B)^T)^+`, where `g` holds the spectra of
/// the second-mode factor `B` and `h` those of the third-mode factor `C`.
pub fn compute_m_fast(cum: &CumulantUnfolding, g: &SpectralBank, h: &SpectralBank, ridge: f64) -> Result<ModeTarget> {
    PreparedCumulant::new(cum).compute_m(g, h, ridge)
}
