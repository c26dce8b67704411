//! Dense reference computations. These materialize the stacked circulants
//! and Khatri-Rao products and are meant for small `n` (say `n <= 16`,
//! `L <= 4`) as oracles for the structured paths.

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::circulant::{circulant, khatri_rao, DftBasis, FilterBank};
use crate::cumulant::CumulantUnfolding;
use crate::error::{invalid, Result};
use crate::spectral::ModeTarget;

/// `[Cir(f_1), ..., Cir(f_L)]`, `n x nL`.
pub fn stacked_circulant(bank: &FilterBank) -> DMatrix<f64> {
    let n = bank.n();
    let mut out = DMatrix::zeros(n, n * bank.len());
    for (l, f) in bank.iter().enumerate() {
        out.columns_mut(l * n, n).copy_from(&circulant(f));
    }
    out
}

/// `blkdiag(U, ..., U)` with `L` copies.
pub fn block_unitary(n: usize, l: usize) -> DMatrix<Complex64> {
    let u = DftBasis::new(n).unitary();
    let mut out = DMatrix::zeros(n * l, n * l);
    for k in 0..l {
        out.view_mut((k * n, k * n), (n, n)).copy_from(&u);
    }
    out
}

/// `(C^T C) .* (B^T B)` with `B` built from `g` and `C` from `h`.
pub fn gram_hadamard(g: &FilterBank, h: &FilterBank) -> DMatrix<f64> {
    let b = stacked_circulant(g);
    let c = stacked_circulant(h);
    (c.transpose() * &c).component_mul(&(b.transpose() * &b))
}

/// Moore-Penrose pseudoinverse via SVD. Warns when the matrix is close to
/// rank deficient.
pub fn pinv(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = mat.clone().svd(true, true);
    let smallest = svd.singular_values.iter().copied().fold(f64::INFINITY, f64::min);
    if smallest < 1e-10 {
        warn!("pseudoinverse of a near rank-deficient matrix (smallest singular value {smallest:e})");
    }
    svd.pseudo_inverse(1e-12).map_err(|e| invalid(e.to_string()))
}

/// `M = Cum ((C ⊙ B)^T)^+` by dense pseudoinversion.
pub fn compute_m_dense(cum: &CumulantUnfolding, g: &FilterBank, h: &FilterBank) -> Result<ModeTarget> {
    if g.n() != cum.n() || h.n() != cum.n() || g.len() != h.len() {
        return Err(invalid("factor banks do not match the cumulant"));
    }
    let kr = khatri_rao(&stacked_circulant(h), &stacked_circulant(g))?;
    let m = cum.to_matrix() * pinv(&kr.transpose())?;
    ModeTarget::from_matrix(&m)
}
