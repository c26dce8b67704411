//! Cyclic convolution and circulant algebra.
//!
//! Indexing is zero-based throughout. A circulant built from `f` has entry
//! `(i, j) = f[(i - j) mod n]`, so column `j` is `f` cyclically shifted down by
//! `j`. The DFT uses `omega = exp(-2 pi i / n)`, unnormalized forward and
//! `1/n`-normalized inverse; with `U = sqrt(n) F^{-1}` every circulant factors
//! as `Cir(f) = U diag(dft(f)) U^H`.

use std::cell::RefCell;
use std::ops::Deref;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place transform; `inverse` applies the `1/n` normalization.
pub(crate) fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let plan = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    plan.process(buf);
    if inverse {
        let scale = 1.0 / n as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }
}

pub(crate) fn real_spectrum(v: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf, false);
    buf
}

pub(crate) fn inverse_real(spectrum: &[Complex64]) -> Vec<f64> {
    let mut buf = spectrum.to_vec();
    fft_in_place(&mut buf, true);
    buf.into_iter().map(|z| z.re).collect()
}

/// Forward DFT `F v`.
pub fn dft(v: &[Complex64]) -> Result<Vec<Complex64>> {
    if v.is_empty() {
        return Err(invalid("dft of an empty vector"));
    }
    let mut buf = v.to_vec();
    fft_in_place(&mut buf, false);
    Ok(buf)
}

/// Forward DFT of a real vector, returned as the full complex spectrum.
pub fn dft_real(v: &[f64]) -> Result<Vec<Complex64>> {
    if v.is_empty() {
        return Err(invalid("dft of an empty vector"));
    }
    Ok(real_spectrum(v))
}

/// Inverse DFT, `idft(dft(v)) == v`.
pub fn idft(v: &[Complex64]) -> Result<Vec<Complex64>> {
    if v.is_empty() {
        return Err(invalid("idft of an empty vector"));
    }
    let mut buf = v.to_vec();
    fft_in_place(&mut buf, true);
    Ok(buf)
}

/// A real filter of length `n >= 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    coeffs: Vec<f64>,
}

impl Filter {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(invalid(format!(
                "filter length must be at least 2, got {}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("filter has non-finite coefficients"));
        }
        Ok(Self { coeffs })
    }

    /// Builds a filter rescaled to unit l2 norm.
    pub fn unit(coeffs: Vec<f64>) -> Result<Self> {
        let mut f = Self::new(coeffs)?;
        let norm = f.norm();
        if norm == 0.0 {
            return Err(invalid("cannot normalize an all-zero filter"));
        }
        f.coeffs.iter_mut().for_each(|c| *c /= norm);
        Ok(f)
    }

    /// Unit impulse at position 0.
    pub fn delta(n: usize) -> Result<Self> {
        let mut c = vec![0.0; n];
        if let Some(first) = c.first_mut() {
            *first = 1.0;
        }
        Self::new(c)
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= 1e-12
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Cyclic shift: `out[i] = self[(i - s) mod n]`.
    pub fn shifted(&self, s: usize) -> Self {
        let n = self.len();
        let coeffs = (0..n).map(|i| self.coeffs[(i + n - s % n) % n]).collect();
        Self { coeffs }
    }

    pub fn negated(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        real_spectrum(&self.coeffs)
    }
}

impl Deref for Filter {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.coeffs
    }
}

/// `L` filters of common length `n`, with `1 <= L < n`. Represents the
/// column-stacked circulant `[Cir(f_1), ..., Cir(f_L)]` without forming it.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    n: usize,
    filters: Vec<Filter>,
}

impl FilterBank {
    pub fn new(filters: Vec<Filter>) -> Result<Self> {
        let n = filters
            .first()
            .map(Filter::len)
            .ok_or_else(|| invalid("filter bank needs at least one filter"))?;
        if filters.iter().any(|f| f.len() != n) {
            return Err(invalid("filters in a bank must share one length"));
        }
        if filters.len() >= n {
            return Err(invalid(format!(
                "bank of L = {} filters of length n = {} violates L < n",
                filters.len(),
                n
            )));
        }
        Ok(Self { n, filters })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(Filter::new).collect::<Result<_>>()?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of filters `L`.
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn filter(&self, l: usize) -> &Filter {
        &self.filters[l]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Filter> {
        self.filters.iter()
    }

    pub fn into_filters(self) -> Vec<Filter> {
        self.filters
    }

    /// Column `j` of the stacked circulant: filter `j / n` shifted by `j % n`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let (l, s) = (j / self.n, j % self.n);
        let f = &self.filters[l];
        (0..self.n).map(|i| f[(i + self.n - s) % self.n]).collect()
    }

    pub fn spectra(&self) -> SpectralBank {
        SpectralBank {
            n: self.n,
            spectra: self.filters.iter().map(Filter::spectrum).collect(),
        }
    }
}

/// DFT coefficients of every filter in a bank.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBank {
    n: usize,
    spectra: Vec<Vec<Complex64>>,
}

impl SpectralBank {
    pub fn new(spectra: Vec<Vec<Complex64>>) -> Result<Self> {
        let n = spectra
            .first()
            .map(Vec::len)
            .ok_or_else(|| invalid("spectral bank needs at least one spectrum"))?;
        if spectra.iter().any(|s| s.len() != n) {
            return Err(invalid("spectra in a bank must share one length"));
        }
        Ok(Self { n, spectra })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    pub fn spectrum(&self, l: usize) -> &[Complex64] {
        &self.spectra[l]
    }

    /// True when every spectrum transforms back to a real filter.
    pub fn is_real(&self, tol: f64) -> bool {
        self.spectra.iter().all(|s| {
            let mut buf = s.clone();
            fft_in_place(&mut buf, true);
            buf.iter().all(|z| z.im.abs() <= tol)
        })
    }
}

/// The dimension-`n` DFT basis. Only used to materialize dense `F` and `U`
/// for reference computations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DftBasis {
    pub n: usize,
}

impl DftBasis {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    /// `F[m][k] = omega^{m k}`.
    pub fn fourier(&self) -> DMatrix<Complex64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |m, k| {
            let theta = -2.0 * std::f64::consts::PI * ((m * k) % n) as f64 / n as f64;
            Complex64::from_polar(1.0, theta)
        })
    }

    /// `U = sqrt(n) F^{-1}`, the shared eigenbasis of all circulants.
    pub fn unitary(&self) -> DMatrix<Complex64> {
        let n = self.n;
        let scale = 1.0 / (n as f64).sqrt();
        DMatrix::from_fn(n, n, |m, k| {
            let theta = 2.0 * std::f64::consts::PI * ((m * k) % n) as f64 / n as f64;
            Complex64::from_polar(scale, theta)
        })
    }
}

/// `v[i] = sum_j f[j] w[(i - j) mod n]`, i.e. `Cir(f) w`.
pub fn cyclic_convolve(f: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let n = f.len();
    if w.len() != n {
        return Err(invalid(format!("cyclic convolution of lengths {} and {}", n, w.len())));
    }
    let mut out = vec![0.0; n];
    for (j, &fj) in f.iter().enumerate() {
        if fj == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += fj * w[(i + n - j) % n];
        }
    }
    Ok(out)
}

/// Dense `n x n` circulant of `f`.
pub fn circulant(f: &[f64]) -> DMatrix<f64> {
    let n = f.len();
    DMatrix::from_fn(n, n, |i, j| f[(i + n - j) % n])
}

/// Column-wise Khatri-Rao product: column `j` is `a_j ⊙ b_j`, with
/// `(u ⊙ v)[i * len(v) + k] = u[i] v[k]`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(invalid(format!(
            "khatri-rao of {} and {} columns",
            a.ncols(),
            b.ncols()
        )));
    }
    let rb = b.nrows();
    Ok(DMatrix::from_fn(a.nrows() * rb, a.ncols(), |r, j| {
        a[(r / rb, j)] * b[(r % rb, j)]
    }))
}

/// `[Cir(f_1), ..., Cir(f_L)] w` for a stacked `w` of length `nL`.
pub fn stacked_apply(bank: &FilterBank, w: &[f64]) -> Result<Vec<f64>> {
    let n = bank.n();
    if w.len() != n * bank.len() {
        return Err(invalid(format!(
            "stacked activation has length {}, expected {}",
            w.len(),
            n * bank.len()
        )));
    }
    let mut x = vec![0.0; n];
    for (f, wl) in bank.iter().zip(w.chunks_exact(n)) {
        for (xi, vi) in x.iter_mut().zip(cyclic_convolve(f, wl)?) {
            *xi += vi;
        }
    }
    Ok(x)
}
