//! Baseline: alternating gradient descent on filters and per-sample
//! activation maps for the square loss `mean_i ||x_i - Σ_l f_l ∗ w_il||²`.

use std::time::Instant;

use log::warn;
use num_complex::Complex64;

use crate::circulant::{inverse_real, real_spectrum, Filter, FilterBank};
use crate::decompose::random_unit_bank;
use crate::error::{invalid, Result};
use crate::parallel;

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Samples per parallel work item; partial sums are merged in block order.
const BLOCK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct AltMinConfig {
    pub step_size_f: f64,
    pub step_size_w: f64,
    pub inner_steps: usize,
    pub max_outer_iters: usize,
    pub seed: u64,
    /// Stop when the relative loss decrease over one outer iteration falls
    /// below this. Zero disables the check.
    pub tol: f64,
    /// Stop after the outer iteration that crosses this much wall time.
    pub max_wall_ms: Option<f64>,
}

impl Default for AltMinConfig {
    /// Steps from a coarse grid on Poisson(1) data at `(n, L) = (16, 2)` and
    /// `(32, 8)`; activation steps of 0.05 and up diverge at `L = 8`.
    fn default() -> Self {
        Self {
            step_size_f: 3e-4,
            step_size_w: 0.03,
            inner_steps: 1,
            max_outer_iters: 200,
            seed: 0,
            tol: 0.0,
            max_wall_ms: None,
        }
    }
}

impl AltMinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size_f >= 0.0 && self.step_size_w >= 0.0)
            || !self.step_size_f.is_finite()
            || !self.step_size_w.is_finite()
        {
            return Err(invalid("step sizes must be finite and >= 0"));
        }
        if self.inner_steps < 1 || self.max_outer_iters < 1 {
            return Err(invalid("inner_steps and max_outer_iters must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(invalid("tol must be >= 0"));
        }
        Ok(())
    }
}

/// Per-sample activation maps, row-major `N x nL`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationEstimates {
    n: usize,
    l: usize,
    data: Vec<f64>,
}

impl ActivationEstimates {
    pub fn zeros(n: usize, l: usize, count: usize) -> Self {
        Self {
            n,
            l,
            data: vec![0.0; count * n * l],
        }
    }

    pub fn from_row_major(n: usize, l: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || l == 0 || !data.len().is_multiple_of(n * l) {
            return Err(invalid("activation data is not a multiple of nL"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("non-finite activation"));
        }
        Ok(Self { n, l, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.n * self.l)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let stride = self.n * self.l;
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_shapes(x: &[f64], bank: &FilterBank, w: &ActivationEstimates) -> Result<usize> {
    let n = bank.n();
    if w.n != n || w.l != bank.len() {
        return Err(invalid("activation shape does not match the filter bank"));
    }
    if !x.len().is_multiple_of(n) || x.len() / n != w.len() {
        return Err(invalid(format!(
            "{} sample values for {} activation rows of length {n}",
            x.len(),
            w.len()
        )));
    }
    Ok(w.len())
}

/// Spectra of one sample's activation maps and its residual spectrum.
fn residual_spectrum(x: &[f64], spectra: &[Vec<Complex64>], w: &[f64], n: usize) -> Vec<Complex64> {
    let mut r = real_spectrum(x);
    for (fl, wl) in spectra.iter().zip(w.chunks_exact(n)) {
        if wl.iter().all(|&v| v == 0.0) {
            continue;
        }
        for ((rk, fk), wk) in r.iter_mut().zip(fl).zip(real_spectrum(wl)) {
            *rk -= fk * wk;
        }
    }
    r
}

fn residual_norm_sq(r_spec: &[Complex64]) -> f64 {
    // Parseval with the unnormalized forward transform
    r_spec.iter().map(|z| z.norm_sqr()).sum::<f64>() / r_spec.len() as f64
}

fn for_blocks<T: Send>(count: usize, f: impl Fn(std::ops::Range<usize>) -> T + Sync + Send) -> Vec<T> {
    let blocks = count.div_ceil(BLOCK);
    parallel::map_range(blocks, |b| f(b * BLOCK..((b + 1) * BLOCK).min(count)))
}

/// Mean over samples of the squared residual norm.
pub fn loss(x: &[f64], bank: &FilterBank, w: &ActivationEstimates) -> Result<f64> {
    let count = check_shapes(x, bank, w)?;
    if count == 0 {
        return Ok(0.0);
    }
    let n = bank.n();
    let spectra: Vec<_> = bank.iter().map(|f| f.spectrum()).collect();
    let partial = for_blocks(count, |range| {
        range
            .map(|i| {
                let r = residual_spectrum(&x[i * n..(i + 1) * n], &spectra, w.sample(i), n);
                residual_norm_sq(&r)
            })
            .sum::<f64>()
    });
    Ok(partial.iter().sum::<f64>() / count as f64)
}

/// `d loss / d f_l = -(2/N) Σ_i Cir(w_il)^T r_i`.
pub fn grad_filters(x: &[f64], bank: &FilterBank, w: &ActivationEstimates) -> Result<Vec<Vec<f64>>> {
    let count = check_shapes(x, bank, w)?;
    let (n, l) = (bank.n(), bank.len());
    if count == 0 {
        return Ok(vec![vec![0.0; n]; l]);
    }
    let spectra: Vec<_> = bank.iter().map(|f| f.spectrum()).collect();
    // Accumulate in the frequency domain: Cir(w)^T r has spectrum conj(W) R.
    let partial = for_blocks(count, |range| {
        let mut acc = vec![Complex64::new(0.0, 0.0); n * l];
        for i in range {
            let wi = w.sample(i);
            let r = residual_spectrum(&x[i * n..(i + 1) * n], &spectra, wi, n);
            for (acc_l, wl) in acc.chunks_exact_mut(n).zip(wi.chunks_exact(n)) {
                for ((a, wk), rk) in acc_l.iter_mut().zip(real_spectrum(wl)).zip(&r) {
                    *a += wk.conj() * rk;
                }
            }
        }
        acc
    });
    let mut total = vec![Complex64::new(0.0, 0.0); n * l];
    for p in &partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let scale = -2.0 / count as f64;
    Ok(total
        .chunks_exact(n)
        .map(|s| inverse_real(s).into_iter().map(|v| v * scale).collect())
        .collect())
}

/// `d ||r||² / d w_l = -2 Cir(f_l)^T r` for one sample, concatenated over `l`.
pub fn grad_activations(x: &[f64], bank: &FilterBank, w: &[f64]) -> Result<Vec<f64>> {
    let n = bank.n();
    if x.len() != n || w.len() != n * bank.len() {
        return Err(invalid("sample or activation length does not match the bank"));
    }
    let spectra: Vec<_> = bank.iter().map(|f| f.spectrum()).collect();
    Ok(activation_gradient(x, &spectra, w, n))
}

fn activation_gradient(x: &[f64], spectra: &[Vec<Complex64>], w: &[f64], n: usize) -> Vec<f64> {
    let r = residual_spectrum(x, spectra, w, n);
    spectra
        .iter()
        .flat_map(|fl| {
            let s: Vec<Complex64> = fl.iter().zip(&r).map(|(f, rk)| -2.0 * f.conj() * rk).collect();
            inverse_real(&s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AltMinTraceRow {
    pub iter: usize,
    pub wall_ms: f64,
    pub loss: f64,
    pub filters: FilterBank,
}

#[derive(Clone, Debug)]
pub struct AltMinOutcome {
    pub filters: FilterBank,
    pub activations: ActivationEstimates,
    pub loss: f64,
    pub diverged: bool,
    pub trace: Vec<AltMinTraceRow>,
}

fn activation_phase(x: &[f64], bank: &FilterBank, w: &mut ActivationEstimates, step: f64, inner: usize) {
    let n = bank.n();
    let stride = n * bank.len();
    let spectra: Vec<_> = bank.iter().map(|f| f.spectrum()).collect();
    let mut rows: Vec<&mut [f64]> = w.data.chunks_exact_mut(stride).collect();
    parallel::for_each_mut(&mut rows, |i, wi| {
        let xi = &x[i * n..(i + 1) * n];
        for _ in 0..inner {
            let g = activation_gradient(xi, &spectra, wi, n);
            for (v, gv) in wi.iter_mut().zip(g) {
                *v -= step * gv;
            }
        }
    });
}

/// Gradient steps on the filters, each followed by renormalization. The
/// matching activations are scaled by the old norm so the model itself is
/// unchanged by the renormalization.
fn filter_phase(
    x: &[f64],
    bank: &FilterBank,
    w: &mut ActivationEstimates,
    step: f64,
    inner: usize,
) -> Result<FilterBank> {
    let n = bank.n();
    let mut bank = bank.clone();
    for _ in 0..inner {
        let grads = grad_filters(x, &bank, w)?;
        let mut norms = Vec::with_capacity(bank.len());
        let mut filters = Vec::with_capacity(bank.len());
        for (f, g) in bank.iter().zip(&grads) {
            let coeffs: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - step * b).collect();
            let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(invalid("filter update collapsed to zero or overflowed"));
            }
            norms.push(norm);
            filters.push(Filter::new(coeffs.iter().map(|c| c / norm).collect())?);
        }
        let stride = n * bank.len();
        let mut rows: Vec<&mut [f64]> = w.data.chunks_exact_mut(stride).collect();
        parallel::for_each_mut(&mut rows, |_, wi| {
            for (wl, &s) in wi.chunks_exact_mut(n).zip(&norms) {
                for v in wl.iter_mut() {
                    *v *= s;
                }
            }
        });
        bank = FilterBank::new(filters)?;
    }
    Ok(bank)
}

/// Runs the baseline from the seeded random filter start used by the CT
/// decomposition, with zero activations. Divergence is reported through the
/// outcome, which then holds the best state seen.
pub fn run_altmin(x: &[f64], n: usize, l: usize, cfg: &AltMinConfig) -> Result<AltMinOutcome> {
    cfg.validate()?;
    if n < 2 || x.is_empty() || !x.len().is_multiple_of(n) {
        return Err(invalid("need at least one sample of length n >= 2"));
    }
    if l < 1 || l >= n {
        return Err(invalid(format!("need 1 <= L < n, got L = {l}, n = {n}")));
    }
    let clock = Instant::now();
    let count = x.len() / n;
    let mut bank = random_unit_bank(n, l, cfg.seed)?;
    let mut w = ActivationEstimates::zeros(n, l, count);
    let mut current = loss(x, &bank, &w)?;
    let mut trace = vec![AltMinTraceRow {
        iter: 0,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        loss: current,
        filters: bank.clone(),
    }];
    let mut best = (current, bank.clone(), w.clone());
    let mut diverged = false;
    for iter in 1..=cfg.max_outer_iters {
        activation_phase(x, &bank, &mut w, cfg.step_size_w, cfg.inner_steps);
        let next = filter_phase(x, &bank, &mut w, cfg.step_size_f, cfg.inner_steps)
            .and_then(|b| loss(x, &b, &w).map(|v| (b, v)));
        let (next_bank, next_loss) = match next {
            Ok((b, v)) if v.is_finite() && v <= DIVERGENCE_LOSS => (b, v),
            _ => {
                warn!("alternating minimization diverged at outer iteration {iter}");
                diverged = true;
                break;
            }
        };
        bank = next_bank;
        trace.push(AltMinTraceRow {
            iter,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            loss: next_loss,
            filters: bank.clone(),
        });
        if next_loss <= best.0 {
            best = (next_loss, bank.clone(), w.clone());
        }
        let improvement = (current - next_loss) / current.max(f64::MIN_POSITIVE);
        current = next_loss;
        if cfg.tol > 0.0 && improvement.abs() < cfg.tol {
            break;
        }
        if cfg.max_wall_ms.is_some_and(|b| clock.elapsed().as_secs_f64() * 1e3 > b) {
            break;
        }
    }
    let (loss, filters, activations) = if diverged { best } else { (current, bank, w) };
    Ok(AltMinOutcome {
        filters,
        activations,
        loss,
        diverged,
        trace,
    })
}
