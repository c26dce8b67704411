//! Synthetic convolutional-ICA data: ground-truth filters and samples
//! `x = Σ_l f_l ∗ w_l` with i.i.d. activation coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::activation::ActivationSpec;
use crate::circulant::{stacked_apply, Filter, FilterBank};
use crate::error::{invalid, Error, Result};
use crate::parallel;

/// Resampling threshold on pairwise `|<f_i, f_j>|` for `n >= 16`.
pub const MAX_COHERENCE: f64 = 0.9;
const MAX_DRAWS: usize = 1000;
/// Samples use their index as the RNG stream; filters use this one.
pub const TRUTH_STREAM: u64 = u64::MAX - 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub bank: FilterBank,
    pub activation: ActivationSpec,
    /// One third cumulant per activation coordinate (`nL` entries, all equal).
    pub lambda_star: Vec<f64>,
}

impl GroundTruth {
    pub fn from_bank(bank: FilterBank, activation: ActivationSpec) -> Self {
        let lambda_star = vec![activation.third_cumulant(); bank.n() * bank.len()];
        Self {
            bank,
            activation,
            lambda_star,
        }
    }

    pub fn n(&self) -> usize {
        self.bank.n()
    }

    pub fn num_filters(&self) -> usize {
        self.bank.len()
    }
}

pub fn make_ground_truth(n: usize, l: usize, seed: u64, activation: ActivationSpec) -> Result<GroundTruth> {
    make_ground_truth_with_support(n, l, seed, activation, None)
}

fn max_coherence(bank: &FilterBank) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..bank.len() {
        for j in i + 1..bank.len() {
            let dot: f64 = bank
                .filter(i)
                .iter()
                .zip(bank.filter(j).iter())
                .map(|(a, b)| a * b)
                .sum();
            worst = worst.max(dot.abs());
        }
    }
    worst
}

/// Like [`make_ground_truth`], optionally zeroing every coefficient at index
/// `>= support` before normalizing (`support <= n / 2` keeps cyclic and
/// linear convolution equal). For `n >= 16` banks whose filters are too
/// coherent are redrawn; this is skipped when the support is shorter than 4,
/// where coherent draws are unavoidable.
pub fn make_ground_truth_with_support(
    n: usize,
    l: usize,
    seed: u64,
    activation: ActivationSpec,
    support: Option<usize>,
) -> Result<GroundTruth> {
    if l < 1 || l >= n {
        return Err(invalid(format!("need 1 <= L < n, got L = {l}, n = {n}")));
    }
    let s = support.unwrap_or(n);
    if s < 1 || (support.is_some() && s > n / 2) {
        return Err(invalid(format!("support must be in [1, n/2], got {s}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRUTH_STREAM);
    let check = n >= 16 && s >= 4;
    for _ in 0..MAX_DRAWS {
        let filters = (0..l)
            .map(|_| {
                let coeffs = (0..n)
                    .map(|i| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        if i < s {
                            v
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Filter::unit(coeffs)
            })
            .collect::<Result<Vec<_>>>()?;
        let bank = FilterBank::new(filters)?;
        if !check || max_coherence(&bank) < MAX_COHERENCE {
            return Ok(GroundTruth::from_bank(bank, activation));
        }
    }
    Err(Error::DegenerateInput(format!(
        "no incoherent filter bank found in {MAX_DRAWS} draws"
    )))
}

/// `N` samples, row-major `N x n`, with the activations optionally kept
/// (row-major `N x nL`).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    n: usize,
    x: Vec<f64>,
    w: Option<Vec<f64>>,
}

impl SampleSet {
    pub fn new(n: usize, x: Vec<f64>, w: Option<Vec<f64>>) -> Result<Self> {
        if n == 0 || !x.len().is_multiple_of(n) {
            return Err(invalid("sample data is not a multiple of n"));
        }
        if let Some(w) = &w {
            let count = x.len() / n;
            if count == 0 || w.len() % count != 0 || !(w.len() / count).is_multiple_of(n) {
                return Err(invalid("activation data does not match the samples"));
            }
        }
        Ok(Self { n, x, w })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn activations(&self) -> Option<&[f64]> {
        self.w.as_deref()
    }

    pub fn activation(&self, i: usize) -> Option<&[f64]> {
        let w = self.w.as_deref()?;
        let stride = w.len() / self.len();
        Some(&w[i * stride..(i + 1) * stride])
    }

    pub fn into_parts(self) -> (usize, Vec<f64>, Option<Vec<f64>>) {
        (self.n, self.x, self.w)
    }
}

/// Sample `index` depends only on `(seed, index)`, so any range of samples
/// can be regenerated independently and in parallel.
fn draw_one(gt: &GroundTruth, seed: u64, index: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let sampler = gt.activation.sampler();
    let w: Vec<f64> = (0..gt.n() * gt.num_filters()).map(|_| sampler.draw(&mut rng)).collect();
    let x = stacked_apply(&gt.bank, &w).expect("activation length matches the bank");
    (x, w)
}

/// Samples `start..start + count`, row-major.
pub fn sample_range(gt: &GroundTruth, seed: u64, start: u64, count: usize, keep_w: bool) -> SampleSet {
    let rows = parallel::map_range(count, |i| draw_one(gt, seed, start + i as u64));
    let mut x = Vec::with_capacity(count * gt.n());
    let mut w = keep_w.then(|| Vec::with_capacity(count * gt.n() * gt.num_filters()));
    for (xi, wi) in rows {
        x.extend_from_slice(&xi);
        if let Some(w) = w.as_mut() {
            w.extend_from_slice(&wi);
        }
    }
    SampleSet { n: gt.n(), x, w }
}

pub fn sample(gt: &GroundTruth, count: usize, seed: u64, keep_w: bool) -> Result<SampleSet> {
    if count == 0 {
        return Err(invalid("need at least one sample"));
    }
    Ok(sample_range(gt, seed, 0, count, keep_w))
}

/// Yields the samples of [`sample`] in consecutive chunks without holding
/// them all in memory.
pub struct SampleStream<'a> {
    gt: &'a GroundTruth,
    seed: u64,
    next: u64,
    total: u64,
    chunk: usize,
}

impl<'a> SampleStream<'a> {
    pub fn new(gt: &'a GroundTruth, total: usize, seed: u64, chunk: usize) -> Self {
        Self {
            gt,
            seed,
            next: 0,
            total: total as u64,
            chunk: chunk.max(1),
        }
    }
}

impl Iterator for SampleStream<'_> {
    type Item = SampleSet;

    fn next(&mut self) -> Option<SampleSet> {
        if self.next >= self.total {
            return None;
        }
        let count = (self.total - self.next).min(self.chunk as u64) as usize;
        let out = sample_range(self.gt, self.seed, self.next, count, false);
        self.next += count as u64;
        Some(out)
    }
}
