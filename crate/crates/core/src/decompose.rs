//! Convolutional tensor (CT) decomposition: alternating least squares over
//! three stacked-circulant factor banks, each update solved in closed form by
//! projecting the least-squares target onto circulant blocks.

use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::circulant::{Filter, FilterBank};
use crate::cumulant::{analytic_cumulant, model_cumulant, CumulantUnfolding};
use crate::error::{invalid, Error, Result};
use crate::parallel;
use crate::spectral::{default_ridge, psi_build, psi_invert, ModeTarget, PreparedCumulant};

/// Columns with norm below this are left out of the circulant projection.
pub const ZERO_COLUMN_EPS: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Fit all `L` filters at once.
    Joint,
    /// Fit one filter at a time, subtracting each from the cumulant.
    Deflation,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "deflation" => Ok(Self::Deflation),
            _ => Err(invalid(format!("unknown mode {s:?} (expected joint or deflation)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlsConfig {
    pub max_iters: usize,
    /// Stop once the largest sign-invariant filter change drops below this.
    pub tol_filter_change: f64,
    /// Ridge added to Ψ; `None` uses [`default_ridge`].
    pub ridge: Option<f64>,
    pub seed: u64,
    pub mode: Mode,
    /// Number of sweeps over the components in deflation mode. Passes after
    /// the first refit each component against the others' current estimate.
    pub deflation_passes: usize,
    /// Independent random starts; the one with the lowest objective wins.
    pub restarts: usize,
    /// Stop sweeping (unconverged) once the run has used this much time.
    pub max_wall_ms: Option<f64>,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol_filter_change: 1e-8,
            ridge: None,
            seed: 0,
            mode: Mode::Joint,
            deflation_passes: 1,
            restarts: 1,
            max_wall_ms: None,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.tol_filter_change > 0.0) {
            return Err(invalid("tol_filter_change must be positive"));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(invalid("ridge must be finite and >= 0"));
            }
        }
        if self.restarts < 1 || self.deflation_passes < 1 {
            return Err(invalid("restarts and deflation_passes must be at least 1"));
        }
        Ok(())
    }
}

/// The three mode factors and the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompState {
    pub a: FilterBank,
    pub b: FilterBank,
    pub c: FilterBank,
    pub lambda: Vec<f64>,
    pub iteration: usize,
    pub last_change: f64,
}

/// Random start: standard-normal filters, unit-normalized, shared by all
/// three modes, with unit weights.
pub fn init_state(n: usize, l: usize, seed: u64) -> Result<DecompState> {
    if l < 1 || l >= n {
        return Err(invalid(format!("need 1 <= L < n, got L = {l}, n = {n}")));
    }
    let bank = random_unit_bank(n, l, seed)?;
    Ok(DecompState {
        a: bank.clone(),
        b: bank.clone(),
        c: bank,
        lambda: vec![1.0; n * l],
        iteration: 0,
        last_change: f64::INFINITY,
    })
}

/// RNG stream reserved for solver starts, so a start never coincides with
/// ground truth or samples drawn from the same seed.
pub const INIT_STREAM: u64 = u64::MAX;

pub(crate) fn random_unit_bank(n: usize, l: usize, seed: u64) -> Result<FilterBank> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let filters = (0..l)
        .map(|_| {
            let coeffs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            Filter::unit(coeffs)
        })
        .collect::<Result<Vec<_>>>()?;
    FilterBank::new(filters)
}

/// Closed-form circulant update for one `n x n` block of the target:
/// normalize each column, average every cyclic diagonal, then rescale to
/// unit norm. Returns the filter and `||normalized block - Cir(f)||_F^2`.
pub fn project_circulant(block: &DMatrix<f64>) -> Result<(Filter, f64)> {
    let n = block.nrows();
    if block.ncols() != n || n < 2 {
        return Err(invalid("circulant projection needs a square block with n >= 2"));
    }
    if block.iter().any(|x| !x.is_finite()) {
        return Err(invalid("non-finite entries in projection target"));
    }
    let inv_norms: Vec<Option<f64>> = (0..n)
        .map(|j| {
            let norm = block.column(j).iter().map(|x| x * x).sum::<f64>().sqrt();
            (norm >= ZERO_COLUMN_EPS).then(|| 1.0 / norm)
        })
        .collect();
    let used = inv_norms.iter().flatten().count();
    if used == 0 {
        return Err(Error::DegenerateInput(
            "all columns of the projection target are zero".into(),
        ));
    }
    let mut sums = vec![0.0; n];
    for (j, inv) in inv_norms.iter().enumerate() {
        if let Some(inv) = inv {
            for i in 0..n {
                sums[(i + n - j) % n] += block[(i, j)] * inv;
            }
        }
    }
    let avg: Vec<f64> = sums.iter().map(|s| s / used as f64).collect();
    let filter = Filter::unit(avg).map_err(|_| Error::DegenerateInput("diagonal averages vanish".into()))?;
    let mut objective = 0.0;
    for (j, inv) in inv_norms.iter().enumerate() {
        let scale = inv.unwrap_or(0.0);
        for i in 0..n {
            let d = block[(i, j)] * scale - filter[(i + n - j) % n];
            objective += d * d;
        }
    }
    Ok((filter, objective))
}

/// `lambda(i) = ||M_i||`.
pub fn update_lambda(m: &ModeTarget) -> Vec<f64> {
    (0..m.n() * m.num_blocks())
        .map(|j| m.column(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

fn sign_invariant_change(old: &FilterBank, new: &FilterBank) -> f64 {
    old.iter()
        .zip(new.iter())
        .map(|(o, f)| {
            let (mut minus, mut plus) = (0.0, 0.0);
            for (x, y) in f.iter().zip(o.iter()) {
                minus += (x - y) * (x - y);
                plus += (x + y) * (x + y);
            }
            minus.min(plus).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Solves one mode: target from the two fixed factors (second mode `g`,
/// third mode `h`), then per-block circulant projection.
fn update_mode(
    prepared: &PreparedCumulant,
    second: &FilterBank,
    third: &FilterBank,
    ridge: Option<f64>,
) -> Result<(FilterBank, ModeTarget)> {
    let g = second.spectra();
    let h = third.spectra();
    let psi = psi_build(&g, &h)?;
    let ridge = ridge.unwrap_or_else(|| default_ridge(&psi));
    let inv = psi_invert(&psi, ridge)?;
    let m = prepared.compute_m_with(&g, &h, &inv)?;
    let filters = parallel::map_range(second.len(), |l| project_circulant(&m.block(l)).map(|r| r.0))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((FilterBank::new(filters)?, m))
}

/// One ALS sweep: A from (B, C), then B from (C, A), then C from (A, B).
pub fn als_sweep(state: &DecompState, prepared: &PreparedCumulant, cfg: &AlsConfig) -> Result<DecompState> {
    if state.a.n() != prepared.n() {
        return Err(invalid("state dimension does not match cumulant"));
    }
    let (a, _) = update_mode(prepared, &state.b, &state.c, cfg.ridge)?;
    let (b, _) = update_mode(prepared, &state.c, &a, cfg.ridge)?;
    let (c, m) = update_mode(prepared, &a, &b, cfg.ridge)?;
    let last_change = sign_invariant_change(&state.a, &a)
        .max(sign_invariant_change(&state.b, &b))
        .max(sign_invariant_change(&state.c, &c));
    Ok(DecompState {
        lambda: update_lambda(&m),
        a,
        b,
        c,
        iteration: state.iteration + 1,
        last_change,
    })
}

/// Least-squares weights for a fixed symmetric bank:
/// `argmin_λ ||Cum - F Λ (F ⊙ F)^T||_F`, solved through the `nL x nL` normal
/// equations `((F^T F) .^ 3) λ = r` with `r_j = Cum ×₁ F_j ×₂ F_j ×₃ F_j`.
pub fn fit_lambda(cum: &CumulantUnfolding, bank: &FilterBank) -> Result<Vec<f64>> {
    let n = cum.n();
    if bank.n() != n {
        return Err(invalid("filter length does not match the cumulant"));
    }
    let cols: Vec<Vec<f64>> = (0..n * bank.len()).map(|j| bank.column(j)).collect();
    let k = cols.len();
    let rhs = parallel::map_slice(&cols, |f| {
        let mut total = 0.0;
        for (x, fx) in f.iter().enumerate() {
            if *fx == 0.0 {
                continue;
            }
            let row = cum.row(x);
            let mut inner = 0.0;
            for (z, fz) in f.iter().enumerate() {
                let slab = &row[z * n..(z + 1) * n];
                inner += fz * slab.iter().zip(f).map(|(t, fy)| t * fy).sum::<f64>();
            }
            total += fx * inner;
        }
        total
    });
    let gram = DMatrix::from_fn(k, k, |i, j| {
        let d: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
        d * d * d
    });
    let svd = gram.svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    let solved = svd
        .solve(&nalgebra::DVector::from_vec(rhs), tol)
        .map_err(|e| invalid(e.to_string()))?;
    Ok(solved.iter().copied().collect())
}

/// `||Cum - A Λ (C ⊙ B)^T||_F`.
pub fn objective(cum: &CumulantUnfolding, state: &DecompState) -> Result<f64> {
    Ok(cum.distance(&model_cumulant(&state.a, &state.b, &state.c, &state.lambda)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub restart: usize,
    /// Elapsed time since the start of the run.
    pub wall_ms: f64,
    pub objective: f64,
    pub filter_change: f64,
    /// Current estimate (mode A) and weights.
    pub filters: FilterBank,
    pub lambda: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DecompOutcome {
    pub filters: FilterBank,
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
    /// Restart indices whose rows lead to the returned estimate: the winner
    /// in joint mode, one winner per component in deflation mode.
    pub selected_restarts: Vec<usize>,
}

impl DecompOutcome {
    /// Trace rows of the selected restarts, in run order.
    pub fn path(&self) -> impl Iterator<Item = &TraceRow> {
        self.trace
            .iter()
            .filter(|r| self.selected_restarts.contains(&r.restart))
    }
}

fn check_symmetric_modes(state: &DecompState) {
    let spread = sign_invariant_change(&state.a, &state.b).max(sign_invariant_change(&state.a, &state.c));
    if spread > 1e-3 {
        debug!("mode factors disagree after convergence (spread {spread:.3e})");
    }
}

struct JointRun {
    state: DecompState,
    objective: f64,
    converged: bool,
    restart: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_joint_from(
    cum: &CumulantUnfolding,
    prepared: &PreparedCumulant,
    start: DecompState,
    cfg: &AlsConfig,
    clock: &Instant,
    restart: usize,
    trace: &mut Vec<TraceRow>,
    mut snapshot: impl FnMut(&DecompState) -> (FilterBank, Vec<f64>),
) -> Result<JointRun> {
    let mut state = start;
    let obj0 = objective(cum, &state)?;
    let (f0, l0) = snapshot(&state);
    trace.push(TraceRow {
        iter: 0,
        restart,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        objective: obj0,
        filter_change: f64::NAN,
        filters: f0,
        lambda: l0,
    });
    let mut best = (obj0, state.clone());
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        state = als_sweep(&state, prepared, cfg)?;
        let obj = objective(cum, &state)?;
        let (f, l) = snapshot(&state);
        trace.push(TraceRow {
            iter: state.iteration,
            restart,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            objective: obj,
            filter_change: state.last_change,
            filters: f,
            lambda: l,
        });
        if obj <= best.0 {
            best = (obj, state.clone());
        }
        if state.last_change < cfg.tol_filter_change {
            converged = true;
            break;
        }
        if cfg.max_wall_ms.is_some_and(|b| clock.elapsed().as_secs_f64() * 1e3 > b) {
            break;
        }
    }
    if converged {
        check_symmetric_modes(&state);
        let obj = objective(cum, &state)?;
        Ok(JointRun {
            state,
            objective: obj,
            converged,
            restart,
        })
    } else {
        Ok(JointRun {
            objective: best.0,
            state: best.1,
            converged,
            restart,
        })
    }
}

fn run_joint(
    cum: &CumulantUnfolding,
    prepared: &PreparedCumulant,
    l: usize,
    cfg: &AlsConfig,
    clock: &Instant,
    trace: &mut Vec<TraceRow>,
    mut snapshot: impl FnMut(&DecompState) -> (FilterBank, Vec<f64>),
) -> Result<JointRun> {
    let mut best: Option<JointRun> = None;
    for r in 0..cfg.restarts {
        let start = init_state(cum.n(), l, cfg.seed.wrapping_add(r as u64))?;
        let run = run_joint_from(cum, prepared, start, cfg, clock, r, trace, &mut snapshot)?;
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    best.ok_or_else(|| invalid("no restarts"))
}

fn concat_banks(parts: &[FilterBank]) -> Result<FilterBank> {
    FilterBank::new(parts.iter().flat_map(|b| b.filters().iter().cloned()).collect())
}

/// Runs the CT decomposition to convergence (or `max_iters`) and returns the
/// mode-A filters. Non-convergence is reported in the outcome, not as an
/// error.
pub fn run(cum: &CumulantUnfolding, l: usize, cfg: &AlsConfig) -> Result<DecompOutcome> {
    cfg.validate()?;
    let n = cum.n();
    if l < 1 || l >= n {
        return Err(invalid(format!("need 1 <= L < n, got L = {l}, n = {n}")));
    }
    let clock = Instant::now();
    let prepared = PreparedCumulant::new(cum);
    let mut trace = Vec::new();
    match cfg.mode {
        Mode::Joint => {
            let run = run_joint(cum, &prepared, l, cfg, &clock, &mut trace, |s| {
                (s.a.clone(), s.lambda.clone())
            })?;
            if !run.converged {
                warn!(
                    "CT decomposition stopped at max_iters = {} without converging",
                    cfg.max_iters
                );
            }
            Ok(DecompOutcome {
                filters: run.state.a,
                lambda: run.state.lambda,
                objective: run.objective,
                converged: run.converged,
                trace,
                selected_restarts: vec![run.restart],
            })
        }
        Mode::Deflation => run_deflation(cum, l, cfg, &clock, trace),
    }
}

fn run_deflation(
    cum: &CumulantUnfolding,
    l: usize,
    cfg: &AlsConfig,
    clock: &Instant,
    mut trace: Vec<TraceRow>,
) -> Result<DecompOutcome> {
    let n = cum.n();
    // Pending components show up in the trace as their random start with
    // zero weight.
    let placeholder = random_unit_bank(n, l, cfg.seed)?;
    let mut parts: Vec<FilterBank> = placeholder
        .iter()
        .map(|f| FilterBank::new(vec![f.clone()]))
        .collect::<Result<_>>()?;
    let mut weights: Vec<Vec<f64>> = vec![vec![0.0; n]; l];
    let mut components: Vec<CumulantUnfolding> = vec![CumulantUnfolding::zeros(n); l];
    let mut converged = true;
    let mut restart_index = 0;
    let mut selected = Vec::new();
    for pass in 0..cfg.deflation_passes {
        for k in 0..l {
            let mut residual = cum.clone();
            for (i, comp) in components.iter().enumerate() {
                if i != k {
                    residual.sub_assign(comp);
                }
            }
            let prepared = PreparedCumulant::new(&residual);
            let sub_cfg = AlsConfig {
                seed: cfg.seed.wrapping_add(1000 * (k as u64 + 1)),
                ..cfg.clone()
            };
            let parts_now = parts.clone();
            let weights_now = weights.clone();
            let snapshot = |s: &DecompState| {
                let mut p = parts_now.clone();
                p[k] = s.a.clone();
                let mut w = weights_now.clone();
                w[k] = s.lambda.clone();
                (concat_banks(&p).expect("same-shape banks"), w.concat())
            };
            let mut sub_trace = Vec::new();
            let run = if pass == 0 {
                run_joint(&residual, &prepared, 1, &sub_cfg, clock, &mut sub_trace, snapshot)?
            } else {
                let start = DecompState {
                    a: parts[k].clone(),
                    b: parts[k].clone(),
                    c: parts[k].clone(),
                    lambda: weights[k].clone(),
                    iteration: 0,
                    last_change: f64::INFINITY,
                };
                run_joint_from(
                    &residual,
                    &prepared,
                    start,
                    &sub_cfg,
                    clock,
                    0,
                    &mut sub_trace,
                    snapshot,
                )?
            };
            for mut row in sub_trace {
                row.restart += restart_index;
                trace.push(row);
            }
            selected.push(restart_index + run.restart);
            restart_index += sub_cfg.restarts;
            converged &= run.converged;
            let lambda = fit_lambda(&residual, &run.state.a)?;
            components[k] = analytic_cumulant(&run.state.a, &lambda)?;
            parts[k] = run.state.a;
            weights[k] = lambda;
        }
    }
    let filters = concat_banks(&parts)?;
    let lambda = weights.concat();
    let objective = cum.distance(&analytic_cumulant(&filters, &lambda)?);
    // Rows report the full-model objective rather than the sub-problem's.
    for row in trace.iter_mut() {
        row.objective = cum.distance(&analytic_cumulant(&row.filters, &row.lambda)?);
    }
    Ok(DecompOutcome {
        filters,
        lambda,
        objective,
        converged,
        trace,
        selected_restarts: selected,
    })
}
