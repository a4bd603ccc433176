//! Multi-channel correlation filter with limited boundaries.
//!
//! The filter `ω_l` lives on a centered `D` block inside the `T`-sized base
//! sample; it is zero-padded before correlating against every cyclic shift:
//!
//! ```text
//! E(ω) = ½ ‖y − Σ_l corr(Pᵀω_l, x_l)‖² + (λ/2) Σ_l ‖ω_l‖²
//! ```
//!
//! The augmented Lagrangian iteration splits `ω` from a Fourier-domain copy
//! `ĝ_l ≈ √T·F(Pᵀω_l)` (unitary `F`). Under this normalization the data term
//! reads `½‖conj(ŷ) − Σ_l conj(x̂_l)∘ĝ_l‖²` and the ω-step shrinks by
//! `μ_l + λ/T`.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{dft2, idft2_real, Grid2, SpectrumGrid2};
use crate::error::{Error, Result};
use crate::features::ChannelPatch;
use crate::filter::{response_map, FilterBank};
use crate::labels::LabelMap;
use crate::linalg::solve_spd;
use crate::srdcf::circulant_normal_system;

/// Full and active dimensions of the masking operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    full: (usize, usize),
    active: (usize, usize),
}

impl MaskSpec {
    pub fn new(full: (usize, usize), active: (usize, usize)) -> Result<Self> {
        if active.0 == 0 || active.1 == 0 || active.0 > full.0 || active.1 > full.1 {
            return Err(Error::InvalidConfig(format!(
                "active block {active:?} must be non-empty and fit inside {full:?}"
            )));
        }
        Ok(MaskSpec { full, active })
    }

    pub fn full(&self) -> (usize, usize) {
        self.full
    }

    pub fn active(&self) -> (usize, usize) {
        self.active
    }

    pub fn offset(&self) -> (usize, usize) {
        ((self.full.0 - self.active.0) / 2, (self.full.1 - self.active.1) / 2)
    }

    /// Full-grid coordinates of the active cells in row-major order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        let (top, left) = self.offset();
        (0..self.active.0)
            .flat_map(|r| (0..self.active.1).map(move |c| (top + r, left + c)))
            .collect()
    }

    pub fn pad(&self, block: &Grid2) -> Grid2 {
        let (top, left) = self.offset();
        block.pad_into(self.full.0, self.full.1, top, left)
    }

    pub fn crop(&self, full: &Grid2) -> Grid2 {
        let (top, left) = self.offset();
        full.crop(top, left, self.active.0, self.active.1)
    }

    pub fn pad_filter(&self, filter: &FilterBank) -> FilterBank {
        let (top, left) = self.offset();
        filter.pad(self.full.0, self.full.1, top, left)
    }

    fn cells(&self) -> usize {
        self.full.0 * self.full.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlmConfig {
    pub mu0: f64,
    pub beta: f64,
    pub mu_max: f64,
    pub lambda: f64,
    pub iterations: usize,
}

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig {
            mu0: 0.01,
            beta: 1.1,
            mu_max: 20.0,
            lambda: 10.0,
            iterations: 6,
        }
    }
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu0 > 0.0
            && self.mu0 <= self.mu_max
            && self.beta > 1.0
            && self.lambda > 0.0
            && self.iterations >= 1
            && self.mu_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid ALM settings {self:?}")))
        }
    }
}

/// Iterates of the augmented Lagrangian method. `omega_hat` caches
/// `√T·F(Pᵀω_l)` so the ĝ-step and the multiplier step stay consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmState {
    pub g_hat: Vec<SpectrumGrid2>,
    pub omega: Vec<Grid2>,
    pub omega_hat: Vec<SpectrumGrid2>,
    pub zeta_hat: Vec<SpectrumGrid2>,
    pub mu: Vec<f64>,
}

impl AlmState {
    /// All-zero iterates with `μ_l = mu0`.
    pub fn new(channels: usize, mask: &MaskSpec, cfg: &AlmConfig) -> Self {
        let (th, tw) = mask.full();
        let (dh, dw) = mask.active();
        AlmState {
            g_hat: vec![SpectrumGrid2::zeros(th, tw); channels],
            omega: vec![Grid2::zeros(dh, dw); channels],
            omega_hat: vec![SpectrumGrid2::zeros(th, tw); channels],
            zeta_hat: vec![SpectrumGrid2::zeros(th, tw); channels],
            mu: vec![cfg.mu0; channels],
        }
    }

    pub fn channel_count(&self) -> usize {
        self.omega.len()
    }

    /// Replaces `ω_l` and refreshes its cached spectrum.
    pub fn set_omega(&mut self, l: usize, mask: &MaskSpec, omega: Grid2) {
        let root_t = (mask.cells() as f64).sqrt();
        let mut spec = dft2(&mask.pad(&omega));
        spec.scale(root_t);
        self.omega_hat[l] = spec;
        self.omega[l] = omega;
    }

    /// `max_l ‖ĝ_l − ω̂_l‖ / ‖ĝ_l‖`, the primal constraint residual.
    pub fn constraint_residual(&self) -> f64 {
        self.g_hat
            .iter()
            .zip(&self.omega_hat)
            .map(|(g, w)| {
                let diff: f64 = g
                    .as_slice()
                    .iter()
                    .zip(w.as_slice())
                    .map(|(a, b)| (a - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                let norm = g.norm();
                if norm == 0.0 {
                    diff
                } else {
                    diff / norm
                }
            })
            .fold(0.0, f64::max)
    }
}

/// ĝ-step for channel `l` with the other channels held at their current value.
///
/// `y_hat` is the unitary spectrum of the labels; the data term uses its
/// conjugate, which equals `y_hat` for labels symmetric about the origin.
pub fn subproblem_g(state: &AlmState, x_hat: &[SpectrumGrid2], y_hat: &SpectrumGrid2, l: usize) -> SpectrumGrid2 {
    let (h, w) = y_hat.dims();
    let mu = state.mu[l];
    let mut out = SpectrumGrid2::zeros(h, w);
    let xl = x_hat[l].as_slice();
    for (k, o) in out.as_mut_slice().iter_mut().enumerate() {
        let mut cross = Complex64::new(0.0, 0.0);
        for (i, (xi, gi)) in x_hat.iter().zip(&state.g_hat).enumerate() {
            if i != l {
                cross += xi.as_slice()[k].conj() * gi.as_slice()[k];
            }
        }
        let num = y_hat.as_slice()[k].conj() * xl[k] + state.omega_hat[l].as_slice()[k] * mu
            - state.zeta_hat[l].as_slice()[k]
            - xl[k] * cross;
        *o = num / (xl[k].norm_sqr() + mu);
    }
    out
}

/// ω-step for channel `l`: `crop(μ_l g_l + ζ_l) / (μ_l + λ/T)` with spatial
/// `g_l`, `ζ_l` recovered by the scaled inverse transform.
pub fn subproblem_omega(state: &AlmState, mask: &MaskSpec, cfg: &AlmConfig, l: usize) -> Grid2 {
    let t = mask.cells() as f64;
    let root_t = t.sqrt();
    let mu = state.mu[l];
    let mut g = idft2_real(&state.g_hat[l]);
    g.scale(mu / root_t);
    g.axpy(1.0 / root_t, &idft2_real(&state.zeta_hat[l]));
    let mut omega = mask.crop(&g);
    omega.scale(1.0 / (mu + cfg.lambda / t));
    omega
}

/// `ζ̂_l ← ζ̂_l + μ_l (ĝ_l − ω̂_l)`.
pub fn update_multipliers(state: &mut AlmState) {
    for l in 0..state.channel_count() {
        let mu = state.mu[l];
        let (g, w) = (&state.g_hat[l], &state.omega_hat[l]);
        for ((z, gv), wv) in state.zeta_hat[l].as_mut_slice().iter_mut().zip(g.as_slice()).zip(w.as_slice()) {
            *z += (gv - wv) * mu;
        }
    }
}

/// `μ_l ← min(μ_max, β μ_l)`.
pub fn update_mu(state: &mut AlmState, cfg: &AlmConfig) {
    for mu in &mut state.mu {
        *mu = (cfg.beta * *mu).min(cfg.mu_max);
    }
}

fn check_inputs(base: &ChannelPatch, labels: &Grid2, mask: &MaskSpec) -> Result<()> {
    if base.dims() != mask.full() {
        return Err(Error::ShapeMismatch {
            expected: mask.full(),
            actual: base.dims(),
        });
    }
    if labels.dims() != mask.full() {
        return Err(Error::ShapeMismatch {
            expected: mask.full(),
            actual: labels.dims(),
        });
    }
    if !base.is_finite() || !labels.is_finite() {
        return Err(Error::NonFinite("training sample"));
    }
    Ok(())
}

/// One full outer iteration: ĝ sweep, ω sweep, multipliers, penalty.
pub fn alm_iteration(state: &mut AlmState, x_hat: &[SpectrumGrid2], y_hat: &SpectrumGrid2, mask: &MaskSpec, cfg: &AlmConfig) {
    for l in 0..state.channel_count() {
        state.g_hat[l] = subproblem_g(state, x_hat, y_hat, l);
    }
    for l in 0..state.channel_count() {
        let omega = subproblem_omega(state, mask, cfg, l);
        state.set_omega(l, mask, omega);
    }
    update_multipliers(state);
    update_mu(state, cfg);
}

/// Per-iteration record of a traced solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmTrace {
    pub objective: Vec<f64>,
    pub constraint_residual: Vec<f64>,
}

pub fn solve_cflbmc(base: &ChannelPatch, labels: &LabelMap, mask: &MaskSpec, cfg: &AlmConfig) -> Result<FilterBank> {
    solve_cflbmc_traced(base, &labels.values, mask, cfg, false).map(|(f, _)| f)
}

/// Runs `cfg.iterations` ALM iterations from zero. With `trace` set, the
/// objective and constraint residual are recorded after every iteration.
pub fn solve_cflbmc_traced(
    base: &ChannelPatch,
    labels: &Grid2,
    mask: &MaskSpec,
    cfg: &AlmConfig,
    trace: bool,
) -> Result<(FilterBank, AlmTrace)> {
    cfg.validate()?;
    check_inputs(base, labels, mask)?;
    let x_hat: Vec<SpectrumGrid2> = base.channels.iter().map(dft2).collect();
    let y_hat = dft2(labels);
    let mut state = AlmState::new(base.channel_count(), mask, cfg);
    let mut record = AlmTrace {
        objective: Vec::new(),
        constraint_residual: Vec::new(),
    };
    for _ in 0..cfg.iterations {
        alm_iteration(&mut state, &x_hat, &y_hat, mask, cfg);
        if trace {
            let f = FilterBank::new(state.omega.clone())?;
            record.objective.push(cflbmc_objective(base, labels, mask, cfg.lambda, &f)?);
            record.constraint_residual.push(state.constraint_residual());
        }
    }
    Ok((FilterBank::new(state.omega)?, record))
}

/// Exact minimizer via dense normal equations over the active cells.
pub fn solve_cflbmc_direct(base: &ChannelPatch, labels: &Grid2, mask: &MaskSpec, lambda: f64) -> Result<FilterBank> {
    check_inputs(base, labels, mask)?;
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    let (mut gram, rhs) = circulant_normal_system(base, labels, &mask.positions(), 1.0)?;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let flat = solve_spd(gram, &rhs)?;
    let (dh, dw) = mask.active();
    FilterBank::from_flat(base.channel_count(), dh, dw, &flat)
}

/// Masked ridge objective of an active-block filter.
pub fn cflbmc_objective(base: &ChannelPatch, labels: &Grid2, mask: &MaskSpec, lambda: f64, filter: &FilterBank) -> Result<f64> {
    if filter.dims() != mask.active() {
        return Err(Error::ShapeMismatch {
            expected: mask.active(),
            actual: filter.dims(),
        });
    }
    let resp = response_map(&mask.pad_filter(filter), base)?;
    let loss: f64 = resp
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .map(|(r, y)| (y - r).powi(2))
        .sum();
    Ok(0.5 * loss + 0.5 * lambda * filter.norm().powi(2))
}
