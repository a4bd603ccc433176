//! Single-frame spatially regularized correlation filter.
//!
//! Minimizes, over per-channel filters `ω_l` the size of the base sample,
//!
//! ```text
//! ½ Σ_s α (y_s − Σ_l ⟨ω_l, shift_s(x_l)⟩)² + (λ/2) Σ_l ‖ς ∘ ω_l‖²
//! ```
//!
//! where `shift_s` ranges over every cyclic shift. Small systems are solved
//! through dense normal equations; larger ones by Jacobi-preconditioned
//! conjugate gradient with the normal operator applied in the Fourier domain.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cflbmc::{solve_cflbmc_direct, MaskSpec};
use crate::dsp::{circ_correlate, dft2, idft2_real, Grid2, SpectrumGrid2};
use crate::error::{Error, Result};
use crate::features::ChannelPatch;
use crate::filter::{response_map, FilterBank};
use crate::labels::{LabelMap, SampleWeights};
use crate::linalg::{pcg, solve_spd, CgOptions};

/// Default "large enough number" for the indicator regularizers.
pub const DEFAULT_BIG: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerKind {
    /// `ς(r, c) = mu + eta·[(c/w)² + (r/h)²]` with centered coordinates and
    /// `(w, h)` the target size in cells.
    Quadratic { mu: f64, eta: f64 },
    /// 1 on the centered active block, `big` elsewhere.
    IndicatorMask { active: (usize, usize), big: f64 },
    /// 1 on the centered object box, `big` elsewhere.
    IndicatorBox { object: (usize, usize), big: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialRegularizer {
    pub kind: RegularizerKind,
    pub grid: Grid2,
}

fn centered_block(dims: (usize, usize), block: (usize, usize), big: f64) -> Result<Grid2> {
    if block.0 == 0 || block.1 == 0 || block.0 > dims.0 || block.1 > dims.1 {
        return Err(Error::InvalidConfig(format!("block {block:?} does not fit in {dims:?}")));
    }
    if !(big > 0.0 && big.is_finite()) {
        return Err(Error::InvalidConfig(format!("indicator value must be positive and finite, got {big}")));
    }
    let top = (dims.0 - block.0) / 2;
    let left = (dims.1 - block.1) / 2;
    Ok(Grid2::from_fn(dims.0, dims.1, |r, c| {
        if (top..top + block.0).contains(&r) && (left..left + block.1).contains(&c) {
            1.0
        } else {
            big
        }
    }))
}

impl SpatialRegularizer {
    /// Upside-down bell over a `dims` grid for a `target` (w, h) in cells.
    pub fn quadratic(dims: (usize, usize), target: (f64, f64), mu: f64, eta: f64) -> Result<Self> {
        if !(mu > 0.0) || !(eta >= 0.0) || !(target.0 > 0.0 && target.1 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "quadratic regularizer needs mu > 0, eta >= 0, positive target; got {mu}, {eta}, {target:?}"
            )));
        }
        let (h, w) = dims;
        let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let grid = Grid2::from_fn(h, w, |r, c| {
            let x = (c as f64 - cc) / target.0;
            let y = (r as f64 - cr) / target.1;
            mu + eta * (x * x + y * y)
        });
        Ok(SpatialRegularizer {
            kind: RegularizerKind::Quadratic { mu, eta },
            grid,
        })
    }

    /// Indicator reproducing the masking matrix: 1 on the active block.
    pub fn indicator_mask(dims: (usize, usize), active: (usize, usize), big: f64) -> Result<Self> {
        Ok(SpatialRegularizer {
            kind: RegularizerKind::IndicatorMask { active, big },
            grid: centered_block(dims, active, big)?,
        })
    }

    /// Indicator of a centered object box inside a larger region.
    pub fn indicator_box(dims: (usize, usize), object: (usize, usize), big: f64) -> Result<Self> {
        Ok(SpatialRegularizer {
            kind: RegularizerKind::IndicatorBox { object, big },
            grid: centered_block(dims, object, big)?,
        })
    }

    /// Constant `ς ≡ value`.
    pub fn constant(dims: (usize, usize), value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return Err(Error::InvalidConfig("regularizer values must be positive".into()));
        }
        Ok(SpatialRegularizer {
            kind: RegularizerKind::Quadratic { mu: value, eta: 0.0 },
            grid: Grid2::filled(dims.0, dims.1, value),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrdcfOptions {
    /// Systems with at most this many unknowns use a dense factorization.
    pub dense_limit: usize,
    pub cg: CgOptions,
}

impl Default for SrdcfOptions {
    fn default() -> Self {
        SrdcfOptions {
            dense_limit: 1024,
            cg: CgOptions::default(),
        }
    }
}

/// Dense normal equations of the circulant least-squares term restricted to
/// the filter cells in `positions`:
/// `G[(l,p),(m,q)] = α Σ_s x_l[p+s] x_m[q+s]`, `b[(l,p)] = α Σ_s y_s x_l[p+s]`.
pub(crate) fn circulant_normal_system(
    base: &ChannelPatch,
    labels: &Grid2,
    positions: &[(usize, usize)],
    alpha: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let channels = base.channel_count();
    let (h, w) = base.dims();
    let p = positions.len();
    let mut cross = Vec::with_capacity(channels * channels);
    for l in 0..channels {
        for m in 0..channels {
            cross.push(circ_correlate(&base.channels[l], &base.channels[m])?);
        }
    }
    let n = channels * p;
    let mut gram = DMatrix::zeros(n, n);
    for l in 0..channels {
        for m in 0..channels {
            let c = &cross[l * channels + m];
            for (i, &(pr, pc)) in positions.iter().enumerate() {
                for (j, &(qr, qc)) in positions.iter().enumerate() {
                    let dr = (qr + h - pr) % h;
                    let dc = (qc + w - pc) % w;
                    gram[(l * p + i, m * p + j)] = alpha * c[(dr, dc)];
                }
            }
        }
    }
    let mut rhs = vec![0.0; n];
    for l in 0..channels {
        let b = circ_correlate(labels, &base.channels[l])?;
        for (i, &pos) in positions.iter().enumerate() {
            rhs[l * p + i] = alpha * b[pos];
        }
    }
    Ok((gram, rhs))
}

fn check_inputs(base: &ChannelPatch, labels: &Grid2, reg_dims: (usize, usize), lambda: f64) -> Result<()> {
    if base.dims() != labels.dims() {
        return Err(Error::ShapeMismatch {
            expected: base.dims(),
            actual: labels.dims(),
        });
    }
    if base.dims() != reg_dims {
        return Err(Error::ShapeMismatch {
            expected: base.dims(),
            actual: reg_dims,
        });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    if !base.is_finite() || !labels.is_finite() {
        return Err(Error::NonFinite("training sample"));
    }
    Ok(())
}

/// Circulant normal operator `α AᵀA` applied through precomputed spectra.
struct CirculantOperator {
    spectra: Vec<SpectrumGrid2>,
    dims: (usize, usize),
    alpha: f64,
}

impl CirculantOperator {
    fn new(base: &ChannelPatch, alpha: f64) -> Self {
        CirculantOperator {
            spectra: base.channels.iter().map(dft2).collect(),
            dims: base.dims(),
            alpha,
        }
    }

    fn apply(&self, flat: &[f64]) -> Vec<f64> {
        let (h, w) = self.dims;
        let n = h * w;
        let root_t = (n as f64).sqrt();
        let mut resp = SpectrumGrid2::zeros(h, w);
        for (chunk, xs) in flat.chunks(n).zip(&self.spectra) {
            let wh = dft2(&Grid2::from_vec(h, w, chunk.to_vec()).expect("chunk size"));
            for ((r, wv), xv) in resp.as_mut_slice().iter_mut().zip(wh.as_slice()).zip(xs.as_slice()) {
                *r += wv.conj() * xv * root_t;
            }
        }
        let mut out = Vec::with_capacity(flat.len());
        for xs in &self.spectra {
            let mut prod = SpectrumGrid2::zeros(h, w);
            for ((p, rv), xv) in prod.as_mut_slice().iter_mut().zip(resp.as_slice()).zip(xs.as_slice()) {
                *p = rv.conj() * xv * (root_t * self.alpha);
            }
            out.extend_from_slice(idft2_real(&prod).as_slice());
        }
        out
    }

    fn rhs(&self, labels: &Grid2) -> Vec<f64> {
        let (h, w) = self.dims;
        let root_t = ((h * w) as f64).sqrt();
        let yh = dft2(labels);
        let mut out = Vec::new();
        for xs in &self.spectra {
            let prod: Vec<Complex64> = yh
                .as_slice()
                .iter()
                .zip(xs.as_slice())
                .map(|(y, x)| y.conj() * x * (root_t * self.alpha))
                .collect();
            out.extend_from_slice(
                idft2_real(&SpectrumGrid2::from_vec(h, w, prod).expect("dims")).as_slice(),
            );
        }
        out
    }
}

/// Solve with default options and no warm start.
pub fn solve_srdcf(
    base: &ChannelPatch,
    labels: &LabelMap,
    reg: &SpatialRegularizer,
    lambda: f64,
    weights: SampleWeights,
) -> Result<FilterBank> {
    solve_srdcf_with(base, &labels.values, reg, lambda, weights, SrdcfOptions::default(), None)
}

pub fn solve_srdcf_with(
    base: &ChannelPatch,
    labels: &Grid2,
    reg: &SpatialRegularizer,
    lambda: f64,
    weights: SampleWeights,
    opts: SrdcfOptions,
    warm_start: Option<&FilterBank>,
) -> Result<FilterBank> {
    check_inputs(base, labels, reg.dims(), lambda)?;
    let (h, w) = base.dims();
    let channels = base.channel_count();
    let n = h * w;
    let alpha = weights.alpha();
    let penalty: Vec<f64> = reg.grid.as_slice().iter().map(|s| lambda * s * s).collect();

    if channels * n <= opts.dense_limit {
        let positions: Vec<(usize, usize)> = (0..n).map(|i| (i / w, i % w)).collect();
        let (mut gram, rhs) = circulant_normal_system(base, labels, &positions, alpha)?;
        for l in 0..channels {
            for i in 0..n {
                gram[(l * n + i, l * n + i)] += penalty[i];
            }
        }
        let flat = solve_spd(gram, &rhs)?;
        return FilterBank::from_flat(channels, h, w, &flat);
    }

    let op = CirculantOperator::new(base, alpha);
    let rhs = op.rhs(labels);
    let mut diag = Vec::with_capacity(channels * n);
    for ch in &base.channels {
        let energy = alpha * ch.norm_sqr();
        diag.extend(penalty.iter().map(|p| energy + p));
    }
    let mut x = match warm_start {
        Some(f) if f.dims() == (h, w) && f.channel_count() == channels => f.flatten(),
        _ => vec![0.0; channels * n],
    };
    let apply = |v: &[f64]| {
        let mut out = op.apply(v);
        for l in 0..channels {
            for i in 0..n {
                out[l * n + i] += penalty[i] * v[l * n + i];
            }
        }
        out
    };
    pcg(apply, &diag, &rhs, &mut x, opts.cg);
    FilterBank::from_flat(channels, h, w, &x)
}

/// Value of the single-frame objective for `filter`.
pub fn srdcf_objective(
    base: &ChannelPatch,
    labels: &Grid2,
    reg: &SpatialRegularizer,
    lambda: f64,
    weights: SampleWeights,
    filter: &FilterBank,
) -> Result<f64> {
    let resp = response_map(filter, base)?;
    let loss: f64 = resp
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .map(|(r, y)| (y - r).powi(2))
        .sum();
    let penalty: f64 = filter
        .weights()
        .iter()
        .map(|wl| wl.hadamard(&reg.grid).map(|g| g.norm_sqr()))
        .sum::<Result<f64>>()?;
    Ok(0.5 * weights.alpha() * loss + 0.5 * lambda * penalty)
}

/// Outcome of comparing the masked filter with the indicator-regularized one.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationReport {
    /// `‖P ω_d − ω_g‖ / ‖ω_g‖`, or 0 when both filters vanish.
    pub relation_error: f64,
    /// `‖(I − P) ω_d‖`
    pub annulus_energy: f64,
    pub masked: FilterBank,
    pub regularized: FilterBank,
}

/// Solves the masked problem and the indicator-regularized problem exactly and
/// measures how far the latter's central block is from the former.
pub fn masked_relation_check(
    base: &ChannelPatch,
    labels: &Grid2,
    mask: &MaskSpec,
    big: f64,
    lambda: f64,
) -> Result<RelationReport> {
    let masked = solve_cflbmc_direct(base, labels, mask, lambda)?;
    let reg = SpatialRegularizer::indicator_mask(mask.full(), mask.active(), big)?;
    let opts = SrdcfOptions {
        dense_limit: usize::MAX,
        ..SrdcfOptions::default()
    };
    let regularized = solve_srdcf_with(base, labels, &reg, lambda, SampleWeights::unit(), opts, None)?;

    let (top, left) = mask.offset();
    let (dh, dw) = mask.active();
    let central = regularized.crop(top, left, dh, dw);
    let mut diff = 0.0;
    for (a, b) in central.weights().iter().zip(masked.weights()) {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        diff += d.norm_sqr();
    }
    let reference = masked.norm();
    let relation_error = if reference == 0.0 {
        diff.sqrt()
    } else {
        diff.sqrt() / reference
    };
    let annulus_energy = (regularized.norm().powi(2) - central.norm().powi(2)).max(0.0).sqrt();
    Ok(RelationReport {
        relation_error,
        annulus_energy,
        masked,
        regularized,
    })
}
