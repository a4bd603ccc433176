//! Dense-sampling, linear-kernel, square-loss Struck.
//!
//! Every candidate box `y` inside a `w_l x h_l` search region contributes a
//! true translated sample: the `w_l x h_l` patch centred on `y`, cut from a
//! `(2w_l - w) x (2h_l - h)` context. Scores are `⟨ω̃, Φ̃(y)⟩` and the filter is
//! confined to the object box by a large indicator penalty `ς_t`:
//!
//! ```text
//! ½ Σ_l ‖ς_t ∘ ω̃_l‖² + (λ/2) Σ_i α_i Σ_y (⟨ω̃, Φ̃_i(y)⟩ − g̃(y))²
//! ```
//!
//! Grid dimensions are `(rows, cols)` throughout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dsp::{circ_correlate_spectra, dft2, Grid2, SpectrumGrid2};
use crate::error::{Error, Result};
use crate::features::{extract_resampled, ChannelPatch, FeatureKind, ImageFrame};
use crate::filter::FilterBank;
use crate::labels::{BBox, LabelMap, SampleWeights};
use crate::linalg::{pcg, solve_spd, CgOptions, CgOutcome};
use crate::srdcf::{solve_srdcf_with, SpatialRegularizer, SrdcfOptions, DEFAULT_BIG};

/// Cell geometry of a Struck problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StruckGeometry {
    /// Object box in cells.
    pub object: (usize, usize),
    /// Search region in cells; `region - object` is even on both axes.
    pub region: (usize, usize),
    pub cell: usize,
    pub feature: FeatureKind,
}

fn region_cells(object: usize, factor: f64) -> usize {
    let mut region = ((object as f64 * factor).round() as usize).max(object);
    if (region - object) % 2 == 1 {
        region += 1;
    }
    region
}

impl StruckGeometry {
    pub fn new(object: (usize, usize), region: (usize, usize), cell: usize, feature: FeatureKind) -> Result<Self> {
        let ok = object.0 >= 1
            && object.1 >= 1
            && region.0 >= object.0
            && region.1 >= object.1
            && (region.0 - object.0).is_multiple_of(2)
            && (region.1 - object.1).is_multiple_of(2)
            && cell >= 1;
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "region {region:?} must contain object {object:?} with an even margin"
            )));
        }
        Ok(StruckGeometry {
            object,
            region,
            cell,
            feature,
        })
    }

    /// Geometry for `bbox` with the region scaled per axis by `region_scale`
    /// (width factor, height factor), rounded up to an even margin.
    pub fn from_box(bbox: &BBox, region_scale: (f64, f64), cell: usize, feature: FeatureKind) -> Result<Self> {
        if cell == 0 {
            return Err(Error::InvalidConfig("cell size must be positive".into()));
        }
        if !(region_scale.0 >= 1.0 && region_scale.1 >= 1.0) {
            return Err(Error::InvalidConfig(format!("region scale {region_scale:?} below 1")));
        }
        let oh = ((bbox.height / cell as f64).round() as usize).max(1);
        let ow = ((bbox.width / cell as f64).round() as usize).max(1);
        StruckGeometry::new(
            (oh, ow),
            (region_cells(oh, region_scale.1), region_cells(ow, region_scale.0)),
            cell,
            feature,
        )
    }

    pub fn context(&self) -> (usize, usize) {
        (2 * self.region.0 - self.object.0, 2 * self.region.1 - self.object.1)
    }

    /// Largest sample offset per axis.
    pub fn range(&self) -> (usize, usize) {
        (self.region.0 - self.object.0, self.region.1 - self.object.1)
    }

    /// Offset of the sample whose candidate box is the region centre.
    pub fn centered_offset(&self) -> (usize, usize) {
        (self.range().0 / 2, self.range().1 / 2)
    }

    /// Dense candidate count `(w_l − w + 1)(h_l − h + 1)`.
    pub fn dense_count(&self) -> usize {
        (self.range().0 + 1) * (self.range().1 + 1)
    }
}

/// `(w_l − w + 1) / w_l`: fraction of cyclic shifts along one axis that are
/// true translations.
pub fn sample_ratio(region: usize, object: usize) -> f64 {
    (region + 1 - object) as f64 / region as f64
}

fn axis_offsets(range: usize, stride: usize) -> Vec<usize> {
    if stride > range {
        vec![range / 2]
    } else {
        (0..=range).step_by(stride).collect()
    }
}

/// Featurized context plus the sampled offsets (top-left corner of each
/// `Φ̃(y)` inside the context, equivalently of `y` inside the region).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub geometry: StruckGeometry,
    pub context: ChannelPatch,
    pub stride: usize,
    pub offsets: Vec<(usize, usize)>,
    context_spectra: Vec<SpectrumGrid2>,
}

impl SampleSet {
    /// Samples a precomputed context. Offsets form a grid anchored at the
    /// region corner; when the stride exceeds the range the single centred
    /// sample is used.
    pub fn from_context(context: ChannelPatch, geometry: StruckGeometry, stride: usize) -> Result<Self> {
        if context.dims() != geometry.context() {
            return Err(Error::ShapeMismatch {
                expected: geometry.context(),
                actual: context.dims(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("sampling stride must be positive".into()));
        }
        if !context.is_finite() {
            return Err(Error::NonFinite("struck context"));
        }
        let (rr, rc) = geometry.range();
        let rows = axis_offsets(rr, stride);
        let cols = axis_offsets(rc, stride);
        let offsets = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        let context_spectra = context.channels.iter().map(dft2).collect();
        Ok(SampleSet {
            geometry,
            context,
            stride,
            offsets,
            context_spectra,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// `Φ̃` at `offset`: the region-sized block of every channel.
    pub fn sample(&self, offset: (usize, usize)) -> Vec<Grid2> {
        let (h, w) = self.geometry.region;
        self.context.channels.iter().map(|c| c.crop(offset.0, offset.1, h, w)).collect()
    }

    /// Object-sized window of the candidate box at `offset`.
    pub fn object_window(&self, offset: (usize, usize)) -> Vec<Grid2> {
        let (ch, cw) = self.geometry.centered_offset();
        let (h, w) = self.geometry.object;
        self.context
            .channels
            .iter()
            .map(|c| c.crop(offset.0 + ch, offset.1 + cw, h, w))
            .collect()
    }

    /// Label of each sample, read from `labels` at the cyclic displacement of
    /// the sample from the centred one.
    pub fn sample_labels(&self, labels: &LabelMap) -> Result<Vec<f64>> {
        let (h, w) = self.geometry.region;
        if labels.values.dims() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: (h, w),
                actual: labels.values.dims(),
            });
        }
        let (cr, cc) = self.geometry.centered_offset();
        Ok(self
            .offsets
            .iter()
            .map(|&(r, c)| {
                let row = (labels.center.0 + r + h - cr % h) % h;
                let col = (labels.center.1 + c + w - cc % w) % w;
                labels.values[(row, col)]
            })
            .collect())
    }

    /// Scores at every offset `0..=range` on both axes (stride ignored).
    pub fn dense_scores(&self, weights: &FilterBank) -> Result<Grid2> {
        if weights.dims() != self.geometry.region || weights.channel_count() != self.context.channel_count() {
            return Err(Error::ShapeMismatch {
                expected: self.geometry.region,
                actual: weights.dims(),
            });
        }
        let (ch, cw) = self.geometry.context();
        let mut full = Grid2::zeros(ch, cw);
        for (wl, xs) in weights.weights().iter().zip(&self.context_spectra) {
            let padded = dft2(&wl.pad_into(ch, cw, 0, 0));
            full.axpy(1.0, &circ_correlate_spectra(&padded, xs));
        }
        let (rr, rc) = self.geometry.range();
        Ok(full.crop(0, 0, rr + 1, rc + 1))
    }

    /// Scores at the sampled offsets, in `offsets` order.
    pub fn scores(&self, weights: &FilterBank) -> Result<Vec<f64>> {
        let dense = self.dense_scores(weights)?;
        Ok(self.offsets.iter().map(|&o| dense[o]).collect())
    }

    /// `Σ_y r(y) Φ̃(y)`, the adjoint of [`SampleSet::scores`].
    fn adjoint(&self, residual: &[f64]) -> Vec<Grid2> {
        let (ch, cw) = self.geometry.context();
        let (h, w) = self.geometry.region;
        let mut placed = Grid2::zeros(ch, cw);
        for (&o, &r) in self.offsets.iter().zip(residual) {
            placed[o] += r;
        }
        let placed_hat = dft2(&placed);
        self.context_spectra
            .iter()
            .map(|xs| circ_correlate_spectra(&placed_hat, xs).crop(0, 0, h, w))
            .collect()
    }

    /// Flattened `Φ̃(y)` rows, one per sample.
    fn design_matrix(&self) -> DMatrix<f64> {
        let (h, w) = self.geometry.region;
        let channels = self.context.channel_count();
        let n = channels * h * w;
        let mut m = DMatrix::zeros(self.len(), n);
        for (i, &(or, oc)) in self.offsets.iter().enumerate() {
            for (l, chan) in self.context.channels.iter().enumerate() {
                for r in 0..h {
                    for c in 0..w {
                        m[(i, l * h * w + r * w + c)] = chan[(or + r, oc + c)];
                    }
                }
            }
        }
        m
    }
}

/// Featurizes the context around `center` and samples it at `stride` cells.
pub fn build_sample_set(frame: &ImageFrame, center: &BBox, geometry: &StruckGeometry, stride: usize) -> Result<SampleSet> {
    build_sample_set_scaled(frame, center, geometry, stride, 1.0)
}

/// As [`build_sample_set`] with the pixel context scaled by `scale` and
/// resampled back to the native cell lattice.
pub fn build_sample_set_scaled(
    frame: &ImageFrame,
    center: &BBox,
    geometry: &StruckGeometry,
    stride: usize,
    scale: f64,
) -> Result<SampleSet> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("scale must be positive, got {scale}")));
    }
    let (ch, cw) = geometry.context();
    let (px_h, px_w) = (ch * geometry.cell, cw * geometry.cell);
    let (cx, cy) = center.center();
    let region = BBox::from_center(cx, cy, px_w as f64 * scale, px_h as f64 * scale)?;
    let pixels = extract_resampled(frame, &region, px_h, px_w)?;
    let context = geometry.feature.compute(&pixels, geometry.cell, region)?;
    SampleSet::from_context(context, *geometry, stride)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StruckModel {
    pub weights: FilterBank,
    pub regularizer: SpatialRegularizer,
    pub lambda: f64,
    pub geometry: StruckGeometry,
}

impl StruckModel {
    /// The object-sized central block of every channel.
    pub fn central(&self) -> FilterBank {
        let (top, left) = self.geometry.centered_offset();
        let (h, w) = self.geometry.object;
        self.weights.crop(top, left, h, w)
    }

    /// Fraction of weight energy outside the object box.
    pub fn annulus_fraction(&self) -> f64 {
        let total = self.weights.norm().powi(2);
        if total == 0.0 {
            return 0.0;
        }
        ((total - self.central().norm().powi(2)) / total).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StruckOptions {
    /// Penalty outside the object box.
    pub big: f64,
    pub dense_limit: usize,
    pub cg: CgOptions,
}

impl Default for StruckOptions {
    fn default() -> Self {
        StruckOptions {
            big: DEFAULT_BIG,
            dense_limit: 1024,
            cg: CgOptions::default(),
        }
    }
}

/// One training frame: its samples, per-sample labels and loss weight.
#[derive(Debug, Clone, Copy)]
pub struct TrainingFrame<'a> {
    pub samples: &'a SampleSet,
    pub labels: &'a LabelMap,
    pub weights: SampleWeights,
}

pub fn solve_struck_square(samples: &SampleSet, labels: &LabelMap, lambda: f64, weights: SampleWeights) -> Result<StruckModel> {
    let frame = TrainingFrame {
        samples,
        labels,
        weights,
    };
    solve_struck_square_multi(&[frame], lambda, StruckOptions::default(), None).map(|(m, _)| m)
}

/// Joint solve over several frames sharing one geometry. The iterative path
/// starts from `warm_start` when given and reports its convergence.
pub fn solve_struck_square_multi(
    frames: &[TrainingFrame<'_>],
    lambda: f64,
    opts: StruckOptions,
    warm_start: Option<&FilterBank>,
) -> Result<(StruckModel, Option<CgOutcome>)> {
    let first = frames.first().ok_or(Error::Empty("struck training frames"))?;
    let geometry = first.samples.geometry;
    let channels = first.samples.context.channel_count();
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    let mut targets = Vec::with_capacity(frames.len());
    for f in frames {
        if f.samples.geometry.region != geometry.region
            || f.samples.geometry.object != geometry.object
            || f.samples.context.channel_count() != channels
        {
            return Err(Error::ShapeMismatch {
                expected: geometry.region,
                actual: f.samples.geometry.region,
            });
        }
        let y = f.samples.sample_labels(f.labels)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("struck labels"));
        }
        targets.push(y);
    }
    let regularizer = SpatialRegularizer::indicator_box(geometry.region, geometry.object, opts.big)?;
    let (h, w) = geometry.region;
    let cells = h * w;
    let n = channels * cells;
    let penalty: Vec<f64> = regularizer.grid.as_slice().iter().map(|s| s * s).collect();

    let mut outcome = None;
    let flat = if n <= opts.dense_limit {
        let mut gram = DMatrix::zeros(n, n);
        let mut rhs = nalgebra::DVector::zeros(n);
        for (f, y) in frames.iter().zip(&targets) {
            let scale = lambda * f.weights.alpha();
            let phi = f.samples.design_matrix();
            gram += phi.tr_mul(&phi) * scale;
            rhs += phi.tr_mul(&nalgebra::DVector::from_column_slice(y)) * scale;
        }
        for l in 0..channels {
            for i in 0..cells {
                gram[(l * cells + i, l * cells + i)] += penalty[i];
            }
        }
        solve_spd(gram, rhs.as_slice())?
    } else {
        let mut rhs = vec![0.0; n];
        let mut diag: Vec<f64> = (0..n).map(|i| penalty[i % cells]).collect();
        for (f, y) in frames.iter().zip(&targets) {
            let scale = lambda * f.weights.alpha();
            for (l, g) in f.samples.adjoint(y).iter().enumerate() {
                for (k, v) in g.as_slice().iter().enumerate() {
                    rhs[l * cells + k] += scale * v;
                }
            }
            // Diagonal of ΦᵀΦ: squared context values summed over the offsets.
            for (l, chan) in f.samples.context.channels.iter().enumerate() {
                for &(or, oc) in &f.samples.offsets {
                    for r in 0..h {
                        let row = &chan.as_slice()[(or + r) * chan.width() + oc..][..w];
                        for (c, v) in row.iter().enumerate() {
                            diag[l * cells + r * w + c] += scale * v * v;
                        }
                    }
                }
            }
        }
        let apply = |v: &[f64]| -> Vec<f64> {
            let bank = FilterBank::from_flat(channels, h, w, v).expect("flat size");
            let mut out: Vec<f64> = v.iter().enumerate().map(|(i, x)| penalty[i % cells] * x).collect();
            for f in frames {
                let scale = lambda * f.weights.alpha();
                let scores = f.samples.scores(&bank).expect("checked dims");
                for (l, g) in f.samples.adjoint(&scores).iter().enumerate() {
                    for (k, x) in g.as_slice().iter().enumerate() {
                        out[l * cells + k] += scale * x;
                    }
                }
            }
            out
        };
        let mut x = match warm_start {
            Some(f) if f.dims() == (h, w) && f.channel_count() == channels => f.flatten(),
            _ => vec![0.0; n],
        };
        outcome = Some(pcg(apply, &diag, &rhs, &mut x, opts.cg));
        x
    };
    let model = StruckModel {
        weights: FilterBank::from_flat(channels, h, w, &flat)?,
        regularizer,
        lambda,
        geometry,
    };
    Ok((model, outcome))
}

/// Value of the square-loss objective for `weights`.
pub fn struck_square_objective(frames: &[TrainingFrame<'_>], lambda: f64, big: f64, weights: &FilterBank) -> Result<f64> {
    let first = frames.first().ok_or(Error::Empty("struck training frames"))?;
    let geometry = first.samples.geometry;
    let reg = SpatialRegularizer::indicator_box(geometry.region, geometry.object, big)?;
    let mut value = 0.5
        * weights
            .weights()
            .iter()
            .map(|w| w.hadamard(&reg.grid).map(|g| g.norm_sqr()))
            .sum::<Result<f64>>()?;
    for f in frames {
        let y = f.samples.sample_labels(f.labels)?;
        let s = f.samples.scores(weights)?;
        let loss: f64 = s.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        value += 0.5 * lambda * f.weights.alpha() * loss;
    }
    Ok(value)
}

/// Settings of the subgradient hinge oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for HingeOptions {
    fn default() -> Self {
        HingeOptions {
            max_iter: 20_000,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HingeOutcome {
    pub model: StruckModel,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest sample count accepted by the hinge oracle.
pub const HINGE_MAX_SAMPLES: usize = 200;

struct HingeProblem {
    /// `Φ(y_i) − Φ(y)` for every sample, flattened.
    deltas: Vec<Vec<f64>>,
    margins: Vec<f64>,
    lambda: f64,
}

impl HingeProblem {
    fn objective(&self, w: &[f64]) -> f64 {
        let n = self.deltas.len() as f64;
        let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        let loss: f64 = self
            .deltas
            .iter()
            .zip(&self.margins)
            .map(|(d, m)| (m - dot(w, d)).max(0.0))
            .sum();
        reg + 0.5 * self.lambda * loss / n
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Object-sized hinge problem
/// `½‖ω‖² + (λ/2)(1/N) Σ_y max{0, Δ(y) − ⟨ω, Φ(y_c) − Φ(y)⟩}` with `y_c` the
/// centred box and `Δ = 1 − overlap`, solved by subgradient descent with step
/// `1/(k+1)`. Iteration stops when the objective changes by at most
/// `rel_tol` relative, or when the budget runs out (reported, not an error).
pub fn solve_struck_hinge_small(samples: &SampleSet, lambda: f64, opts: HingeOptions) -> Result<HingeOutcome> {
    if samples.len() > HINGE_MAX_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "hinge oracle limited to {HINGE_MAX_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    let geometry = samples.geometry;
    let center = geometry.centered_offset();
    let flatten = |grids: Vec<Grid2>| grids.into_iter().flat_map(Grid2::into_vec).collect::<Vec<f64>>();
    let anchor = flatten(samples.object_window(center));
    let (oh, ow) = geometry.object;
    let truth = BBox::new(center.1 as f64, center.0 as f64, ow as f64, oh as f64)?;
    let mut deltas = Vec::new();
    let mut margins = Vec::new();
    for &o in &samples.offsets {
        let phi = flatten(samples.object_window(o));
        deltas.push(anchor.iter().zip(&phi).map(|(a, b)| a - b).collect());
        let candidate = BBox::new(o.1 as f64, o.0 as f64, ow as f64, oh as f64)?;
        margins.push(crate::labels::delta_loss(&candidate, &truth)?);
    }
    let problem = HingeProblem { deltas, margins, lambda };
    let n = anchor.len();
    let count = problem.deltas.len() as f64;
    let mut w = vec![0.0; n];
    let mut best = w.clone();
    let mut best_obj = problem.objective(&w);
    let mut prev = best_obj;
    let mut converged = false;
    let mut iterations = 0;
    for k in 0..opts.max_iter {
        let mut grad = w.clone();
        for (d, m) in problem.deltas.iter().zip(&problem.margins) {
            if m - dot(&w, d) > 0.0 {
                let k = 0.5 * lambda / count;
                for (g, v) in grad.iter_mut().zip(d) {
                    *g -= k * v;
                }
            }
        }
        let step = 1.0 / (k as f64 + 1.0);
        for (x, g) in w.iter_mut().zip(&grad) {
            *x -= step * g;
        }
        let obj = problem.objective(&w);
        iterations = k + 1;
        if obj < best_obj {
            best_obj = obj;
            best.clone_from(&w);
        }
        if k > 0 && (prev - obj).abs() <= opts.rel_tol * obj.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        prev = obj;
    }
    let channels = samples.context.channel_count();
    let central = FilterBank::from_flat(channels, oh, ow, &best)?;
    let (top, left) = center;
    let weights = central.pad(geometry.region.0, geometry.region.1, top, left);
    Ok(HingeOutcome {
        model: StruckModel {
            weights,
            regularizer: SpatialRegularizer::indicator_box(geometry.region, geometry.object, DEFAULT_BIG)?,
            lambda,
            geometry,
        },
        objective: best_obj,
        iterations,
        converged,
    })
}

/// Scores every 1-cell translation in the search region around
/// `search_center`; returns the best box (first maximum in row-major order
/// wins) and the score grid.
pub fn locate(model: &StruckModel, frame: &ImageFrame, search_center: &BBox) -> Result<(BBox, Grid2)> {
    locate_scaled(model, frame, search_center, 1.0)
}

pub fn locate_scaled(model: &StruckModel, frame: &ImageFrame, search_center: &BBox, scale: f64) -> Result<(BBox, Grid2)> {
    let samples = build_sample_set_scaled(frame, search_center, &model.geometry, 1, scale)?;
    let response = samples.dense_scores(&model.weights)?;
    let (pr, pc) = response.argmax();
    let (cr, cc) = model.geometry.centered_offset();
    let px = (model.geometry.cell as f64) * scale;
    let dy = (pr as f64 - cr as f64) * px;
    let dx = (pc as f64 - cc as f64) * px;
    Ok((search_center.translated(dx, dy), response))
}

/// One point of the Struck/SRDCF gap sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub region: (usize, usize),
    /// Per-axis `(rows, cols)` fraction of true translations among cyclic shifts.
    pub sample_ratio: (f64, f64),
    /// `‖central(SRDCF) − central(Struck)‖ / ‖central(Struck)‖`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSetup {
    pub object: (usize, usize),
    /// Region sizes as multiples of the object size.
    pub multiples: Vec<usize>,
    /// Struck loss weight; the matching SRDCF regularization weight is `1/lambda`.
    pub lambda: f64,
    /// Gaussian label width in cells.
    pub sigma: f64,
    pub big: f64,
    pub cell: usize,
    pub feature: FeatureKind,
}

/// Trains dense Struck and SRDCF with the box indicator on the same region
/// for each size in the sweep, both with `α = 1/N_c`, and measures how far
/// their object-sized filters are apart.
pub fn asymptotic_gap(frame: &ImageFrame, center: &BBox, setup: &GapSetup) -> Result<Vec<GapPoint>> {
    let mut out = Vec::with_capacity(setup.multiples.len());
    let cg = CgOptions {
        rel_tol: 1e-8,
        max_iter: 2000,
    };
    for &m in &setup.multiples {
        let region = (setup.object.0 * m, setup.object.1 * m);
        let geometry = StruckGeometry::new(setup.object, region, setup.cell, setup.feature)?;
        let samples = build_sample_set(frame, center, &geometry, 1)?;
        let labels = crate::labels::gaussian_labels(region.0, region.1, (0, 0), setup.sigma)?;
        let weights = SampleWeights::uniform(geometry.dense_count());
        let frames = [TrainingFrame {
            samples: &samples,
            labels: &labels,
            weights,
        }];
        let opts = StruckOptions {
            big: setup.big,
            cg,
            ..StruckOptions::default()
        };
        let (struck, _) = solve_struck_square_multi(&frames, setup.lambda, opts, None)?;

        let (top, left) = geometry.centered_offset();
        let base = ChannelPatch::new(
            samples.sample((top, left)),
            setup.cell,
            samples.context.origin,
        )?;
        let reg = SpatialRegularizer::indicator_box(region, setup.object, setup.big)?;
        let srdcf = solve_srdcf_with(
            &base,
            &labels.values,
            &reg,
            1.0 / setup.lambda,
            weights,
            SrdcfOptions { dense_limit: 1024, cg },
            None,
        )?;
        let a = struck.central();
        let b = srdcf.crop(top, left, setup.object.0, setup.object.1);
        let diff: f64 = a
            .flatten()
            .iter()
            .zip(b.flatten())
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = a.norm();
        out.push(GapPoint {
            region,
            sample_ratio: (sample_ratio(region.0, setup.object.0), sample_ratio(region.1, setup.object.1)),
            gap: if norm == 0.0 { diff } else { diff / norm },
        });
    }
    Ok(out)
}
