//! Frame-to-frame tracking shared by the three tracker kinds.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cflbmc::{solve_cflbmc, AlmConfig, MaskSpec};
use crate::dsp::{hann2, signed_shift, Grid2};
use crate::error::{Error, Result};
use crate::features::{apply_window, extract_resampled, ChannelPatch, FeatureKind, ImageFrame};
use crate::filter::{response_map, subcell_refine, FilterBank};
use crate::labels::{gaussian_labels, BBox, LabelMap, SampleWeights};
use crate::linalg::CgOptions;
use crate::srdcf::{solve_srdcf_with, SpatialRegularizer, SrdcfOptions};
use crate::struck::{
    build_sample_set_scaled, locate_scaled, solve_struck_square_multi, SampleSet, StruckGeometry, StruckModel,
    StruckOptions, TrainingFrame,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    Srdcf,
    Cflbmc,
    #[serde(alias = "struck")]
    StruckLinear,
}

impl TrackerKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrackerKind::Srdcf => "srdcf",
            TrackerKind::Cflbmc => "cflbmc",
            TrackerKind::StruckLinear => "struck_linear",
        }
    }
}

impl std::str::FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "srdcf" => Ok(TrackerKind::Srdcf),
            "cflbmc" => Ok(TrackerKind::Cflbmc),
            "struck" | "struck_linear" => Ok(TrackerKind::StruckLinear),
            other => Err(Error::InvalidConfig(format!("unknown tracker kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrdcfSettings {
    pub lambda: f64,
    pub mu_reg: f64,
    pub eta: f64,
    pub cg: CgOptions,
}

impl Default for SrdcfSettings {
    fn default() -> Self {
        SrdcfSettings {
            lambda: 1.0,
            mu_reg: 0.1,
            eta: 3.0,
            cg: CgOptions {
                rel_tol: 1e-6,
                max_iter: 100,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StruckSettings {
    pub lambda: f64,
    /// Search region size per axis relative to the box.
    pub region_scale: f64,
    /// Frames kept for retraining.
    pub window: usize,
    /// Training sample stride in cells.
    pub stride: usize,
    pub big: f64,
    pub cg: CgOptions,
}

impl Default for StruckSettings {
    fn default() -> Self {
        StruckSettings {
            lambda: 100.0,
            region_scale: 2.5,
            window: 10,
            stride: 1,
            big: crate::srdcf::DEFAULT_BIG,
            cg: CgOptions {
                rel_tol: 1e-6,
                max_iter: 100,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tracker: TrackerKind,
    /// Search region area relative to the box area (correlation filters).
    pub search_area_factor: f64,
    pub update_rate: f64,
    pub scale_count: usize,
    pub scale_step: f64,
    /// Feature cell side in pixels.
    pub cell: usize,
    /// Label width relative to the geometric mean of the box side in cells.
    pub sigma_factor: f64,
    pub feature: FeatureKind,
    pub subcell_refine: bool,
    pub estimate_scale: bool,
    pub srdcf: SrdcfSettings,
    pub cflbmc: AlmConfig,
    pub struck: StruckSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tracker: TrackerKind::Srdcf,
            search_area_factor: 16.0,
            update_rate: 0.025,
            scale_count: 7,
            scale_step: 1.02,
            cell: 4,
            sigma_factor: 1.0 / 16.0,
            feature: FeatureKind::Hog9,
            subcell_refine: true,
            estimate_scale: true,
            srdcf: SrdcfSettings::default(),
            cflbmc: AlmConfig::default(),
            struck: StruckSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn for_kind(tracker: TrackerKind) -> Self {
        PipelineConfig {
            tracker,
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.scale_count == 0 || self.scale_count.is_multiple_of(2) {
            problems.push("scale_count must be odd");
        }
        if !(self.update_rate >= 0.0 && self.update_rate <= 1.0) {
            problems.push("update_rate must lie in [0, 1]");
        }
        if !(self.scale_step > 1.0) {
            problems.push("scale_step must exceed 1");
        }
        if self.cell == 0 {
            problems.push("cell must be positive");
        }
        if !(self.search_area_factor >= 1.0) {
            problems.push("search_area_factor must be at least 1");
        }
        if !(self.sigma_factor > 0.0) {
            problems.push("sigma_factor must be positive");
        }
        if !(self.srdcf.lambda > 0.0 && self.srdcf.mu_reg > 0.0 && self.srdcf.eta >= 0.0) {
            problems.push("srdcf settings must be positive");
        }
        if !(self.struck.lambda > 0.0 && self.struck.region_scale >= 1.0 && self.struck.window >= 1 && self.struck.stride >= 1) {
            problems.push("struck settings out of range");
        }
        if problems.is_empty() {
            self.cflbmc.validate()
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }

    /// Ladder exponents ordered by distance from zero, so ties favour scale 1.
    pub fn ladder(&self) -> Vec<i32> {
        let half = (self.scale_count / 2) as i32;
        let mut ks: Vec<i32> = (-half..=half).collect();
        ks.sort_by_key(|k| (k.abs(), *k));
        ks
    }
}

/// Cell lattice of a correlation-filter tracker, fixed at initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct CfGeometry {
    /// Search region side in cells.
    pub cells: usize,
    /// Box size in cells at initialization, `(rows, cols)`.
    pub target: (usize, usize),
    pub window: Grid2,
    pub labels: LabelMap,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackerModel {
    /// Full-region filter (the masked filter is stored zero-padded).
    Cf { filter: FilterBank, geometry: CfGeometry },
    Struck {
        model: StruckModel,
        history: VecDeque<(SampleSet, LabelMap)>,
        labels: LabelMap,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub model: TrackerModel,
    pub bbox: BBox,
    /// Size multiplier relative to the initial box.
    pub scale: f64,
    pub frame_index: usize,
    pub initial_size: (f64, f64),
    pub config: PipelineConfig,
}

/// Chosen ladder exponent and the resulting multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleEstimate {
    pub exponent: i32,
    pub factor: f64,
}

fn cf_sample(frame: &ImageFrame, center: (f64, f64), geometry: &CfGeometry, cfg: &PipelineConfig, scale: f64) -> Result<ChannelPatch> {
    let px = geometry.cells * cfg.cell;
    let side = px as f64 * scale;
    let region = BBox::from_center(center.0, center.1, side, side)?;
    let pixels = extract_resampled(frame, &region, px, px)?;
    let feats = cfg.feature.compute(&pixels, cfg.cell, region)?;
    apply_window(&feats, &geometry.window)
}

fn train_cf(sample: &ChannelPatch, geometry: &CfGeometry, cfg: &PipelineConfig, warm: Option<&FilterBank>) -> Result<FilterBank> {
    let n = geometry.cells;
    match cfg.tracker {
        TrackerKind::Srdcf => {
            let (th, tw) = geometry.target;
            let reg = SpatialRegularizer::quadratic((n, n), (tw as f64, th as f64), cfg.srdcf.mu_reg, cfg.srdcf.eta)?;
            let opts = SrdcfOptions {
                cg: cfg.srdcf.cg,
                ..SrdcfOptions::default()
            };
            solve_srdcf_with(sample, &geometry.labels.values, &reg, cfg.srdcf.lambda, SampleWeights::unit(), opts, warm)
        }
        TrackerKind::Cflbmc => {
            let mask = cf_mask(geometry)?;
            let filter = solve_cflbmc(sample, &geometry.labels, &mask, &cfg.cflbmc)?;
            Ok(mask.pad_filter(&filter))
        }
        TrackerKind::StruckLinear => unreachable!("struck has its own trainer"),
    }
}

/// Active block of the masked filter: the box in cells with an even margin.
fn cf_mask(geometry: &CfGeometry) -> Result<MaskSpec> {
    let n = geometry.cells;
    let fit = |d: usize| {
        let d = d.clamp(1, n);
        if (n - d) % 2 == 1 {
            if d < n {
                d + 1
            } else {
                d - 1
            }
        } else {
            d
        }
    };
    MaskSpec::new((n, n), (fit(geometry.target.0), fit(geometry.target.1)))
}

fn struck_labels(geometry: &StruckGeometry, cfg: &PipelineConfig) -> Result<LabelMap> {
    let sigma = cfg.sigma_factor * ((geometry.object.0 * geometry.object.1) as f64).sqrt();
    gaussian_labels(geometry.region.0, geometry.region.1, (0, 0), sigma)
}

fn train_struck(
    history: &VecDeque<(SampleSet, LabelMap)>,
    cfg: &PipelineConfig,
    warm: Option<&FilterBank>,
) -> Result<StruckModel> {
    let frames: Vec<TrainingFrame<'_>> = history
        .iter()
        .map(|(s, l)| TrainingFrame {
            samples: s,
            labels: l,
            weights: SampleWeights::uniform(s.len()),
        })
        .collect();
    let opts = StruckOptions {
        big: cfg.struck.big,
        cg: cfg.struck.cg,
        ..StruckOptions::default()
    };
    Ok(solve_struck_square_multi(&frames, cfg.struck.lambda, opts, warm)?.0)
}

/// Trains the first model on `frame` around `bbox`.
pub fn init(frame: &ImageFrame, bbox: BBox, cfg: &PipelineConfig) -> Result<TrackerState> {
    cfg.validate()?;
    if !(bbox.width >= 1.0 && bbox.height >= 1.0) || !bbox.left.is_finite() || !bbox.top.is_finite() {
        return Err(Error::DegenerateRegion(format!("initial box {bbox:?}")));
    }
    let model = match cfg.tracker {
        TrackerKind::Srdcf | TrackerKind::Cflbmc => {
            let side = cfg.search_area_factor.sqrt() * (bbox.width * bbox.height).sqrt();
            let cells = ((side / cfg.cell as f64).round() as usize).max(3);
            let target = (
                ((bbox.height / cfg.cell as f64).round() as usize).clamp(1, cells),
                ((bbox.width / cfg.cell as f64).round() as usize).clamp(1, cells),
            );
            let sigma = cfg.sigma_factor * ((target.0 * target.1) as f64).sqrt();
            let geometry = CfGeometry {
                cells,
                target,
                window: hann2(cells, cells),
                labels: gaussian_labels(cells, cells, (0, 0), sigma)?,
            };
            let sample = cf_sample(frame, bbox.center(), &geometry, cfg, 1.0)?;
            let filter = train_cf(&sample, &geometry, cfg, None)?;
            TrackerModel::Cf { filter, geometry }
        }
        TrackerKind::StruckLinear => {
            let r = cfg.struck.region_scale;
            let geometry = StruckGeometry::from_box(&bbox, (r, r), cfg.cell, cfg.feature)?;
            let labels = struck_labels(&geometry, cfg)?;
            let samples = build_sample_set_scaled(frame, &bbox, &geometry, cfg.struck.stride, 1.0)?;
            let mut history = VecDeque::with_capacity(cfg.struck.window);
            history.push_back((samples, labels.clone()));
            let model = train_struck(&history, cfg, None)?;
            TrackerModel::Struck { model, history, labels }
        }
    };
    Ok(TrackerState {
        model,
        bbox,
        scale: 1.0,
        frame_index: frame.frame_index,
        initial_size: (bbox.width, bbox.height),
        config: cfg.clone(),
    })
}

impl TrackerState {
    fn box_at(&self, center: (f64, f64), scale: f64) -> Result<BBox> {
        BBox::from_center(center.0, center.1, self.initial_size.0 * scale, self.initial_size.1 * scale)
    }

    /// Detection response around `center` at size multiplier `scale`.
    pub fn response(&self, frame: &ImageFrame, center: (f64, f64), scale: f64) -> Result<Grid2> {
        match &self.model {
            TrackerModel::Cf { filter, geometry } => {
                let sample = cf_sample(frame, center, geometry, &self.config, scale)?;
                response_map(filter, &sample)
            }
            TrackerModel::Struck { model, .. } => {
                let search = self.box_at(center, scale)?;
                Ok(locate_scaled(model, frame, &search, scale)?.1)
            }
        }
    }

    /// New centre from the response peak around `center` at `scale`.
    fn locate(&self, frame: &ImageFrame, center: (f64, f64), scale: f64) -> Result<(f64, f64)> {
        let cfg = &self.config;
        match &self.model {
            TrackerModel::Cf { geometry, .. } => {
                let resp = self.response(frame, center, scale)?;
                let peak = resp.argmax();
                let n = geometry.cells;
                let (dr, dc) = if cfg.subcell_refine {
                    let (r, c) = subcell_refine(&resp, peak);
                    let wrap = |v: f64| if v > n as f64 / 2.0 { v - n as f64 } else { v };
                    (wrap(r), wrap(c))
                } else {
                    (signed_shift(peak.0, n) as f64, signed_shift(peak.1, n) as f64)
                };
                let px = cfg.cell as f64 * scale;
                Ok((center.0 + dc * px, center.1 + dr * px))
            }
            TrackerModel::Struck { model, .. } => {
                let search = self.box_at(center, scale)?;
                let (found, _) = locate_scaled(model, frame, &search, scale)?;
                Ok(found.center())
            }
        }
    }

    /// Tries `scale_step^k` around the current scale and keeps the candidate
    /// with the highest peak response; ties go to the exponent closest to 0.
    pub fn estimate_scale(&self, frame: &ImageFrame, center: (f64, f64)) -> Result<ScaleEstimate> {
        let mut best = ScaleEstimate {
            exponent: 0,
            factor: 1.0,
        };
        let mut best_score = f64::NEG_INFINITY;
        for k in self.config.ladder() {
            let factor = self.config.scale_step.powi(k);
            let score = self.response(frame, center, self.scale * factor)?.max();
            if score > best_score {
                best_score = score;
                best = ScaleEstimate { exponent: k, factor };
            }
        }
        Ok(best)
    }

    /// Locates the target in `frame`, updates scale and model, and returns the new box.
    pub fn step(&mut self, frame: &ImageFrame) -> Result<BBox> {
        let center = self.locate(frame, self.bbox.center(), self.scale)?;
        if self.config.estimate_scale {
            self.scale *= self.estimate_scale(frame, center)?.factor;
        }
        self.bbox = self.box_at(center, self.scale)?;
        self.frame_index = frame.frame_index;
        self.update(frame)?;
        Ok(self.bbox)
    }

    fn update(&mut self, frame: &ImageFrame) -> Result<()> {
        let rate = self.config.update_rate;
        if rate == 0.0 {
            return Ok(());
        }
        let center = self.bbox.center();
        let scale = self.scale;
        let cfg = self.config.clone();
        match &mut self.model {
            TrackerModel::Cf { filter, geometry } => {
                let sample = cf_sample(frame, center, geometry, &cfg, scale)?;
                let fresh = train_cf(&sample, geometry, &cfg, Some(filter))?;
                filter.blend(&fresh, rate)?;
            }
            TrackerModel::Struck { model, history, labels } => {
                let samples = build_sample_set_scaled(frame, &self.bbox, &model.geometry, cfg.struck.stride, scale)?;
                if history.len() == cfg.struck.window {
                    history.pop_front();
                }
                history.push_back((samples, labels.clone()));
                *model = train_struck(history, &cfg, Some(&model.weights))?;
            }
        }
        Ok(())
    }
}
