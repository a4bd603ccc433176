//! Seeded checks tying the three solvers together, as run by `track verify`.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cflbmc::{solve_cflbmc_direct, solve_cflbmc_traced, AlmConfig, MaskSpec};
use crate::dsp::{hann2, Grid2};
use crate::error::{Error, Result};
use crate::eval::SCHEMA_VERSION;
use crate::features::{apply_window, hog_channels, ChannelPatch, FeatureKind, ImageFrame, HOG_BINS};
use crate::labels::{gaussian_labels, iou_labels, BBox, LabelMap, SampleWeights};
use crate::srdcf::masked_relation_check;
use crate::struck::{
    asymptotic_gap, build_sample_set, locate, solve_struck_hinge_small, solve_struck_square, GapSetup, HingeOptions,
    StruckGeometry, StruckModel,
};
use crate::synth::Texture;

/// Pass thresholds of the suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub alm_tolerance: f64,
    pub alm_iterations: usize,
    /// Largest relative objective excess of the short ALM run over the long one.
    pub short_run_tolerance: f64,
    pub short_run_rate: f64,
    pub relation_tolerance: f64,
    pub big_sweep: Vec<f64>,
    pub gap_multiples: Vec<usize>,
    pub gap_tolerance: f64,
    /// Largest argmax disagreement, in cells, counted as agreement.
    pub label_max_displacement: f64,
    pub label_rate: f64,
    pub loss_rate: f64,
}

impl Default for SuiteManifest {
    fn default() -> Self {
        SuiteManifest {
            alm_tolerance: 1e-3,
            alm_iterations: 50,
            short_run_tolerance: 0.01,
            short_run_rate: 0.9,
            relation_tolerance: 1e-3,
            big_sweep: vec![1e2, 1e4, 1e6, 1e8],
            gap_multiples: vec![1, 2, 4, 8],
            gap_tolerance: 0.35,
            label_max_displacement: 1.0,
            label_rate: 0.9,
            loss_rate: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    /// ALM against the dense masked-ridge oracle, plus the short-run objective.
    AlmOracle,
    /// Masked filter against the indicator-regularized filter over the big sweep.
    CflbmcSrdcf,
    /// Dense Struck against SRDCF with the box indicator over growing regions.
    StruckSrdcf,
    /// Struck trained on IoU labels against Gaussian labels.
    LabelSubstitution,
    /// Hinge-loss Struck against square-loss Struck.
    LossSubstitution,
}

/// One seeded case. Fields a kind does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationCase {
    pub kind: RelationKind,
    pub seed: u64,
    /// Base sample size `T` in cells; drawn from the seed when absent.
    pub template: Option<(usize, usize)>,
    /// Active block `D` in cells; drawn from the seed when absent.
    pub active: Option<(usize, usize)>,
    /// Object size `w` in cells for the Struck cases.
    pub object: usize,
    /// Region size `w_l` in cells for the substitution cases.
    pub region: usize,
    pub channels: Option<usize>,
    pub lambda: f64,
    pub sigma: f64,
    /// Textureless frame; reported but excluded from pass rates.
    pub flat: bool,
}

impl Default for RelationCase {
    fn default() -> Self {
        RelationCase {
            kind: RelationKind::AlmOracle,
            seed: 0,
            template: None,
            active: None,
            object: 8,
            region: 20,
            channels: None,
            lambda: 10.0,
            sigma: 1.0,
            flat: false,
        }
    }
}

impl RelationCase {
    pub fn id(&self) -> String {
        let kind = serde_json::to_value(self.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        format!("{kind}/{:03}{}", self.seed, if self.flat { "/flat" } else { "" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub kind: RelationKind,
    pub seed: u64,
    /// Excluded from pass rules and rates.
    pub informative: bool,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub error: Option<String>,
}

/// Pass rule for one kind, evaluated over its cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: RelationKind,
    pub cases: usize,
    pub passed_cases: usize,
    pub rate: f64,
    pub required_rate: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub manifest: SuiteManifest,
    pub summaries: Vec<KindSummary>,
    pub cases: Vec<CaseResult>,
    pub passed: bool,
}

/// The default cases: 20 ALM, 10 masking, 10 gap, 50 label and 50 loss cases,
/// plus one flat label case.
pub fn default_cases() -> Vec<RelationCase> {
    let mut cases = Vec::new();
    let of = |kind, seed| RelationCase {
        kind,
        seed,
        ..RelationCase::default()
    };
    cases.extend((0..20).map(|s| of(RelationKind::AlmOracle, s)));
    cases.extend((0..10).map(|s| of(RelationKind::CflbmcSrdcf, s)));
    cases.extend((0..10).map(|s| RelationCase {
        lambda: 100.0,
        ..of(RelationKind::StruckSrdcf, s)
    }));
    cases.extend((0..50).map(|s| RelationCase {
        lambda: 100.0,
        sigma: 2.0,
        ..of(RelationKind::LabelSubstitution, s)
    }));
    cases.push(RelationCase {
        lambda: 100.0,
        sigma: 2.0,
        flat: true,
        ..of(RelationKind::LabelSubstitution, 0)
    });
    cases.extend((0..50).map(|s| RelationCase {
        object: 4,
        region: 12,
        lambda: 100.0,
        ..of(RelationKind::LossSubstitution, s)
    }));
    cases
}

/// Hann-windowed HOG base sample with Gaussian labels and a centred mask.
/// Sizes and the channel subset are drawn from the seed unless fixed.
pub fn masked_instance(case: &RelationCase) -> Result<(ChannelPatch, LabelMap, MaskSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let template = case.template.unwrap_or_else(|| {
        let sizes = [4, 6, 8];
        (sizes[rng.gen_range(0..3)], sizes[rng.gen_range(0..3)])
    });
    let active = case.active.unwrap_or_else(|| {
        let pick = |t: usize, rng: &mut ChaCha8Rng| if t >= 6 && rng.gen_bool(0.5) { 4 } else { 2 };
        (pick(template.0, &mut rng), pick(template.1, &mut rng))
    });
    let channels = case.channels.unwrap_or_else(|| rng.gen_range(1..=3));
    if channels == 0 || channels > HOG_BINS {
        return Err(Error::InvalidConfig(format!("channel count {channels} outside 1..={HOG_BINS}")));
    }
    let cell = 8;
    let texture = Texture::new(64, case.seed);
    let pixels = texture.grid().crop(0, 0, template.0 * cell, template.1 * cell);
    let hog = hog_channels(&pixels, cell)?;
    let mut chosen = sample_indices(&mut rng, HOG_BINS, channels).into_vec();
    chosen.sort_unstable();
    let picked = ChannelPatch::from_grids(chosen.iter().map(|&i| hog.channels[i].clone()).collect())?;
    let base = apply_window(&picked, &hann2(template.0, template.1))?;
    let labels = gaussian_labels(template.0, template.1, (0, 0), case.sigma)?;
    let mask = MaskSpec::new(template, active)?;
    Ok((base, labels, mask))
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

type Metrics = BTreeMap<String, f64>;

fn verify_alm(case: &RelationCase, m: &SuiteManifest) -> Result<(bool, Metrics)> {
    let (base, labels, mask) = masked_instance(case)?;
    let cfg = AlmConfig {
        lambda: case.lambda,
        iterations: m.alm_iterations,
        ..AlmConfig::default()
    };
    let oracle = solve_cflbmc_direct(&base, &labels.values, &mask, case.lambda)?;
    let (long, trace) = solve_cflbmc_traced(&base, &labels.values, &mask, &cfg, true)?;
    let error = relative_l2(&long.flatten(), &oracle.flatten());
    let short_iters = AlmConfig::default().iterations.min(m.alm_iterations);
    let short = trace.objective[short_iters - 1];
    let full = trace.objective[m.alm_iterations - 1];
    let excess = (short - full).abs() / full.abs().max(f64::MIN_POSITIVE);
    let metrics = Metrics::from([
        ("oracle_error".into(), error),
        ("short_run_excess".into(), excess),
        ("template_cells".into(), mask.full().0 as f64 * mask.full().1 as f64),
        ("channels".into(), base.channel_count() as f64),
    ]);
    Ok((error <= m.alm_tolerance, metrics))
}

/// Masked and indicator-regularized filters agree at the largest `big`, and
/// the disagreement shrinks strictly along the sweep.
pub fn verify_cflbmc_srdcf(case: &RelationCase, m: &SuiteManifest) -> Result<(bool, Metrics)> {
    let (base, labels, mask) = masked_instance(case)?;
    let mut metrics = Metrics::new();
    let mut errors = Vec::with_capacity(m.big_sweep.len());
    for &big in &m.big_sweep {
        let report = masked_relation_check(&base, &labels.values, &mask, big, case.lambda)?;
        metrics.insert(format!("error@{big:e}"), report.relation_error);
        errors.push(report.relation_error);
    }
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let last = errors.last().copied().unwrap_or(f64::INFINITY);
    metrics.insert("strictly_decreasing".into(), f64::from(u8::from(decreasing)));
    Ok((decreasing && last <= m.relation_tolerance, metrics))
}

/// Gap between dense Struck and SRDCF over regions `k·w`. The `k = 1` point is
/// reported but has no translation freedom and is left out of the rule.
pub fn verify_struck_srdcf(case: &RelationCase, m: &SuiteManifest) -> Result<(bool, Metrics)> {
    let w = case.object;
    let largest = m.gap_multiples.iter().copied().max().unwrap_or(1);
    let size = (2 * largest * w).max(4 * w) + 2 * w;
    let texture = Texture::new(size, case.seed);
    let frame = ImageFrame::from_gray(texture.grid().clone(), 0)?;
    let c = size as f64 / 2.0;
    let center = BBox::from_center(c, c, w as f64, w as f64)?;
    let setup = GapSetup {
        object: (w, w),
        multiples: m.gap_multiples.clone(),
        lambda: case.lambda,
        sigma: case.sigma,
        big: crate::srdcf::DEFAULT_BIG,
        cell: 1,
        feature: FeatureKind::Gray,
    };
    let points = asymptotic_gap(&frame, &center, &setup)?;
    let mut metrics = Metrics::new();
    let mut ratio_exact = true;
    for (p, k) in points.iter().zip(&m.gap_multiples) {
        metrics.insert(format!("gap@{k}w"), p.gap);
        metrics.insert(format!("ratio@{k}w"), p.sample_ratio.1);
        let expected = (p.region.1 - w + 1) as f64 / p.region.1 as f64;
        ratio_exact &= p.sample_ratio.0 == expected && p.sample_ratio.1 == expected;
    }
    let gaps: Vec<f64> = points
        .iter()
        .zip(&m.gap_multiples)
        .filter(|(_, k)| **k > 1)
        .map(|(p, _)| p.gap)
        .collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let last = gaps.last().copied().unwrap_or(f64::INFINITY);
    metrics.insert("non_increasing".into(), f64::from(u8::from(monotone)));
    Ok((monotone && ratio_exact && last <= m.gap_tolerance, metrics))
}

/// Training frame, a translated copy with light pixel noise, and the shift in pixels.
fn translated_pair(case: &RelationCase, size: usize, shift: (f64, f64), noise: f64) -> Result<(ImageFrame, ImageFrame)> {
    if case.flat {
        let flat = Grid2::filled(size, size, 0.5);
        return Ok((ImageFrame::from_gray(flat.clone(), 0)?, ImageFrame::from_gray(flat, 1)?));
    }
    let texture = Texture::new(size, case.seed.wrapping_add(1000));
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed.wrapping_add(2000));
    let moved = Grid2::from_fn(size, size, |r, c| {
        let v = texture.sample(c as f64 - shift.0, r as f64 - shift.1);
        (v + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0)
    });
    Ok((ImageFrame::from_gray(texture.grid().clone(), 0)?, ImageFrame::from_gray(moved, 1)?))
}

fn displacement_cells(a: &BBox, b: &BBox, cell: usize) -> f64 {
    (a.left - b.left).abs().max((a.top - b.top).abs()) / cell as f64
}

fn struck_pair_setup(case: &RelationCase, cell: usize) -> Result<(StruckGeometry, BBox, SampleWeights)> {
    let geometry = StruckGeometry::new((case.object, case.object), (case.region, case.region), cell, FeatureKind::Hog9)?;
    let side = (case.object * cell) as f64;
    let size = 2 * case.region * cell;
    let c = size as f64 / 2.0;
    Ok((geometry, BBox::from_center(c, c, side, side)?, SampleWeights::uniform(geometry.dense_count())))
}

/// Struck located on a translated frame with IoU labels and with Gaussian
/// labels; agreement when the argmax boxes are at most the manifest
/// displacement apart.
pub fn verify_label_substitution(case: &RelationCase, m: &SuiteManifest) -> Result<(bool, Metrics)> {
    let cell = 4;
    let (geometry, center, weights) = struck_pair_setup(case, cell)?;
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let shift = (rng.gen_range(-8.0f64..8.0).round(), rng.gen_range(-8.0f64..8.0).round());
    let size = 2 * case.region * cell;
    let (train, test) = translated_pair(case, size, shift, 0.0)?;
    let samples = build_sample_set(&train, &center, &geometry, 1)?;
    let (rh, rw) = geometry.region;
    let gaussian = gaussian_labels(rh, rw, (0, 0), case.sigma)?;
    let iou = iou_labels(rh, rw, (0, 0), case.object as f64, case.object as f64)?;
    let with_gaussian = solve_struck_square(&samples, &gaussian, case.lambda, weights)?;
    let with_iou = solve_struck_square(&samples, &iou, case.lambda, weights)?;
    let (a, _) = locate(&with_gaussian, &test, &center)?;
    let (b, _) = locate(&with_iou, &test, &center)?;
    let d = displacement_cells(&a, &b, cell);
    let metrics = Metrics::from([("displacement_cells".into(), d)]);
    Ok((d <= m.label_max_displacement, metrics))
}

/// Hinge oracle and square solver located on a frame translated by whole
/// cells; agreement when both pick the same box.
pub fn verify_loss_substitution(case: &RelationCase, _m: &SuiteManifest) -> Result<(bool, Metrics)> {
    let cell = 4;
    let (geometry, center, weights) = struck_pair_setup(case, cell)?;
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let max = (geometry.range().0 / 4) as i32;
    let shift = (
        (cell as i32 * rng.gen_range(-max..=max)) as f64,
        (cell as i32 * rng.gen_range(-max..=max)) as f64,
    );
    let size = 2 * case.region * cell;
    let (train, test) = translated_pair(case, size, shift, 0.03)?;
    let samples = build_sample_set(&train, &center, &geometry, 1)?;
    let (rh, rw) = geometry.region;
    let labels = gaussian_labels(rh, rw, (0, 0), case.sigma)?;
    let square = solve_struck_square(&samples, &labels, case.lambda, weights)?;
    let hinge = solve_struck_hinge_small(&samples, case.lambda, HingeOptions::default())?;
    let located = |model: &StruckModel| locate(model, &test, &center).map(|(b, _)| b);
    let (a, b) = (located(&square)?, located(&hinge.model)?);
    let d = displacement_cells(&a, &b, cell);
    let metrics = Metrics::from([
        ("displacement_cells".into(), d),
        ("hinge_iterations".into(), hinge.iterations as f64),
        ("hinge_converged".into(), f64::from(u8::from(hinge.converged))),
    ]);
    Ok((d == 0.0, metrics))
}

pub fn run_case(case: &RelationCase, m: &SuiteManifest) -> CaseResult {
    let outcome = match case.kind {
        RelationKind::AlmOracle => verify_alm(case, m),
        RelationKind::CflbmcSrdcf => verify_cflbmc_srdcf(case, m),
        RelationKind::StruckSrdcf => verify_struck_srdcf(case, m),
        RelationKind::LabelSubstitution => verify_label_substitution(case, m),
        RelationKind::LossSubstitution => verify_loss_substitution(case, m),
    };
    let (passed, metrics, error) = match outcome {
        Ok((p, metrics)) => (p, metrics, None),
        Err(e) => (false, Metrics::new(), Some(e.to_string())),
    };
    CaseResult {
        id: case.id(),
        kind: case.kind,
        seed: case.seed,
        informative: case.flat,
        passed,
        metrics,
        error,
    }
}

fn summarize(kind: RelationKind, cases: &[CaseResult], m: &SuiteManifest) -> KindSummary {
    let scored: Vec<&CaseResult> = cases.iter().filter(|c| c.kind == kind && !c.informative).collect();
    let n = scored.len();
    let (passed_cases, required_rate) = match kind {
        RelationKind::AlmOracle => {
            // Every case must hit the oracle; the short run only needs the rate.
            let short_ok = scored
                .iter()
                .filter(|c| c.metrics.get("short_run_excess").is_some_and(|e| *e <= m.short_run_tolerance))
                .count();
            let all_oracle = scored.iter().all(|c| c.passed);
            let rate_ok = n > 0 && short_ok as f64 >= m.short_run_rate * n as f64;
            return KindSummary {
                kind,
                cases: n,
                passed_cases: scored.iter().filter(|c| c.passed).count(),
                rate: if n == 0 { 0.0 } else { short_ok as f64 / n as f64 },
                required_rate: m.short_run_rate,
                passed: all_oracle && rate_ok,
            };
        }
        RelationKind::CflbmcSrdcf | RelationKind::StruckSrdcf => (scored.iter().filter(|c| c.passed).count(), 1.0),
        RelationKind::LabelSubstitution => (scored.iter().filter(|c| c.passed).count(), m.label_rate),
        RelationKind::LossSubstitution => (scored.iter().filter(|c| c.passed).count(), m.loss_rate),
    };
    let rate = if n == 0 { 0.0 } else { passed_cases as f64 / n as f64 };
    KindSummary {
        kind,
        cases: n,
        passed_cases,
        rate,
        required_rate,
        passed: n > 0 && rate >= required_rate,
    }
}

/// Runs the cases on the rayon pool; results keep the input order.
pub fn run_suite(cases: &[RelationCase], m: &SuiteManifest) -> SuiteReport {
    let results: Vec<CaseResult> = cases.par_iter().map(|c| run_case(c, m)).collect();
    let kinds: std::collections::BTreeSet<RelationKind> = cases.iter().map(|c| c.kind).collect();
    let summaries: Vec<KindSummary> = kinds.into_iter().map(|k| summarize(k, &results, m)).collect();
    let passed = !summaries.is_empty() && summaries.iter().all(|s| s.passed);
    SuiteReport {
        schema_version: SCHEMA_VERSION,
        manifest: m.clone(),
        summaries,
        cases: results,
        passed,
    }
}
