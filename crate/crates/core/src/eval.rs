//! OTB-style sequences, one-pass evaluation metrics and result files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::ImageFrame;
use crate::labels::BBox;
use crate::pipeline::{init, PipelineConfig};

/// Version of every JSON document written by this module.
pub const SCHEMA_VERSION: u32 = 1;

/// Attribute codes recognised in attribute files.
pub const ATTRIBUTE_CODES: [&str; 11] = ["IV", "SV", "OCC", "DEF", "MB", "FM", "IPR", "OPR", "OV", "BC", "LR"];

/// Center-error thresholds `0..=50` px.
pub const PRECISION_THRESHOLDS: usize = 51;
/// Overlap thresholds `0, 0.05, ..., 1`.
pub const SUCCESS_THRESHOLDS: usize = 21;
pub const DEFAULT_CENTER_THRESHOLD: f64 = 20.0;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    pub name: String,
    pub frames: Vec<PathBuf>,
    pub ground_truth: Vec<BBox>,
    pub attributes: BTreeSet<String>,
}

/// Parses `l,t,w,h` lines (comma, tab or space separated, 1-indexed) into
/// 0-indexed boxes. Blank lines are skipped.
pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|e| err(format!("{f:?}: {e}")))?;
        }
        let bbox = BBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).map_err(|e| err(e.to_string()))?;
        boxes.push(bbox);
    }
    Ok(boxes)
}

/// Reads `<dir>/img/*` (sorted by file name) and `<dir>/groundtruth_rect.txt`.
pub fn load_sequence(dir: &Path) -> Result<SequenceSpec> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let gt_path = dir.join("groundtruth_rect.txt");
    let ground_truth = parse_groundtruth(&std::fs::read_to_string(&gt_path)?, &gt_path)?;
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir.join("img"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    frames.sort();
    if frames.len() != ground_truth.len() {
        return Err(Error::FrameCountMismatch {
            name,
            images: frames.len(),
            boxes: ground_truth.len(),
        });
    }
    Ok(SequenceSpec {
        name,
        frames,
        ground_truth,
        attributes: BTreeSet::new(),
    })
}

/// Every subdirectory of `root` holding a ground-truth file, sorted by name.
pub fn discover_sequences(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join("groundtruth_rect.txt").is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("groundtruth_rect.txt").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Sequence name to attribute codes, read from a JSON object.
pub fn load_attributes(path: &Path) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let table: BTreeMap<String, BTreeSet<String>> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for (seq, codes) in &table {
        if let Some(bad) = codes.iter().find(|c| !ATTRIBUTE_CODES.contains(&c.as_str())) {
            return Err(Error::InvalidConfig(format!("sequence {seq}: unknown attribute {bad:?}")));
        }
    }
    Ok(table)
}

/// Decodes an 8-bit grayscale or RGB image.
pub fn load_frame(path: &Path, frame_index: usize) -> Result<ImageFrame> {
    let unsupported = |message: String| Error::UnsupportedImage {
        path: path.to_path_buf(),
        message,
    };
    let img = image::open(path).map_err(|e| unsupported(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            ImageFrame::new(h, w, 1, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(), frame_index)
        }
        image::DynamicImage::ImageRgb8(buf) => {
            ImageFrame::new(h, w, 3, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(), frame_index)
        }
        other => Err(unsupported(format!("pixel format {:?} is not 8-bit gray or RGB", other.color()))),
    }
}

fn check_lengths(pred: &[BBox], gt: &[BBox]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    Ok(())
}

/// Per-frame Euclidean center distances and their mean.
pub fn center_errors(pred: &[BBox], gt: &[BBox]) -> Result<(Vec<f64>, f64)> {
    check_lengths(pred, gt)?;
    let errors: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let (a, b) = (p.center(), g.center());
            (a.0 - b.0).hypot(a.1 - b.1)
        })
        .collect();
    let mean = errors.iter().sum::<f64>() / errors.len() as f64;
    Ok((errors, mean))
}

/// Fraction of frames with center error `≤ threshold`.
pub fn distance_precision(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| **e <= threshold).count() as f64 / errors.len() as f64
}

pub fn precision_plot(errors: &[f64]) -> Vec<f64> {
    (0..PRECISION_THRESHOLDS).map(|t| distance_precision(errors, t as f64)).collect()
}

pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_THRESHOLDS).map(|i| i as f64 / (SUCCESS_THRESHOLDS - 1) as f64).collect()
}

/// Fraction of frames with overlap strictly above `threshold`.
pub fn overlap_precision(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|v| **v > threshold).count() as f64 / ious.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub ious: Vec<f64>,
    pub mean_overlap: f64,
    pub overlap_precision: f64,
    pub success_plot: Vec<f64>,
    /// Mean of the success plot.
    pub auc: f64,
}

pub fn overlap_metrics(pred: &[BBox], gt: &[BBox]) -> Result<OverlapMetrics> {
    check_lengths(pred, gt)?;
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.iou(g)).collect();
    let mean_overlap = ious.iter().sum::<f64>() / ious.len() as f64;
    let success_plot: Vec<f64> = success_thresholds().iter().map(|t| overlap_precision(&ious, *t)).collect();
    let auc = success_plot.iter().sum::<f64>() / success_plot.len() as f64;
    Ok(OverlapMetrics {
        overlap_precision: overlap_precision(&ious, DEFAULT_OVERLAP_THRESHOLD),
        ious,
        mean_overlap,
        success_plot,
        auc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub frames: usize,
    pub mean_center_error: f64,
    pub distance_precision: f64,
    pub precision_plot: Vec<f64>,
    pub mean_overlap: f64,
    pub overlap_precision: f64,
    pub success_plot: Vec<f64>,
    pub auc: f64,
}

pub fn evaluate(pred: &[BBox], gt: &[BBox]) -> Result<MetricReport> {
    let (errors, mean_center_error) = center_errors(pred, gt)?;
    let overlap = overlap_metrics(pred, gt)?;
    Ok(MetricReport {
        schema_version: SCHEMA_VERSION,
        frames: pred.len(),
        mean_center_error,
        distance_precision: distance_precision(&errors, DEFAULT_CENTER_THRESHOLD),
        precision_plot: precision_plot(&errors),
        mean_overlap: overlap.mean_overlap,
        overlap_precision: overlap.overlap_precision,
        success_plot: overlap.success_plot,
        auc: overlap.auc,
    })
}

/// Field-wise mean of several reports; `None` when there are none.
pub fn average_reports(reports: &[&MetricReport]) -> Option<MetricReport> {
    let n = reports.len();
    if n == 0 {
        return None;
    }
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    let mean_plot = |f: &dyn Fn(&MetricReport) -> &Vec<f64>| -> Vec<f64> {
        let len = f(reports[0]).len();
        (0..len).map(|i| reports.iter().map(|r| f(r)[i]).sum::<f64>() / n as f64).collect()
    };
    Some(MetricReport {
        schema_version: SCHEMA_VERSION,
        frames: reports.iter().map(|r| r.frames).sum(),
        mean_center_error: mean(&|r| r.mean_center_error),
        distance_precision: mean(&|r| r.distance_precision),
        precision_plot: mean_plot(&|r| &r.precision_plot),
        mean_overlap: mean(&|r| r.mean_overlap),
        overlap_precision: mean(&|r| r.overlap_precision),
        success_plot: mean_plot(&|r| &r.success_plot),
        auc: mean(&|r| r.auc),
    })
}

/// Hex SHA-256 of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &PipelineConfig) -> Result<String> {
    let text = serde_json::to_string(cfg)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

/// Predictions of one tracker on one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRun {
    pub schema_version: u32,
    pub sequence: String,
    pub tracker: String,
    pub config_hash: String,
    pub attributes: BTreeSet<String>,
    pub predictions: Vec<BBox>,
    pub ground_truth: Vec<BBox>,
}

/// Wall-clock time per frame, kept apart from the reproducible results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub schema_version: u32,
    pub sequence: String,
    pub frame_ms: Vec<f64>,
}

/// Runs one pass of the tracker over `frames`, starting from `start`.
pub fn track_frames(frames: &[ImageFrame], start: BBox, cfg: &PipelineConfig) -> Result<(Vec<BBox>, Vec<f64>)> {
    let first = frames.first().ok_or(Error::Empty("sequence frames"))?;
    let clock = Instant::now();
    let mut state = init(first, start, cfg)?;
    let mut times = vec![clock.elapsed().as_secs_f64() * 1e3];
    let mut boxes = vec![start];
    for frame in &frames[1..] {
        let clock = Instant::now();
        boxes.push(state.step(frame)?);
        times.push(clock.elapsed().as_secs_f64() * 1e3);
    }
    Ok((boxes, times))
}

pub fn run_sequence(seq: &SequenceSpec, cfg: &PipelineConfig) -> Result<(TrackRun, RunTiming)> {
    let frames = seq
        .frames
        .iter()
        .enumerate()
        .map(|(i, p)| load_frame(p, i))
        .collect::<Result<Vec<_>>>()?;
    let (predictions, frame_ms) = track_frames(&frames, seq.ground_truth[0], cfg)?;
    Ok((
        TrackRun {
            schema_version: SCHEMA_VERSION,
            sequence: seq.name.clone(),
            tracker: cfg.tracker.name().to_string(),
            config_hash: config_hash(cfg)?,
            attributes: seq.attributes.clone(),
            predictions,
            ground_truth: seq.ground_truth.clone(),
        },
        RunTiming {
            schema_version: SCHEMA_VERSION,
            sequence: seq.name.clone(),
            frame_ms,
        },
    ))
}

/// Mean report over all sequences and per attribute code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub tracker: String,
    pub sequences: Vec<String>,
    pub failures: BTreeMap<String, String>,
    pub overall: Option<MetricReport>,
    pub by_attribute: BTreeMap<String, MetricReport>,
}

fn aggregate(tracker: &str, runs: &[(TrackRun, MetricReport)], failures: BTreeMap<String, String>) -> Aggregate {
    let overall = average_reports(&runs.iter().map(|(_, r)| r).collect::<Vec<_>>());
    let mut by_attribute = BTreeMap::new();
    for code in ATTRIBUTE_CODES {
        let members: Vec<&MetricReport> = runs.iter().filter(|(t, _)| t.attributes.contains(code)).map(|(_, r)| r).collect();
        if let Some(avg) = average_reports(&members) {
            by_attribute.insert(code.to_string(), avg);
        }
    }
    Aggregate {
        schema_version: SCHEMA_VERSION,
        tracker: tracker.to_string(),
        sequences: runs.iter().map(|(t, _)| t.sequence.clone()).collect(),
        failures,
        overall,
        by_attribute,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_plot_csv(path: &Path, header: &str, thresholds: &[f64], values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["threshold", header]).map_err(csv_error)?;
    for (t, v) in thresholds.iter().zip(values) {
        w.write_record([t.to_string(), v.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn write_report_files(dir: &Path, report: &MetricReport) -> Result<()> {
    write_json(&dir.join("report.json"), report)?;
    let precision_t: Vec<f64> = (0..PRECISION_THRESHOLDS).map(|t| t as f64).collect();
    write_plot_csv(&dir.join("precision.csv"), "precision", &precision_t, &report.precision_plot)?;
    write_plot_csv(&dir.join("success.csv"), "success", &success_thresholds(), &report.success_plot)?;
    Ok(())
}

fn write_aggregate(dir: &Path, agg: &Aggregate) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join("aggregate.json"), agg)?;
    if let Some(overall) = &agg.overall {
        let precision_t: Vec<f64> = (0..PRECISION_THRESHOLDS).map(|t| t as f64).collect();
        write_plot_csv(&dir.join("aggregate_precision.csv"), "precision", &precision_t, &overall.precision_plot)?;
        write_plot_csv(&dir.join("aggregate_success.csv"), "success", &success_thresholds(), &overall.success_plot)?;
    }
    Ok(())
}

/// Tracks every sequence on the rayon pool and writes, under
/// `<out>/<tracker>/`, one directory per sequence (`run.json`, `report.json`,
/// `precision.csv`, `success.csv`, `timing.json`) plus the aggregate files.
/// A failing sequence is recorded in the aggregate and the run continues.
pub fn run_benchmark(sequences: &[SequenceSpec], cfg: &PipelineConfig, out: &Path) -> Result<Aggregate> {
    cfg.validate()?;
    let tracker_dir = out.join(cfg.tracker.name());
    std::fs::create_dir_all(&tracker_dir)?;
    if sequences.is_empty() {
        log::warn!("no sequences to run; writing an empty aggregate");
    }
    let results: Vec<(String, Result<(TrackRun, RunTiming)>)> =
        sequences.par_iter().map(|s| (s.name.clone(), run_sequence(s, cfg))).collect();
    let mut runs = Vec::new();
    let mut failures = BTreeMap::new();
    for (name, result) in results {
        match result.and_then(|(run, timing)| {
            let report = evaluate(&run.predictions, &run.ground_truth)?;
            let dir = tracker_dir.join(&name);
            std::fs::create_dir_all(&dir)?;
            write_json(&dir.join("run.json"), &run)?;
            write_json(&dir.join("timing.json"), &timing)?;
            write_report_files(&dir, &report)?;
            Ok((run, report))
        }) {
            Ok(pair) => runs.push(pair),
            Err(e) => {
                log::warn!("sequence {name} failed: {e}");
                failures.insert(name, e.to_string());
            }
        }
    }
    let agg = aggregate(cfg.tracker.name(), &runs, failures);
    write_aggregate(&tracker_dir, &agg)?;
    Ok(agg)
}

/// Re-evaluates every `run.json` below `runs` into `<out>/<tracker>/...`.
pub fn evaluate_runs(runs_dir: &Path, out: &Path) -> Result<Vec<Aggregate>> {
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(runs_dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == "run.json")
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    let mut by_tracker: BTreeMap<String, Vec<(TrackRun, MetricReport)>> = BTreeMap::new();
    for path in paths {
        let run: TrackRun = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        let report = evaluate(&run.predictions, &run.ground_truth)?;
        let dir = out.join(&run.tracker).join(&run.sequence);
        std::fs::create_dir_all(&dir)?;
        write_report_files(&dir, &report)?;
        by_tracker.entry(run.tracker.clone()).or_default().push((run, report));
    }
    if by_tracker.is_empty() {
        log::warn!("no run.json files found under {}", runs_dir.display());
    }
    let mut out_aggs = Vec::new();
    for (tracker, runs) in by_tracker {
        let agg = aggregate(&tracker, &runs, BTreeMap::new());
        write_aggregate(&out.join(&tracker), &agg)?;
        out_aggs.push(agg);
    }
    Ok(out_aggs)
}
