use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracklab::equivalence::{default_cases, run_suite, RelationCase, SuiteManifest, SuiteReport};
use tracklab::eval::{discover_sequences, evaluate_runs, load_attributes, load_sequence, run_benchmark, Aggregate};
use tracklab::pipeline::{PipelineConfig, TrackerKind};
use tracklab::synth::{generate, write_sequence, SynthCase, SynthConfig};

#[derive(Parser)]
#[command(name = "track", version, about = "Run, evaluate and verify correlation-filter and Struck trackers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrackerArg {
    Srdcf,
    Cflbmc,
    Struck,
}

impl From<TrackerArg> for TrackerKind {
    fn from(t: TrackerArg) -> Self {
        match t {
            TrackerArg::Srdcf => TrackerKind::Srdcf,
            TrackerArg::Cflbmc => TrackerKind::Cflbmc,
            TrackerArg::Struck => TrackerKind::StruckLinear,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Translate,
    Zoom,
    Static,
}

impl From<CaseArg> for SynthCase {
    fn from(c: CaseArg) -> Self {
        match c {
            CaseArg::Translate => SynthCase::Translate,
            CaseArg::Zoom => SynthCase::Zoom,
            CaseArg::Static => SynthCase::Static,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Track every sequence under a dataset directory and write results.
    Run {
        /// A sequence directory, or a directory of them.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        tracker: TrackerArg,
        /// Pipeline settings as JSON; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON object mapping sequence names to attribute codes.
        #[arg(long)]
        attributes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute reports from saved `run.json` files.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic sequence with exact ground truth.
    Synth {
        #[arg(long, value_enum)]
        case: CaseArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run the equivalence and oracle suite and print a pass/fail table.
    Verify {
        /// JSON array of cases; the built-in suite when absent.
        #[arg(long)]
        cases: Option<PathBuf>,
        /// Where to write the JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_aggregate(agg: &Aggregate) {
    match &agg.overall {
        Some(r) => println!(
            "{}: {} sequences, DP@20 {:.3}, OP@0.5 {:.3}, AUC {:.3}, mean CLE {:.2}px",
            agg.tracker,
            agg.sequences.len(),
            r.distance_precision,
            r.overlap_precision,
            r.auc,
            r.mean_center_error
        ),
        None => println!("{}: no successful sequences", agg.tracker),
    }
    for (name, err) in &agg.failures {
        println!("  failed {name}: {err}");
    }
}

fn print_suite(report: &SuiteReport) {
    println!("{:<20} {:>6} {:>7} {:>8} {:>9}  result", "relation", "cases", "passed", "rate", "required");
    for s in &report.summaries {
        let kind = serde_json::to_value(s.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        println!(
            "{:<20} {:>6} {:>7} {:>8.3} {:>9.3}  {}",
            kind,
            s.cases,
            s.passed_cases,
            s.rate,
            s.required_rate,
            if s.passed { "PASS" } else { "FAIL" }
        );
    }
    for c in report.cases.iter().filter(|c| c.error.is_some()) {
        println!("  {}: {}", c.id, c.error.as_deref().unwrap_or_default());
    }
    println!("overall: {}", if report.passed { "PASS" } else { "FAIL" });
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            dataset,
            tracker,
            config,
            attributes,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => read_json::<PipelineConfig>(&p)?,
                None => PipelineConfig::default(),
            };
            cfg.tracker = tracker.into();
            let attrs = attributes.map(|p| load_attributes(&p)).transpose()?;
            let mut specs = Vec::new();
            for dir in discover_sequences(&dataset)? {
                let mut spec = load_sequence(&dir)?;
                if let Some(codes) = attrs.as_ref().and_then(|a| a.get(&spec.name)) {
                    spec.attributes = codes.clone();
                }
                specs.push(spec);
            }
            let agg = run_benchmark(&specs, &cfg, &out)?;
            print_aggregate(&agg);
            Ok(agg.failures.is_empty())
        }
        Command::Eval { runs, out } => {
            let aggs = evaluate_runs(&runs, &out)?;
            aggs.iter().for_each(print_aggregate);
            Ok(true)
        }
        Command::Synth { case, out, frames, seed } => {
            let cfg = SynthConfig {
                frames,
                seed,
                ..SynthConfig::default()
            };
            let seq = generate(case.into(), &cfg)?;
            write_sequence(&seq, &out)?;
            println!("wrote {} frames to {}", seq.frames.len(), out.display());
            Ok(true)
        }
        Command::Verify { cases, report } => {
            let cases: Vec<RelationCase> = match cases {
                Some(p) => read_json(&p)?,
                None => default_cases(),
            };
            if cases.is_empty() {
                bail!("no cases to verify");
            }
            let result = run_suite(&cases, &SuiteManifest::default());
            print_suite(&result);
            if let Some(path) = report {
                let mut text = serde_json::to_string_pretty(&result)?;
                text.push('\n');
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(result.passed)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
