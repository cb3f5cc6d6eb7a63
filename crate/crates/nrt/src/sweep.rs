//! One run per (scheme, seed) over a shared dataset, plus summary tables.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use nrt_core::{Dataset, Scheme, Vocabulary};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::{median, non_increasing_after_peak, entropy_blocks, ENTROPY_BLOCKS};
use crate::metrics_io::fmt_f64;
use crate::run::{self, Start};

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub seed: u64,
    pub final_entropy: f64,
    pub final_len: f64,
    pub top_bucket_ratio: f64,
    pub entropy_monotone_after_peak: bool,
    pub lift_margin: f64,
    /// Error text when the run failed.
    pub error: Option<String>,
}

impl RunSummary {
    fn failed(scheme: Scheme, seed: u64, error: String) -> Self {
        Self {
            scheme,
            seed,
            final_entropy: f64::NAN,
            final_len: f64::NAN,
            top_bucket_ratio: f64::NAN,
            entropy_monotone_after_peak: false,
            lift_margin: f64::NAN,
            error: Some(error),
        }
    }
}

/// Worker count: `NRT_THREADS` if set and positive, else the hardware
/// parallelism.
pub fn worker_threads() -> usize {
    std::env::var("NRT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run_dir_name(scheme: Scheme, seed: u64) -> String {
    format!("{scheme}-seed{seed}")
}

/// Runs every (scheme, seed) pair. Runs are independent and deterministic,
/// so the results do not depend on `threads`. A failed run is recorded and
/// the sweep continues.
pub fn sweep(
    base: &RunConfig,
    vocab: &Vocabulary,
    data: &Dataset,
    schemes: &[Scheme],
    seeds: &[u64],
    out: Option<&Path>,
    data_label: &str,
    threads: usize,
) -> CliResult<Vec<RunSummary>> {
    if schemes.len() < 2 {
        return Err(CliError::Usage("a sweep needs at least two schemes".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let jobs: Vec<(Scheme, u64)> = schemes.iter().flat_map(|&s| seeds.iter().map(move |&k| (s, k))).collect();
    let results: Vec<Mutex<Option<RunSummary>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    let work = || loop {
        let i = {
            let mut n = next.lock().unwrap();
            let i = *n;
            *n += 1;
            i
        };
        let Some(&(scheme, seed)) = jobs.get(i) else { break };
        let mut cfg = base.clone();
        cfg.training.scheme = scheme;
        cfg.training.seed = seed;
        let dir = out.map(|d| d.join(run_dir_name(scheme, seed)));
        let summary = match run::execute(&cfg, vocab, data, Start::Fresh, dir.as_deref(), data_label) {
            Ok(o) => RunSummary {
                scheme,
                seed,
                final_entropy: o.final_entropy(),
                final_len: o.final_len(),
                top_bucket_ratio: o.top_bucket_ratio(),
                entropy_monotone_after_peak: non_increasing_after_peak(&entropy_blocks(&o.rows, ENTROPY_BLOCKS)),
                lift_margin: o.lift.margin(),
                error: None,
            },
            Err(e) => RunSummary::failed(scheme, seed, e.to_string()),
        };
        *results[i].lock().unwrap() = Some(summary);
    };
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            s.spawn(work);
        }
    });
    let summaries: Vec<RunSummary> = results.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect();
    if let Some(dir) = out {
        write_summary(&dir.join("summary.csv"), &summaries)?;
        write_comparison(&dir.join("comparison.csv"), schemes, &summaries)?;
    }
    Ok(summaries)
}

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "scheme",
    "seed",
    "final_trace_entropy",
    "final_trace_len",
    "top_bucket_ratio",
    "entropy_monotone_after_peak",
    "lift_margin",
    "status",
];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::io(path, std::io::Error::other(e))
}

pub fn write_summary(path: &Path, rows: &[RunSummary]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            r.scheme.to_string(),
            r.seed.to_string(),
            fmt_f64(r.final_entropy),
            fmt_f64(r.final_len),
            fmt_f64(r.top_bucket_ratio),
            r.entropy_monotone_after_peak.to_string(),
            fmt_f64(r.lift_margin),
            r.error.clone().unwrap_or_else(|| "ok".into()),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-scheme medians over successful runs, one column per scheme, so the
/// AM and WS columns sit side by side.
pub fn comparison_rows(schemes: &[Scheme], rows: &[RunSummary]) -> Vec<(String, Vec<f64>)> {
    let stat = |f: &dyn Fn(&RunSummary) -> f64| -> Vec<f64> {
        schemes
            .iter()
            .map(|&s| {
                let v: Vec<f64> = rows.iter().filter(|r| r.scheme == s && r.error.is_none()).map(f).collect();
                median(&v)
            })
            .collect()
    };
    vec![
        ("median_final_trace_entropy".into(), stat(&|r| r.final_entropy)),
        ("median_final_trace_len".into(), stat(&|r| r.final_len)),
        ("median_top_bucket_ratio".into(), stat(&|r| r.top_bucket_ratio)),
        ("monotone_entropy_runs".into(), stat(&|r| f64::from(u8::from(r.entropy_monotone_after_peak)))),
        ("median_lift_margin".into(), stat(&|r| r.lift_margin)),
    ]
}

pub fn write_comparison(path: &Path, schemes: &[Scheme], rows: &[RunSummary]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["statistic".to_string()];
    header.extend(schemes.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_err(path))?;
    for (name, values) in comparison_rows(schemes, rows) {
        let mut rec = vec![name];
        rec.extend(values.iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
