//! One training run: warm-up, training, end-of-run evaluation and artifacts.

use std::fs;
use std::path::Path;

use nrt_core::metrics::{token_prob_analysis, MetricsRow, TokenProbAnalysis, TraceMode};
use nrt_core::trainer::{self, CheckpointRecord, Trainer};
use nrt_core::{Dataset, Error, PolicyParameters, Vocabulary};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::metrics_io::{self, fmt_f64, Manifest, MetricsWriter};

/// Rows averaged for the "final" value of a metric.
pub const FINAL_WINDOW: usize = 100;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const REFERENCE_FILE: &str = "reference.ckpt";
pub const ANALYSIS_FILE: &str = "analysis.csv";
pub const CONFIG_FILE: &str = "config.cfg";
pub const ABORT_FILE: &str = "abort.ckpt";

/// Held-out answer log-likelihoods at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lift {
    /// Reference policy, empty trace.
    pub reference_empty: f64,
    /// Trained policy, empty trace.
    pub trained_empty: f64,
    /// Trained policy, mean over sampled traces.
    pub trained_traces: f64,
}

impl Lift {
    /// Gain of trace-conditioned likelihood over the empty-trace baseline,
    /// both under the trained policy.
    pub fn margin(&self) -> f64 {
        self.trained_traces - self.trained_empty
    }

    /// Gain over the reference policy's empty-trace likelihood.
    pub fn reference_margin(&self) -> f64 {
        self.trained_traces - self.reference_empty
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub policy: PolicyParameters,
    pub reference: PolicyParameters,
    pub analysis: TokenProbAnalysis,
    pub lift: Lift,
}

impl RunOutcome {
    pub fn final_entropy(&self) -> f64 {
        final_mean(&self.rows, |r| r.mean_trace_entropy)
    }

    pub fn final_len(&self) -> f64 {
        final_mean(&self.rows, |r| r.mean_trace_len)
    }

    pub fn top_bucket_ratio(&self) -> f64 {
        self.analysis.top_bucket_ratio().unwrap_or(f64::NAN)
    }
}

/// Mean of `f` over the last [`FINAL_WINDOW`] rows (all rows if fewer).
pub fn final_mean(rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> f64 {
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}

/// Seeded initialization followed by the supervised empty-trace warm-up.
pub fn reference_policy(cfg: &RunConfig, vocab: &Vocabulary, data: &Dataset) -> CliResult<PolicyParameters> {
    let arch = cfg.architecture(vocab);
    arch.validate()?;
    let seed = cfg.training.seed;
    let init = PolicyParameters::init_uniform(arch, cfg.init_scale, seed);
    Ok(trainer::supervised_warmup(
        init,
        data,
        cfg.warmup_steps,
        cfg.warmup_batch,
        cfg.warmup_lr,
        cfg.warmup_lambda_format,
        seed,
    )?)
}

pub fn evaluate(cfg: &RunConfig, policy: &PolicyParameters, reference: &PolicyParameters, data: &Dataset) -> CliResult<(TokenProbAnalysis, Lift)> {
    let t = &cfg.training;
    let mode = TraceMode::Sampled { k: cfg.analysis_traces, max_len: t.max_trace_len, seed: t.seed };
    let analysis = token_prob_analysis(policy, reference, data.eval(), mode)?;
    let lift = Lift {
        reference_empty: trainer::empty_trace_answer_logprob(reference, data.eval())?,
        trained_empty: trainer::empty_trace_answer_logprob(policy, data.eval())?,
        trained_traces: trainer::evaluate_answer_logprob(policy, data.eval(), cfg.analysis_traces, t.max_trace_len, t.seed)?,
    };
    Ok((analysis, lift))
}

/// Where a run starts.
pub enum Start {
    Fresh,
    Resume(CheckpointRecord),
}

/// Runs to `cfg.training.steps`. With `out`, every artifact is written
/// there; a numerical abort dumps the last good trainer state first.
pub fn execute(cfg: &RunConfig, vocab: &Vocabulary, data: &Dataset, start: Start, out: Option<&Path>, data_label: &str) -> CliResult<RunOutcome> {
    cfg.validate()?;
    if data.train().is_empty() || data.eval().is_empty() {
        return Err(CliError::Core(Error::EmptyDataset));
    }
    let started = metrics_io::unix_time();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, cfg.canonical_text()).map_err(|e| CliError::io(&path, e))?;
    }
    let reference = reference_policy(cfg, vocab, data)?;
    let mut trainer = match start {
        Start::Fresh => Trainer::new(cfg.training.clone(), reference.clone())?,
        Start::Resume(record) => {
            if record.policy.architecture() != reference.architecture() {
                return Err(CliError::Usage("checkpoint architecture does not match the config".into()));
            }
            Trainer::resume(cfg.training.clone(), record)?
        }
    };
    let mut writer = match out {
        Some(dir) => Some(MetricsWriter::create(&dir.join(METRICS_FILE))?),
        None => None,
    };
    let mut rows = Vec::new();
    while trainer.step_count() < cfg.training.steps {
        match trainer.step(data) {
            Ok(o) => {
                if let Some(w) = writer.as_mut() {
                    w.write_row(&o.row)?;
                }
                rows.push(o.row);
            }
            Err(e @ Error::NonFinite { .. }) => {
                if let Some(dir) = out {
                    checkpoint::save_record(&dir.join(ABORT_FILE), &trainer.checkpoint())?;
                }
                return Err(CliError::Numerical(e.to_string()));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let (analysis, lift) = evaluate(cfg, trainer.policy(), &reference, data)?;
    if let Some(dir) = out {
        checkpoint::save_record(&dir.join(CHECKPOINT_FILE), &trainer.checkpoint())?;
        checkpoint::save_policy(&dir.join(REFERENCE_FILE), &reference)?;
        metrics_io::write_analysis(&dir.join(ANALYSIS_FILE), &analysis)?;
    }
    let outcome = RunOutcome { rows, policy: trainer.into_policy(), reference, analysis, lift };
    if let Some(dir) = out {
        manifest(cfg, vocab, data, data_label, &outcome, started).write(&dir.join(MANIFEST_FILE))?;
    }
    Ok(outcome)
}

fn manifest(cfg: &RunConfig, vocab: &Vocabulary, data: &Dataset, data_label: &str, o: &RunOutcome, started: u64) -> Manifest {
    let t = &cfg.training;
    let join = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
    let mut m = Manifest::default();
    m.push("code_version", env!("CARGO_PKG_VERSION"));
    m.push("config_digest", format!("{:016x}", t.digest()));
    m.push("seed", t.seed);
    m.push("scheme", t.scheme);
    m.push("architecture", o.policy.architecture().descriptor());
    m.push("dataset", data_label);
    m.push("alphabet", vocab.alphabet_size());
    m.push("pairs", data.len());
    m.push("eval_start", data.eval_start());
    m.push("steps", o.rows.last().map_or(0, |r| r.step));
    m.push("entropy_definition", metrics_io::ENTROPY_DEFINITION);
    m.push("reference_definition", metrics_io::REFERENCE_DEFINITION);
    m.push("final_window_rows", FINAL_WINDOW);
    m.push("bucket_edges", join(&o.analysis.edges));
    m.push("bucket_counts", o.analysis.bucket_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
    m.push("bucket_mean_ratio", join(&o.analysis.bucket_mean_ratio));
    m.push("median_baseline_entropy", fmt_f64(o.analysis.median_baseline_entropy));
    m.push("final_trace_entropy", fmt_f64(o.final_entropy()));
    m.push("final_trace_len", fmt_f64(o.final_len()));
    m.push("top_bucket_ratio", fmt_f64(o.top_bucket_ratio()));
    m.push("eval_reference_empty_logprob", fmt_f64(o.lift.reference_empty));
    m.push("eval_trained_empty_logprob", fmt_f64(o.lift.trained_empty));
    m.push("eval_trained_trace_logprob", fmt_f64(o.lift.trained_traces));
    m.push("started_unix", started);
    m.push("finished_unix", metrics_io::unix_time());
    m
}
