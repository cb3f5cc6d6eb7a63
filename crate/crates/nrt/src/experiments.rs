//! Fixed experiment protocols and the statistics the acceptance suite reads.

use nrt_core::corpus::{generate, TaskSpec};
use nrt_core::metrics::MetricsRow;
use nrt_core::{Dataset, Scheme, Vocabulary};

use crate::config::{PolicyKind, RunConfig};
use crate::error::CliResult;

/// A task, a dataset size and a run configuration. The training seed is
/// set per run; the dataset is shared by every run of a protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub task: TaskSpec,
    pub pairs: usize,
    pub run: RunConfig,
}

impl Protocol {
    /// Skewed difficulty: two easy copies of the first question symbol, then
    /// the sum of both symbols mod 5. The window of four tokens sees the
    /// second question symbol and one trace token from the first answer
    /// position, so a helpful trace costs the easy tokens some confidence.
    pub fn skewed_collapse() -> Self {
        let mut run = RunConfig {
            policy: PolicyKind::Neural,
            embed: 8,
            hidden: 24,
            window: 4,
            warmup_lambda_format: 0.01,
            ..RunConfig::default()
        };
        let t = &mut run.training;
        t.k = 8;
        t.batch_size = 4;
        t.minibatch_size = 16;
        t.passes = 2;
        t.lr = 1e-3;
        t.max_trace_len = 4;
        t.eval_period = 100;
        t.eval_traces = 2;
        t.steps = 2000;
        Self { task: TaskSpec::skewed(5, 2, 2, 5, 1), pairs: 500, run }
    }

    /// Two-hop lookup over a 4-entry table. With a window of eight tokens a
    /// single trace token keeps the whole table in view.
    pub fn lookup_lift() -> Self {
        let mut run = RunConfig {
            policy: PolicyKind::Neural,
            embed: 8,
            hidden: 32,
            window: 8,
            warmup_lambda_format: 0.02,
            ..RunConfig::default()
        };
        let t = &mut run.training;
        t.scheme = Scheme::Gm;
        t.k = 8;
        t.batch_size = 16;
        t.minibatch_size = 64;
        t.passes = 2;
        t.lr = 1e-3;
        t.max_trace_len = 1;
        t.eval_period = 250;
        t.eval_traces = 4;
        t.steps = 2000;
        Self { task: TaskSpec::lookup(4, 2, 1), pairs: 5000, run }
    }

    pub fn dataset(&self) -> CliResult<(Vocabulary, Dataset)> {
        Ok(generate(&self.task, self.pairs)?)
    }

    pub fn config(&self, scheme: Scheme, seed: u64) -> RunConfig {
        let mut run = self.run.clone();
        run.training.scheme = scheme;
        run.training.seed = seed;
        run
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Number of equal blocks the entropy trajectory is averaged into before
/// judging monotonicity; per-step entropies are too noisy to compare.
pub const ENTROPY_BLOCKS: usize = 5;

/// Block means of the per-step trace entropy. The last block absorbs any
/// remainder rows.
pub fn entropy_blocks(rows: &[MetricsRow], blocks: usize) -> Vec<f64> {
    let size = rows.len() / blocks.max(1);
    if size == 0 {
        return rows.iter().map(|r| r.mean_trace_entropy).collect();
    }
    (0..blocks)
        .map(|b| {
            let end = if b + 1 == blocks { rows.len() } else { (b + 1) * size };
            let chunk = &rows[b * size..end];
            chunk.iter().map(|r| r.mean_trace_entropy).sum::<f64>() / chunk.len() as f64
        })
        .collect()
}

/// True when nothing after the first maximum exceeds its predecessor.
pub fn non_increasing_after_peak(series: &[f64]) -> bool {
    let Some(peak) = series
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
    else {
        return true;
    };
    series[peak..].windows(2).all(|w| w[1] <= w[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn monotone_after_peak() {
        assert!(non_increasing_after_peak(&[0.1, 0.5, 0.4, 0.4, 0.0]));
        assert!(non_increasing_after_peak(&[0.9, 0.5, 0.1]));
        assert!(!non_increasing_after_peak(&[0.1, 0.5, 0.2, 0.3]));
        assert!(non_increasing_after_peak(&[]));
    }

    #[test]
    fn blocks_cover_all_rows() {
        let rows: Vec<MetricsRow> = (0..11)
            .map(|i| MetricsRow { step: i + 1, mean_trace_entropy: i as f64, ..Default::default() })
            .collect();
        let b = entropy_blocks(&rows, 5);
        assert_eq!(b, vec![0.5, 2.5, 4.5, 6.5, 9.0]);
    }

    #[test]
    fn protocols_are_valid() {
        for p in [Protocol::skewed_collapse(), Protocol::lookup_lift()] {
            p.config(Scheme::Am, 3).validate().unwrap();
            let (v, d) = p.dataset().unwrap();
            assert_eq!(d.len(), p.pairs);
            p.config(Scheme::Gm, 0).architecture(&v).validate().unwrap();
        }
    }
}
