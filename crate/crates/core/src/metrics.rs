//! Per-step training diagnostics and the entropy-bucketed answer-token
//! probability analysis.
//!
//! Trace entropy is the entropy of the masked next-token distribution at
//! every sampled trace decision (including the `END_THINK` decision when it
//! was sampled), pooled over all traces of the step.

use alloc::vec::Vec;

use crate::corpus::{QAPair, Token};
use crate::error::{Error, Result};
use crate::estimator::BatchItem;
use crate::math;
use crate::policy::{self, PolicyParameters};
use crate::rewards;
use crate::rng;

pub const COLUMNS: [&str; 11] = [
    "step",
    "mean_trace_len",
    "median_trace_len",
    "mean_trace_entropy",
    "mean_reward",
    "mean_clipped_reward",
    "degenerate_frac",
    "forced_end_frac",
    "mean_answer_logprob",
    "format_loss",
    "eval_answer_logprob",
];

pub const ANALYSIS_COLUMNS: [&str; 5] = ["token_id", "position", "baseline_entropy", "bucket", "prob_ratio"];

/// Fixed split point added to the quartile edges.
pub const MEDIAN_SPLIT_EDGE: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_trace_len: f64,
    pub median_trace_len: f64,
    pub mean_trace_entropy: f64,
    pub mean_reward: f64,
    pub mean_clipped_reward: f64,
    pub degenerate_frac: f64,
    pub forced_end_frac: f64,
    pub mean_answer_logprob: f64,
    pub format_loss: f64,
    pub eval_answer_logprob: f64,
}

impl MetricsRow {
    /// Values in [`COLUMNS`] order, step excluded.
    pub fn values(&self) -> [f64; 10] {
        [
            self.mean_trace_len,
            self.median_trace_len,
            self.mean_trace_entropy,
            self.mean_reward,
            self.mean_clipped_reward,
            self.degenerate_frac,
            self.forced_end_frac,
            self.mean_answer_logprob,
            self.format_loss,
            self.eval_answer_logprob,
        ]
    }
}

/// Builds the row for one step from its rollouts alone.
pub fn record_step(step: u64, items: &[BatchItem], eval_answer_logprob: f64) -> MetricsRow {
    let mut lengths = Vec::new();
    let mut entropy = math::CompensatedSum::new();
    let mut decisions = 0usize;
    let mut reward = math::CompensatedSum::new();
    let mut clipped = math::CompensatedSum::new();
    let mut answer = math::CompensatedSum::new();
    let mut format = math::CompensatedSum::new();
    let mut forced = 0usize;
    let mut degenerate = 0usize;
    for item in items {
        degenerate += usize::from(item.advantages.degenerate);
        for (k, t) in item.traces.iter().enumerate() {
            lengths.push(t.len() as f64);
            forced += usize::from(t.end_forced);
            for &h in &t.step_entropies {
                entropy.add(h);
            }
            decisions += t.step_entropies.len();
            reward.add(item.breakdowns[k].reward);
            clipped.add(item.advantages.clipped[k]);
            answer.add(item.conditionals[k].answer_log_prob());
            format.add(item.format_losses[k]);
        }
    }
    let n = lengths.len().max(1) as f64;
    MetricsRow {
        step,
        mean_trace_len: math::mean(&lengths),
        median_trace_len: math::median(&lengths),
        mean_trace_entropy: if decisions == 0 { 0.0 } else { entropy.value() / decisions as f64 },
        mean_reward: reward.value() / n,
        mean_clipped_reward: clipped.value() / n,
        degenerate_frac: degenerate as f64 / items.len().max(1) as f64,
        forced_end_frac: forced as f64 / n,
        mean_answer_logprob: answer.value() / n,
        format_loss: format.value() / n,
        eval_answer_logprob,
    }
}

/// How the trained policy's answer probabilities are conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// Always the empty trace.
    Empty,
    /// Mean over `k` traces sampled from the trained policy.
    Sampled { k: usize, max_len: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenRecord {
    pub pair_index: usize,
    pub token_id: Token,
    pub position: usize,
    pub baseline_entropy: f64,
    pub bucket: usize,
    pub prob_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenProbAnalysis {
    pub records: Vec<TokenRecord>,
    /// Ascending; bucket `b` holds entropies with exactly `b` edges below them.
    pub edges: Vec<f64>,
    pub bucket_counts: Vec<usize>,
    pub bucket_mean_ratio: Vec<f64>,
    pub median_baseline_entropy: f64,
}

impl TokenProbAnalysis {
    /// Mean ratio of the highest-entropy nonempty bucket.
    pub fn top_bucket_ratio(&self) -> Option<f64> {
        let b = self.bucket_counts.iter().rposition(|&c| c > 0)?;
        Some(self.bucket_mean_ratio[b])
    }
}

/// Quartiles of `values` plus [`MEDIAN_SPLIT_EDGE`], sorted and deduplicated.
pub fn bucket_edges(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges = alloc::vec![MEDIAN_SPLIT_EDGE];
    if !sorted.is_empty() {
        for q in [0.25, 0.5, 0.75] {
            edges.push(math::quantile_sorted(&sorted, q));
        }
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    edges
}

pub fn bucket_of(edges: &[f64], h: f64) -> usize {
    edges.iter().filter(|&&e| e < h).count()
}

/// For every answer token of `pairs`: the reference policy's empty-trace
/// entropy and probability, and the ratio of the trained policy's
/// (trace-conditioned) probability to that reference probability.
pub fn token_prob_analysis(
    trained: &PolicyParameters,
    reference: &PolicyParameters,
    pairs: &[QAPair],
    mode: TraceMode,
) -> Result<TokenProbAnalysis> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut records = Vec::new();
    for (pi, pair) in pairs.iter().enumerate() {
        let mut ctx = policy::answer_prefix(&pair.question, &[]);
        let mut base_h = Vec::with_capacity(pair.answer.len());
        let mut base_p = Vec::with_capacity(pair.answer.len());
        for &y in &pair.answer {
            let d = policy::forward(reference, &ctx)?;
            base_h.push(d.entropy());
            base_p.push(d.probs[y as usize]);
            ctx.push(y);
        }
        let trained_p: Vec<f64> = match mode {
            TraceMode::Empty => rewards::conditional_probs(trained, &pair.question, &[], &pair.answer)?
                .probs()
                .to_vec(),
            TraceMode::Sampled { k, max_len, seed } => {
                let mut sums = alloc::vec![0.0; pair.answer.len()];
                for j in 0..k {
                    let id = rng::stream_id(seed, &[rng::tag::ANALYSIS, pi as u64, j as u64]);
                    let t = policy::sample_trace(trained, &pair.question, max_len, 1.0, id)?;
                    let c = rewards::conditional_probs(trained, &pair.question, &t.tokens, &pair.answer)?;
                    for (s, p) in sums.iter_mut().zip(c.probs()) {
                        *s += p;
                    }
                }
                sums.iter().map(|s| s / k.max(1) as f64).collect()
            }
        };
        for (i, &y) in pair.answer.iter().enumerate() {
            records.push(TokenRecord {
                pair_index: pi,
                token_id: y,
                position: i,
                baseline_entropy: base_h[i],
                bucket: 0,
                prob_ratio: trained_p[i] / base_p[i],
            });
        }
    }
    let entropies: Vec<f64> = records.iter().map(|r| r.baseline_entropy).collect();
    let edges = bucket_edges(&entropies);
    let nb = edges.len() + 1;
    let mut bucket_counts = alloc::vec![0usize; nb];
    let mut sums = alloc::vec![0.0; nb];
    for r in &mut records {
        r.bucket = bucket_of(&edges, r.baseline_entropy);
        bucket_counts[r.bucket] += 1;
        sums[r.bucket] += r.prob_ratio;
    }
    let bucket_mean_ratio = sums
        .iter()
        .zip(&bucket_counts)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect();
    let mut sorted = entropies;
    sorted.sort_by(f64::total_cmp);
    Ok(TokenProbAnalysis {
        records,
        edges,
        bucket_counts,
        bucket_mean_ratio,
        median_baseline_entropy: math::median(&sorted),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_skewed_difficulty, TaskSpec, Vocabulary};
    use crate::estimator::BatchItem;
    use crate::policy::{sample_trace, Architecture};
    use crate::rewards::Scheme;

    fn end_policy(vocab: usize, end_logit: f64) -> PolicyParameters {
        let mut p = PolicyParameters::zeros(Architecture::Tabular { vocab, order: 1 });
        for row in 0..vocab {
            p.theta_mut()[row * vocab + Vocabulary::END_THINK as usize] = end_logit;
        }
        p
    }

    fn items(p: &PolicyParameters, scheme: Scheme) -> Vec<BatchItem> {
        let vocab = Vocabulary::new(6).unwrap();
        (0..4)
            .map(|i| {
                let pair = QAPair::new(&vocab, alloc::vec![4 + i, 5], alloc::vec![6, 7]).unwrap();
                let traces = (0..8)
                    .map(|k| sample_trace(p, &pair.question, 4, 1.0, (i * 8 + k) as u64).unwrap())
                    .collect();
                let base = rewards::baseline_probs(p, &pair.question, &pair.answer).unwrap();
                BatchItem::build(i as usize, pair, traces, p, base, scheme).unwrap()
            })
            .collect()
    }

    #[test]
    fn immediate_end_gives_zero_length() {
        let p = end_policy(10, 1000.0);
        let row = record_step(3, &items(&p, Scheme::Gm), -1.0);
        assert_eq!(row.step, 3);
        assert_eq!(row.mean_trace_len, 0.0);
        assert_eq!(row.median_trace_len, 0.0);
        assert_eq!(row.forced_end_frac, 0.0);
        assert!(row.mean_trace_entropy < 1e-12);
        // every trace is empty, so every group ties
        assert_eq!(row.degenerate_frac, 1.0);
        assert_eq!(row.eval_answer_logprob, -1.0);
    }

    #[test]
    fn uniform_trace_policy_has_log_six_entropy() {
        // alphabet 5 plus END gives 6 trace choices; END is suppressed only by
        // the forced cap, so every decision is uniform over the six.
        let p = PolicyParameters::zeros(Architecture::Tabular { vocab: 9, order: 1 });
        let row = record_step(1, &items(&p, Scheme::Am), 0.0);
        assert!((row.mean_trace_entropy - libm::log(6.0)).abs() < 1e-12);
        assert!(row.forced_end_frac > 0.0 && row.forced_end_frac < 1.0);
        assert!(row.mean_trace_len > 0.0);
    }

    #[test]
    fn identity_analysis_gives_unit_ratios() {
        let spec = TaskSpec::skewed(5, 2, 2, 5, 3);
        let (_, d) = generate_skewed_difficulty(&spec, 40).unwrap();
        let p = PolicyParameters::init_uniform(Architecture::Neural { vocab: 9, embed: 4, hidden: 6, window: 4 }, 0.5, 1);
        let a = token_prob_analysis(&p, &p, &d.pairs, TraceMode::Empty).unwrap();
        assert!(a.records.iter().all(|r| r.prob_ratio == 1.0));
        assert_eq!(a.bucket_counts.iter().sum::<usize>(), a.records.len());
        assert_eq!(a.records.len(), 40 * 3);
    }

    #[test]
    fn bucket_edges_include_split_and_quartiles() {
        let e = bucket_edges(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e, alloc::vec![0.125, 1.0, 2.0, 3.0]);
        assert_eq!(bucket_of(&e, 0.0), 0);
        assert_eq!(bucket_of(&e, 1.0), 1);
        assert_eq!(bucket_of(&e, 3.5), 4);
        assert!(analysis_rejects_empty());
    }

    fn analysis_rejects_empty() -> bool {
        let p = PolicyParameters::zeros(Architecture::Tabular { vocab: 6, order: 1 });
        token_prob_analysis(&p, &p, &[], TraceMode::Empty) == Err(Error::EmptyDataset)
    }
}
