//! Loss gradient for one training step.
//!
//! Per trajectory `k` of a prompt the loss gradient is
//!
//! ```text
//! −A_k ∇log π(z_k|x)                    (clipped surrogate on the ratio r_k)
//! −Σ_i S_ik ∇log π(y*_i | x, z_k, y*_<i)  (token signals are constants)
//! +λ ∇L_format
//! ```
//!
//! averaged over trajectories. In [`TraceWeight::RawReward`] mode the trace
//! term uses `r_k R(z_k)` unclipped and both terms carry `r_k`, which is the
//! unbiased form the oracle checks against.

use alloc::format;
use alloc::vec::Vec;

use crate::advantage::{self, AdvantageGroup, RewardGroup};
use crate::corpus::{QAPair, Token, Vocabulary};
use crate::error::{Error, Result};
use crate::math;
use crate::policy::{self, GradientAccumulator, PolicyParameters, TraceSample};
use crate::rewards::{self, BaselineProbs, ConditionalProbs, RewardBreakdown, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceWeight {
    /// `min(r A, clip(r) A)` with group advantages.
    ClippedAdvantage,
    /// `r R(z)`, no clipping, ratio on both terms.
    RawReward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub clip_low: f64,
    pub clip_high: f64,
    pub lambda_format: f64,
    pub ratio_on_token_term: bool,
    pub trace_weight: TraceWeight,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            clip_low: 0.2,
            clip_high: 0.28,
            lambda_format: 0.3,
            ratio_on_token_term: false,
            trace_weight: TraceWeight::ClippedAdvantage,
        }
    }
}

impl EstimatorConfig {
    /// Unclipped raw-reward estimator without format supervision.
    pub fn unbiased() -> Self {
        Self {
            clip_low: f64::INFINITY,
            clip_high: f64::INFINITY,
            lambda_format: 0.0,
            ratio_on_token_term: true,
            trace_weight: TraceWeight::RawReward,
        }
    }
}

/// One prompt with its `K` rollouts and everything computed from them.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub pair_id: usize,
    pub pair: QAPair,
    pub traces: Vec<TraceSample>,
    /// Answer probabilities given each trace, under θ at rollout time.
    pub conditionals: Vec<ConditionalProbs>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub baseline: BaselineProbs,
    pub baseline_reward: f64,
    pub advantages: AdvantageGroup,
    /// `L_format` per trajectory at rollout time.
    pub format_losses: Vec<f64>,
}

impl BatchItem {
    /// Scores `traces` under `policy` (current θ) against `baseline`
    /// (computed from the sampling snapshot) and forms group advantages.
    pub fn build(
        pair_id: usize,
        pair: QAPair,
        traces: Vec<TraceSample>,
        policy: &PolicyParameters,
        baseline: BaselineProbs,
        scheme: Scheme,
    ) -> Result<Self> {
        let base_c = ConditionalProbs::from_probs(baseline.probs().to_vec());
        let baseline_reward = rewards::aggregate(scheme, &base_c, Some(&baseline))?.reward;
        let mut conditionals = Vec::with_capacity(traces.len());
        let mut breakdowns = Vec::with_capacity(traces.len());
        let mut format_losses = Vec::with_capacity(traces.len());
        for t in &traces {
            let c = rewards::conditional_probs(policy, &pair.question, &t.tokens, &pair.answer)?;
            breakdowns.push(rewards::aggregate(scheme, &c, Some(&baseline))?);
            conditionals.push(c);
            format_losses.push(format_loss(policy, &pair.question, &t.tokens)?);
        }
        let group = RewardGroup {
            prompt_id: pair_id,
            rewards: breakdowns.iter().map(|b| b.reward).collect(),
            baseline: baseline_reward,
        };
        let advantages = if traces.len() >= 2 {
            advantage::advantages(&group)?
        } else {
            let clipped = advantage::clip_rewards(&group);
            AdvantageGroup { advantages: alloc::vec![0.0; clipped.len()], clipped, degenerate: true }
        };
        Ok(Self {
            pair_id,
            pair,
            traces,
            conditionals,
            breakdowns,
            baseline,
            baseline_reward,
            advantages,
            format_losses,
        })
    }

    pub fn k(&self) -> usize {
        self.traces.len()
    }
}

/// Loss values and diagnostics for a gradient computation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub trace_term: f64,
    pub token_term: f64,
    /// Mean `L_format`, before the `λ` weight.
    pub format_term: f64,
    pub lambda_format: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub samples: usize,
}

/// Value of `min(r A, clip(r, 1−lo, 1+hi) A)` and the weight `w` such that
/// its gradient is `w ∇log π(z|x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogate {
    pub value: f64,
    pub grad_weight: f64,
    pub clipped: bool,
}

pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_low: f64, clip_high: f64) -> Surrogate {
    let unclipped = ratio * advantage;
    let bounded = ratio.clamp(1.0 - clip_low, 1.0 + clip_high) * advantage;
    if unclipped <= bounded {
        Surrogate { value: unclipped, grad_weight: unclipped, clipped: false }
    } else {
        Surrogate { value: bounded, grad_weight: 0.0, clipped: true }
    }
}

/// `π_θ(z|x) / π_old(z|x)`, computed in log space.
pub fn importance_ratio(
    theta: &PolicyParameters,
    old: &PolicyParameters,
    question: &[Token],
    trace: &TraceSample,
) -> Result<f64> {
    let (new_lp, _) = policy::trace_log_prob(theta, question, &trace.tokens, trace.end_forced)?;
    let (old_lp, _) = policy::trace_log_prob(old, question, &trace.tokens, trace.end_forced)?;
    Ok(math::exp(new_lp - old_lp))
}

/// `−log π(START | x) − log π(END | x, START, z)` under the full softmax.
pub fn format_loss(policy: &PolicyParameters, question: &[Token], trace: &[Token]) -> Result<f64> {
    let (start_lp, _) = policy::sequence_log_prob(policy, question, &[Vocabulary::START_THINK])?;
    let prefix = policy::trace_prefix(question);
    let mut ctx = prefix;
    ctx.extend_from_slice(trace);
    let (end_lp, _) = policy::sequence_log_prob(policy, &ctx, &[Vocabulary::END_THINK])?;
    Ok(-start_lp - end_lp)
}

/// Adds `weight · ∇L_format` into `out`.
pub fn accumulate_format_grad(
    policy: &PolicyParameters,
    question: &[Token],
    trace: &[Token],
    weight: f64,
    out: &mut GradientAccumulator,
) -> Result<()> {
    let samples = out.samples;
    policy::grad_log_prob(policy, question, &[Vocabulary::START_THINK], &[-weight], out)?;
    let mut ctx = policy::trace_prefix(question);
    ctx.extend_from_slice(trace);
    policy::grad_log_prob(policy, &ctx, &[Vocabulary::END_THINK], &[-weight], out)?;
    out.samples = samples;
    Ok(())
}

/// Adds `weight · (R ∇log π(z|x) + Σ_i S_i ∇log π(y*_i | x, z, y*_<i))`,
/// the per-trace term of the objective gradient, into `out`.
pub fn accumulate_objective_term(
    policy: &PolicyParameters,
    pair: &QAPair,
    trace: &TraceSample,
    breakdown: &RewardBreakdown,
    weight: f64,
    out: &mut GradientAccumulator,
) -> Result<()> {
    policy::grad_trace_log_prob(
        policy,
        &pair.question,
        &trace.tokens,
        trace.end_forced,
        weight * breakdown.reward,
        out,
    )?;
    accumulate_token_term(policy, pair, &trace.tokens, &breakdown.signals, weight, out)?;
    Ok(())
}

/// Adds `weight · Σ_i S_i ∇log π(y*_i | x·START·z·END·y*_<i)`.
pub fn accumulate_token_term(
    policy: &PolicyParameters,
    pair: &QAPair,
    trace: &[Token],
    signals: &[f64],
    weight: f64,
    out: &mut GradientAccumulator,
) -> Result<()> {
    let prefix = policy::answer_prefix(&pair.question, trace);
    let w: Vec<f64> = signals.iter().map(|s| weight * s).collect();
    let samples = out.samples;
    policy::grad_log_prob(policy, &prefix, &pair.answer, &w, out)?;
    out.samples = samples;
    Ok(())
}

struct TrajectoryTerms {
    trace: f64,
    token: f64,
    format: f64,
    clipped: bool,
}

fn accumulate_trajectory(
    item: &BatchItem,
    k: usize,
    policy: &PolicyParameters,
    cfg: &EstimatorConfig,
    include_format: bool,
    scale: f64,
    out: &mut GradientAccumulator,
) -> Result<TrajectoryTerms> {
    let pair = &item.pair;
    let trace = &item.traces[k];
    let breakdown = &item.breakdowns[k];
    let (lp_theta, _) = policy::trace_log_prob(policy, &pair.question, &trace.tokens, trace.end_forced)?;
    let ratio = math::exp(lp_theta - trace.log_prob);

    let (trace_loss, trace_weight, clipped) = match cfg.trace_weight {
        TraceWeight::ClippedAdvantage => {
            let s = clipped_surrogate(ratio, item.advantages.advantages[k], cfg.clip_low, cfg.clip_high);
            (-s.value, s.grad_weight, s.clipped)
        }
        TraceWeight::RawReward => {
            let w = ratio * breakdown.reward;
            (-w, w, false)
        }
    };
    policy::grad_trace_log_prob(
        policy,
        &pair.question,
        &trace.tokens,
        trace.end_forced,
        -scale * trace_weight,
        out,
    )?;

    let token_ratio = match cfg.trace_weight {
        TraceWeight::RawReward => ratio,
        TraceWeight::ClippedAdvantage if cfg.ratio_on_token_term => ratio,
        TraceWeight::ClippedAdvantage => 1.0,
    };
    let c_now = rewards::conditional_probs(policy, &pair.question, &trace.tokens, &pair.answer)?;
    let token_loss = -token_ratio
        * breakdown
            .signals
            .iter()
            .zip(c_now.log_probs())
            .map(|(s, lp)| s * lp)
            .sum::<f64>();
    accumulate_token_term(policy, pair, &trace.tokens, &breakdown.signals, -scale * token_ratio, out)?;

    let mut format = 0.0;
    if include_format {
        format = format_loss(policy, &pair.question, &trace.tokens)?;
        if cfg.lambda_format != 0.0 {
            accumulate_format_grad(policy, &pair.question, &trace.tokens, scale * cfg.lambda_format, out)?;
        }
    }
    out.samples += 1;
    Ok(TrajectoryTerms { trace: trace_loss, token: token_loss, format, clipped })
}

fn check_finite(out: &GradientAccumulator, what: &str) -> Result<()> {
    if let Some(i) = out.grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            context: format!("{what}: gradient coordinate {i} is {}", out.grad[i]),
        });
    }
    Ok(())
}

/// Gradient over an arbitrary selection of `(item, k)` trajectories,
/// averaged over the selection. Used for PPO-style mini-batches.
pub fn minibatch_gradient(
    items: &[BatchItem],
    selection: &[(usize, usize)],
    policy: &PolicyParameters,
    cfg: &EstimatorConfig,
) -> Result<(GradientAccumulator, LossReport)> {
    if selection.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut out = GradientAccumulator::for_params(policy);
    let scale = 1.0 / selection.len() as f64;
    let mut report = LossReport { lambda_format: cfg.lambda_format, ..LossReport::default() };
    let mut clipped = 0usize;
    for &(i, k) in selection {
        let t = accumulate_trajectory(&items[i], k, policy, cfg, true, scale, &mut out)?;
        report.trace_term += scale * t.trace;
        report.token_term += scale * t.token;
        report.format_term += scale * t.format;
        clipped += usize::from(t.clipped);
    }
    report.samples = selection.len();
    report.clip_fraction = clipped as f64 / selection.len() as f64;
    report.total = report.trace_term + report.token_term + cfg.lambda_format * report.format_term;
    check_finite(&out, "minibatch")?;
    Ok((out, report))
}

/// Trace and token terms for one prompt, averaged over its `K` traces.
pub fn nrt_gradient(
    item: &BatchItem,
    policy: &PolicyParameters,
    cfg: &EstimatorConfig,
    out: &mut GradientAccumulator,
) -> Result<LossReport> {
    let k_total = item.k();
    if k_total == 0 {
        return Err(Error::EmptyBatch);
    }
    let scale = 1.0 / k_total as f64;
    let mut report = LossReport { lambda_format: cfg.lambda_format, ..LossReport::default() };
    let mut clipped = 0usize;
    for k in 0..k_total {
        let t = accumulate_trajectory(item, k, policy, cfg, false, scale, out)?;
        report.trace_term += scale * t.trace;
        report.token_term += scale * t.token;
        clipped += usize::from(t.clipped);
    }
    report.samples = k_total;
    report.clip_fraction = clipped as f64 / k_total as f64;
    report.total = report.trace_term + report.token_term;
    check_finite(out, "nrt gradient")?;
    Ok(report)
}

/// Full step gradient: NRT terms plus `λ_format` times the format loss,
/// averaged over the `K` traces of each item and over items.
pub fn total_step_gradient(
    batch: &[BatchItem],
    policy: &PolicyParameters,
    cfg: &EstimatorConfig,
) -> Result<(GradientAccumulator, LossReport)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let item_scale = 1.0 / batch.len() as f64;
    let mut out = GradientAccumulator::for_params(policy);
    let mut report = LossReport { lambda_format: cfg.lambda_format, ..LossReport::default() };
    let mut clipped = 0.0;
    for item in batch {
        let k_total = item.k();
        if k_total == 0 {
            return Err(Error::EmptyBatch);
        }
        let scale = item_scale / k_total as f64;
        for k in 0..k_total {
            let t = accumulate_trajectory(item, k, policy, cfg, true, scale, &mut out)?;
            report.trace_term += scale * t.trace;
            report.token_term += scale * t.token;
            report.format_term += scale * t.format;
            clipped += scale * f64::from(u8::from(t.clipped));
        }
        report.samples += k_total;
    }
    report.clip_fraction = clipped;
    report.total = report.trace_term + report.token_term + cfg.lambda_format * report.format_term;
    check_finite(&out, "step gradient")?;
    Ok((out, report))
}
