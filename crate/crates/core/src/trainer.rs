//! The training loop.
//!
//! Each step draws `B` prompts, samples `K` traces per prompt from the
//! sampling snapshot `π_old`, takes baselines from `π_old` and rewards from
//! the current θ, forms group advantages, then runs `passes` shuffled
//! mini-batch epochs over the `B·K` trajectories with one optimizer update
//! per mini-batch. `π_old` is re-synced every `sync_period` steps.
//!
//! All randomness comes from counter-based streams keyed by the seed and the
//! step number, so resuming needs only the step counter.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::corpus::{Dataset, QAPair};
use crate::error::{Error, Result};
use crate::estimator::{self, BatchItem, EstimatorConfig, LossReport, TraceWeight};
use crate::metrics::{self, MetricsRow};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::policy::{self, Architecture, GradientAccumulator, PolicyParameters};
use crate::rewards::{self, BaselineCache, Scheme};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub scheme: Scheme,
    pub k: usize,
    pub batch_size: usize,
    pub minibatch_size: usize,
    pub passes: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub lambda_format: f64,
    pub max_trace_len: usize,
    pub temperature: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    pub steps: u64,
    pub seed: u64,
    /// In training steps.
    pub sync_period: u64,
    pub eval_period: u64,
    /// Traces per held-out pair when evaluating answer likelihood.
    pub eval_traces: usize,
    pub ratio_on_token_term: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Gm,
            k: 8,
            batch_size: 8,
            minibatch_size: 64,
            passes: 2,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            lambda_format: 0.3,
            max_trace_len: 8,
            temperature: 1.0,
            clip_low: 0.2,
            clip_high: 0.28,
            steps: 2000,
            seed: 0,
            sync_period: 1,
            eval_period: 50,
            eval_traces: 8,
            ratio_on_token_term: false,
        }
    }
}

pub const CONFIG_KEYS: [&str; 18] = [
    "scheme",
    "k",
    "batch_size",
    "minibatch_size",
    "passes",
    "lr",
    "optimizer",
    "lambda_format",
    "max_trace_len",
    "temperature",
    "clip_low",
    "clip_high",
    "steps",
    "seed",
    "sync_period",
    "eval_period",
    "eval_traces",
    "ratio_on_token_term",
];

fn parse_num<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

impl TrainingConfig {
    /// Defaults with the learning rate suited to `arch`.
    pub fn for_architecture(arch: &Architecture) -> Self {
        let lr = match arch {
            Architecture::Tabular { .. } => 1e-2,
            Architecture::Neural { .. } => 1e-3,
        };
        Self { lr, ..Self::default() }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "scheme" => self.scheme = v.parse()?,
            "k" => self.k = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "minibatch_size" => self.minibatch_size = parse_num(key, v)?,
            "passes" => self.passes = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "lambda_format" => self.lambda_format = parse_num(key, v)?,
            "max_trace_len" => self.max_trace_len = parse_num(key, v)?,
            "temperature" => self.temperature = parse_num(key, v)?,
            "clip_low" => self.clip_low = parse_num(key, v)?,
            "clip_high" => self.clip_high = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "sync_period" => self.sync_period = parse_num(key, v)?,
            "eval_period" => self.eval_period = parse_num(key, v)?,
            "eval_traces" => self.eval_traces = parse_num(key, v)?,
            "ratio_on_token_term" => self.ratio_on_token_term = parse_num(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "scheme" => self.scheme.name().to_string(),
            "k" => self.k.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "minibatch_size" => self.minibatch_size.to_string(),
            "passes" => self.passes.to_string(),
            "lr" => format!("{:?}", self.lr),
            "optimizer" => self.optimizer.name().to_string(),
            "lambda_format" => format!("{:?}", self.lambda_format),
            "max_trace_len" => self.max_trace_len.to_string(),
            "temperature" => format!("{:?}", self.temperature),
            "clip_low" => format!("{:?}", self.clip_low),
            "clip_high" => format!("{:?}", self.clip_high),
            "steps" => self.steps.to_string(),
            "seed" => self.seed.to_string(),
            "sync_period" => self.sync_period.to_string(),
            "eval_period" => self.eval_period.to_string(),
            "eval_traces" => self.eval_traces.to_string(),
            "ratio_on_token_term" => self.ratio_on_token_term.to_string(),
            _ => return None,
        })
    }

    /// `key = value` lines in [`CONFIG_KEYS`] order.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for key in CONFIG_KEYS {
            s.push_str(key);
            s.push_str(" = ");
            s.push_str(&self.get(key).unwrap_or_default());
            s.push('\n');
        }
        s
    }

    /// FNV-1a over the canonical text minus `steps`, which only sets how far
    /// a run goes and so may change across a resume.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for line in self.canonical_text().lines().filter(|l| !l.starts_with("steps ")) {
            for b in line.bytes().chain(core::iter::once(b'\n')) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be positive");
        }
        if self.minibatch_size < 1 || self.minibatch_size > self.batch_size * self.k {
            return bad("minibatch_size must lie in [1, batch_size * k]");
        }
        if self.passes < 1 {
            return bad("passes must be positive");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad("lr must be finite and nonnegative");
        }
        if !(self.lambda_format >= 0.0) {
            return bad("lambda_format must be nonnegative");
        }
        if self.max_trace_len < 1 {
            return bad("max_trace_len must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.clip_low >= 0.0 && self.clip_low < 1.0) || !(self.clip_high >= 0.0) {
            return bad("clip ratios must satisfy 0 <= clip_low < 1 and clip_high >= 0");
        }
        if self.sync_period < 1 || self.eval_period < 1 {
            return bad("periods must be positive");
        }
        if self.eval_traces < 1 {
            return bad("eval_traces must be positive");
        }
        Ok(())
    }

    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            clip_low: self.clip_low,
            clip_high: self.clip_high,
            lambda_format: self.lambda_format,
            ratio_on_token_term: self.ratio_on_token_term,
            trace_weight: TraceWeight::ClippedAdvantage,
        }
    }
}

/// Positions into the train split for the `batch` prompts of `step`
/// (1-based). Prompts are read in a seeded order that is reshuffled each
/// time the split wraps around.
pub fn prompt_schedule(seed: u64, stream_tag: u64, train_len: usize, step: u64, batch: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for b in 0..batch {
        let g = (step - 1) * batch as u64 + b as u64;
        let epoch = g / train_len as u64;
        let pos = (g % train_len as u64) as usize;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..train_len).collect();
            perm.shuffle(&mut rng::stream(seed, &[stream_tag, epoch]));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().unwrap().1[pos]);
    }
    out
}

/// Mean `log π(y*|x,z)` over held-out pairs, `k` sampled traces each. The
/// trace streams do not depend on the step, so successive evaluations share
/// their random numbers.
pub fn evaluate_answer_logprob(
    policy: &PolicyParameters,
    pairs: &[QAPair],
    k: usize,
    max_len: usize,
    seed: u64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = crate::math::CompensatedSum::new();
    for (i, pair) in pairs.iter().enumerate() {
        for j in 0..k {
            let id = rng::stream_id(seed, &[tag::EVAL, i as u64, j as u64]);
            let t = policy::sample_trace(policy, &pair.question, max_len, 1.0, id)?;
            let c = rewards::conditional_probs(policy, &pair.question, &t.tokens, &pair.answer)?;
            total.add(c.answer_log_prob());
        }
    }
    Ok(total.value() / (pairs.len() * k) as f64)
}

/// Mean `log π(y*|x, ∅)` over `pairs`.
pub fn empty_trace_answer_logprob(policy: &PolicyParameters, pairs: &[QAPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = crate::math::CompensatedSum::new();
    for pair in pairs {
        total.add(rewards::conditional_probs(policy, &pair.question, &[], &pair.answer)?.answer_log_prob());
    }
    Ok(total.value() / pairs.len() as f64)
}

/// Gradient of the mean over `pairs` of `−log π(y*|x,∅) + λ L_format(∅)`,
/// with the loss value.
pub fn supervised_gradient(
    policy: &PolicyParameters,
    pairs: &[&QAPair],
    lambda_format: f64,
) -> Result<(GradientAccumulator, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut out = GradientAccumulator::for_params(policy);
    let mut loss = 0.0;
    for pair in pairs {
        let prefix = policy::answer_prefix(&pair.question, &[]);
        let w = alloc::vec![-scale; pair.answer.len()];
        policy::grad_log_prob(policy, &prefix, &pair.answer, &w, &mut out)?;
        let (lp, _) = policy::sequence_log_prob(policy, &prefix, &pair.answer)?;
        loss -= scale * lp;
        if lambda_format != 0.0 {
            estimator::accumulate_format_grad(policy, &pair.question, &[], scale * lambda_format, &mut out)?;
        }
        loss += scale * lambda_format * estimator::format_loss(policy, &pair.question, &[])?;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite { step: 0, context: "supervised gradient".to_string() });
    }
    Ok((out, loss))
}

/// Answer-only training with empty traces; produces the reference policy.
pub fn supervised_warmup(
    mut policy: PolicyParameters,
    dataset: &Dataset,
    steps: u64,
    batch: usize,
    lr: f64,
    lambda_format: f64,
    seed: u64,
) -> Result<PolicyParameters> {
    let train = dataset.train_indices();
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = OptimizerState::new(OptimizerKind::Adam, policy.len());
    for step in 1..=steps {
        let picks = prompt_schedule(seed, tag::WARMUP, train.len(), step, batch);
        let pairs: Vec<&QAPair> = picks.iter().map(|&i| &dataset.pairs[train.start + i]).collect();
        let (g, _) = supervised_gradient(&policy, &pairs, lambda_format)?;
        opt.apply(&mut policy, &g, lr)?;
    }
    Ok(policy)
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub step: u64,
    pub policy: PolicyParameters,
    pub old_policy: PolicyParameters,
    pub snapshot_version: u64,
    pub optimizer: OptimizerState,
    /// Last held-out answer log-likelihood, carried between evaluations.
    pub last_eval: f64,
    /// Identifies the trace stream of the next step.
    pub rng_digest: u64,
    pub config_digest: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub row: MetricsRow,
    /// Loss values averaged over the step's mini-batches.
    pub report: LossReport,
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainingConfig,
    policy: PolicyParameters,
    old_policy: PolicyParameters,
    snapshot_version: u64,
    optimizer: OptimizerState,
    baselines: BaselineCache,
    step: u64,
    last_eval: f64,
}

fn rng_digest(seed: u64, step: u64) -> u64 {
    rng::stream_id(seed, &[tag::TRACE, step + 1])
}

impl Trainer {
    pub fn new(config: TrainingConfig, init: PolicyParameters) -> Result<Self> {
        config.validate()?;
        init.architecture().validate()?;
        let optimizer = OptimizerState::new(config.optimizer, init.len());
        Ok(Self {
            config,
            old_policy: policy::snapshot(&init),
            policy: init,
            snapshot_version: 0,
            optimizer,
            baselines: BaselineCache::new(),
            step: 0,
            last_eval: f64::NAN,
        })
    }

    pub fn resume(config: TrainingConfig, record: CheckpointRecord) -> Result<Self> {
        config.validate()?;
        if record.config_digest != config.digest() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint config digest {:016x} does not match {:016x}",
                record.config_digest,
                config.digest()
            )));
        }
        if record.rng_digest != rng_digest(config.seed, record.step) {
            return Err(Error::InvalidConfig("checkpoint rng digest does not match seed and step".to_string()));
        }
        if record.policy.architecture() != record.old_policy.architecture()
            || record.optimizer.kind != config.optimizer
        {
            return Err(Error::InvalidConfig("inconsistent checkpoint state".to_string()));
        }
        Ok(Self {
            config,
            policy: record.policy,
            old_policy: record.old_policy,
            snapshot_version: record.snapshot_version,
            optimizer: record.optimizer,
            baselines: BaselineCache::new(),
            step: record.step,
            last_eval: record.last_eval,
        })
    }

    pub fn checkpoint(&self) -> CheckpointRecord {
        CheckpointRecord {
            step: self.step,
            policy: self.policy.clone(),
            old_policy: self.old_policy.clone(),
            snapshot_version: self.snapshot_version,
            optimizer: self.optimizer.clone(),
            last_eval: self.last_eval,
            rng_digest: rng_digest(self.config.seed, self.step),
            config_digest: self.config.digest(),
        }
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn policy(&self) -> &PolicyParameters {
        &self.policy
    }

    pub fn old_policy(&self) -> &PolicyParameters {
        &self.old_policy
    }

    pub fn snapshot_version(&self) -> u64 {
        self.snapshot_version
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn into_policy(self) -> PolicyParameters {
        self.policy
    }

    /// `π_old ← θ`; baselines cached under the old version become stale.
    pub fn sync_old_policy(&mut self) {
        self.old_policy = policy::snapshot(&self.policy);
        self.snapshot_version += 1;
    }

    /// Samples and scores the rollouts of step `step`.
    pub fn rollout(&mut self, dataset: &Dataset, step: u64) -> Result<Vec<BatchItem>> {
        let train = dataset.train_indices();
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let cfg = &self.config;
        let picks = prompt_schedule(cfg.seed, tag::BATCH, train.len(), step, cfg.batch_size);
        let mut items = Vec::with_capacity(picks.len());
        for (slot, &pos) in picks.iter().enumerate() {
            let pair_id = train.start + pos;
            let pair = &dataset.pairs[pair_id];
            let mut traces = Vec::with_capacity(cfg.k);
            for k in 0..cfg.k {
                let id = rng::stream_id(cfg.seed, &[tag::TRACE, step, slot as u64, k as u64]);
                traces.push(policy::sample_trace(
                    &self.old_policy,
                    &pair.question,
                    cfg.max_trace_len,
                    cfg.temperature,
                    id,
                )?);
            }
            let base = self
                .baselines
                .get_or_compute(self.snapshot_version, pair_id, &self.old_policy, &pair.question, &pair.answer)?
                .clone();
            items.push(BatchItem::build(pair_id, pair.clone(), traces, &self.policy, base, cfg.scheme)?);
        }
        Ok(items)
    }

    /// Runs one full step. On error the trainer keeps its pre-step state.
    pub fn step(&mut self, dataset: &Dataset) -> Result<StepOutput> {
        let step = self.step + 1;
        let with_step = |e: Error| match e {
            Error::NonFinite { context, .. } => Error::NonFinite { step, context },
            other => other,
        };
        let items = self.rollout(dataset, step).map_err(with_step)?;
        let est = self.config.estimator();
        let mut policy = self.policy.clone();
        let mut optimizer = self.optimizer.clone();
        let mut all: Vec<(usize, usize)> =
            (0..items.len()).flat_map(|i| (0..items[i].k()).map(move |k| (i, k))).collect();
        let mut report = LossReport { lambda_format: est.lambda_format, ..LossReport::default() };
        let mut batches = 0usize;
        for pass in 0..self.config.passes {
            all.shuffle(&mut rng::stream(self.config.seed, &[tag::SHUFFLE, step, pass as u64]));
            for chunk in all.chunks(self.config.minibatch_size) {
                let (g, r) = estimator::minibatch_gradient(&items, chunk, &policy, &est).map_err(with_step)?;
                optimizer.apply(&mut policy, &g, self.config.lr).map_err(with_step)?;
                report.trace_term += r.trace_term;
                report.token_term += r.token_term;
                report.format_term += r.format_term;
                report.total += r.total;
                report.clip_fraction += r.clip_fraction;
                report.samples += r.samples;
                batches += 1;
            }
        }
        let nb = batches as f64;
        report.trace_term /= nb;
        report.token_term /= nb;
        report.format_term /= nb;
        report.total /= nb;
        report.clip_fraction /= nb;

        self.policy = policy;
        self.optimizer = optimizer;
        self.step = step;
        if step % self.config.sync_period == 0 {
            self.sync_old_policy();
        }
        if step == 1 || step % self.config.eval_period == 0 {
            self.last_eval = evaluate_answer_logprob(
                &self.policy,
                dataset.eval(),
                self.config.eval_traces,
                self.config.max_trace_len,
                self.config.seed,
            )?;
        }
        let row = metrics::record_step(step, &items, self.last_eval);
        Ok(StepOutput { row, report, items })
    }

    /// Steps until `target` steps have been taken, reporting every row.
    pub fn run_until(
        &mut self,
        dataset: &Dataset,
        target: u64,
        mut on_row: impl FnMut(&MetricsRow),
    ) -> Result<()> {
        while self.step < target {
            let out = self.step(dataset)?;
            on_row(&out.row);
        }
        Ok(())
    }
}

/// Trains from `init` for `config.steps` steps.
pub fn train(
    config: TrainingConfig,
    dataset: &Dataset,
    init: PolicyParameters,
) -> Result<(PolicyParameters, Vec<MetricsRow>)> {
    if dataset.train_indices().is_empty() {
        return Err(Error::EmptyDataset);
    }
    let steps = config.steps;
    let mut trainer = Trainer::new(config, init)?;
    let mut rows = Vec::with_capacity(steps as usize);
    trainer.run_until(dataset, steps, |r| rows.push(*r))?;
    Ok((trainer.into_policy(), rows))
}

#[cfg(test)]
mod tests;
