//! Autoregressive token policies with exact log-probabilities, sampling,
//! entropies and analytic parameter gradients.
//!
//! Two architectures share one flat parameter vector type:
//!
//! * [`Architecture::Tabular`]: one logit row per order-`n` context. Small
//!   enough to enumerate, which is what the oracle relies on.
//! * [`Architecture::Neural`]: embeddings of a fixed window, one `tanh`
//!   hidden layer and a softmax head, with hand-written backprop.
//!
//! Contexts shorter than the model's window are left-padded with `EOS`.
//!
//! Trace positions sample from the next-token distribution restricted to
//! the task symbols plus `END_THINK`; everything else (answers, format
//! tokens) uses the full softmax.

mod neural;
mod tabular;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::{Token, Vocabulary};
use crate::error::{Error, Result};
use crate::math;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Logit table indexed by the last `order` tokens.
    Tabular { vocab: usize, order: usize },
    /// Window of `window` token embeddings of width `embed`, a `tanh`
    /// hidden layer of width `hidden`, then a linear head.
    Neural { vocab: usize, embed: usize, hidden: usize, window: usize },
}

impl Architecture {
    pub fn vocab_size(&self) -> usize {
        match *self {
            Architecture::Tabular { vocab, .. } | Architecture::Neural { vocab, .. } => vocab,
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            Architecture::Tabular { vocab, order } => tabular::num_params(vocab, order),
            Architecture::Neural { vocab, embed, hidden, window } => {
                neural::Layout::new(vocab, embed, hidden, window).total
            }
        }
    }

    /// One-line descriptor, e.g. `tabular vocab=7 order=2`.
    pub fn descriptor(&self) -> String {
        match *self {
            Architecture::Tabular { vocab, order } => format!("tabular vocab={vocab} order={order}"),
            Architecture::Neural { vocab, embed, hidden, window } => {
                format!("neural vocab={vocab} embed={embed} hidden={hidden} window={window}")
            }
        }
    }

    pub fn parse_descriptor(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let mut get = |key: &str| -> Result<usize> {
            let tok = parts
                .next()
                .ok_or_else(|| Error::InvalidConfig(format!("architecture descriptor missing {key}")))?;
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("malformed descriptor field {tok:?}")))?;
            if k != key {
                return Err(Error::InvalidConfig(format!("expected {key}, found {k}")));
            }
            v.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {v:?}")))
        };
        let arch = match kind {
            "tabular" => Architecture::Tabular { vocab: get("vocab")?, order: get("order")? },
            "neural" => Architecture::Neural {
                vocab: get("vocab")?,
                embed: get("embed")?,
                hidden: get("hidden")?,
                window: get("window")?,
            },
            other => return Err(Error::InvalidConfig(format!("unknown architecture {other:?}"))),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Architecture::Tabular { vocab, order } => {
                vocab >= 1 && order >= 1 && libm::pow(vocab as f64, order as f64 + 1.0) <= 5.0e7
            }
            Architecture::Neural { vocab, embed, hidden, window } => {
                vocab >= 1 && embed >= 1 && hidden >= 1 && window >= 1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid architecture: {}", self.descriptor())))
        }
    }
}

/// Dense parameter vector plus the architecture it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    arch: Architecture,
    theta: Vec<f64>,
}

impl PolicyParameters {
    pub fn zeros(arch: Architecture) -> Self {
        Self { arch, theta: vec![0.0; arch.num_params()] }
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn init_uniform(arch: Architecture, scale: f64, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        let theta = (0..arch.num_params())
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self { arch, theta }
    }

    pub fn from_theta(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.num_params() {
            return Err(Error::DimensionMismatch { expected: arch.num_params(), found: theta.len() });
        }
        if let Some(i) = theta.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { step: 0, context: format!("parameter {i}") });
        }
        Ok(Self { arch, theta })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn vocab_size(&self) -> usize {
        self.arch.vocab_size()
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    fn check_context(&self, context: &[Token]) -> Result<()> {
        let vocab = self.vocab_size();
        match context.iter().find(|&&t| t as usize >= vocab) {
            Some(&token) => Err(Error::TokenOutOfRange { token, vocab }),
            None => Ok(()),
        }
    }

    /// Next-token logits for `context`.
    pub fn logits_into(&self, context: &[Token], out: &mut [f64]) -> Result<()> {
        self.check_context(context)?;
        debug_assert_eq!(out.len(), self.vocab_size());
        match self.arch {
            Architecture::Tabular { vocab, order } => {
                tabular::logits(&self.theta, vocab, order, context, out)
            }
            Architecture::Neural { vocab, embed, hidden, window } => {
                let layout = neural::Layout::new(vocab, embed, hidden, window);
                neural::logits(&self.theta, &layout, context, out)
            }
        }
        Ok(())
    }

    pub fn logits(&self, context: &[Token]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.vocab_size()];
        self.logits_into(context, &mut out)?;
        Ok(out)
    }

    /// Adds `∂(Σ_j dlogits_j · logit_j)/∂θ` into `grad`.
    pub(crate) fn backprop_logits(&self, context: &[Token], dlogits: &[f64], grad: &mut [f64]) {
        match self.arch {
            Architecture::Tabular { vocab, order } => {
                tabular::backprop(vocab, order, context, dlogits, grad)
            }
            Architecture::Neural { vocab, embed, hidden, window } => {
                let layout = neural::Layout::new(vocab, embed, hidden, window);
                neural::backprop(&self.theta, &layout, context, dlogits, grad)
            }
        }
    }
}

/// Deep copy used as the frozen sampling policy.
pub fn snapshot(params: &PolicyParameters) -> PolicyParameters {
    params.clone()
}

/// Probabilities and log-probabilities over the whole vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn from_logits(mut logits: Vec<f64>) -> Self {
        math::log_softmax_in_place(&mut logits);
        let probs = logits.iter().map(|&l| math::exp(l)).collect();
        Self { probs, log_probs: logits }
    }

    /// Softmax restricted to the tokens where `allowed` is true; the rest get
    /// probability 0 and log-probability `-inf`.
    pub fn from_logits_masked(logits: &[f64], allowed: impl Fn(usize) -> bool) -> Self {
        let kept: Vec<f64> = logits
            .iter()
            .enumerate()
            .filter(|(i, _)| allowed(*i))
            .map(|(_, &l)| l)
            .collect();
        let lse = math::log_sum_exp(&kept);
        let log_probs: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| if allowed(i) { l - lse } else { f64::NEG_INFINITY })
            .collect();
        let probs = log_probs.iter().map(|&l| math::exp(l)).collect();
        Self { probs, log_probs }
    }

    pub fn entropy(&self) -> f64 {
        math::entropy(&self.probs)
    }
}

pub fn forward(params: &PolicyParameters, context: &[Token]) -> Result<TokenDistribution> {
    Ok(TokenDistribution::from_logits(params.logits(context)?))
}

/// Predictive entropy in nats of the full next-token distribution.
pub fn entropy(params: &PolicyParameters, context: &[Token]) -> Result<f64> {
    Ok(forward(params, context)?.entropy())
}

fn is_trace_token(i: usize) -> bool {
    i == Vocabulary::END_THINK as usize || i >= Vocabulary::RESERVED
}

/// Distribution used at trace positions: task symbols plus `END_THINK`.
pub fn trace_step_distribution(params: &PolicyParameters, context: &[Token]) -> Result<TokenDistribution> {
    let logits = params.logits(context)?;
    Ok(TokenDistribution::from_logits_masked(&logits, is_trace_token))
}

/// Entropy of the trace-position distribution; the trace-entropy metric is
/// the mean of this over sampled positions.
pub fn trace_step_entropy(params: &PolicyParameters, context: &[Token]) -> Result<f64> {
    Ok(trace_step_distribution(params, context)?.entropy())
}

/// `log π(body | prefix)` as a total and per token.
pub fn sequence_log_prob(
    params: &PolicyParameters,
    prefix: &[Token],
    body: &[Token],
) -> Result<(f64, Vec<f64>)> {
    let mut context = Vec::with_capacity(prefix.len() + body.len());
    context.extend_from_slice(prefix);
    let mut logits = vec![0.0; params.vocab_size()];
    let mut per_token = Vec::with_capacity(body.len());
    for &tok in body {
        params.logits_into(&context, &mut logits)?;
        if tok as usize >= logits.len() {
            return Err(Error::TokenOutOfRange { token: tok, vocab: logits.len() });
        }
        per_token.push(logits[tok as usize] - math::log_sum_exp(&logits));
        context.push(tok);
    }
    Ok((per_token.iter().sum(), per_token))
}

/// Gradient buffer with the same dimension as θ.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulator {
    pub grad: Vec<f64>,
    pub samples: usize,
}

impl GradientAccumulator {
    pub fn new(dim: usize) -> Self {
        Self { grad: vec![0.0; dim], samples: 0 }
    }

    pub fn for_params(params: &PolicyParameters) -> Self {
        Self::new(params.len())
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn clear(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        self.samples = 0;
    }

    pub fn add_scaled(&mut self, other: &GradientAccumulator, scale: f64) {
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += scale * b;
        }
        self.samples += other.samples;
    }

    pub fn is_finite(&self) -> bool {
        self.grad.iter().all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.grad.iter().map(|g| g * g).sum())
    }

    fn check_dim(&self, params: &PolicyParameters) -> Result<()> {
        if self.grad.len() != params.len() {
            return Err(Error::DimensionMismatch { expected: params.len(), found: self.grad.len() });
        }
        Ok(())
    }
}

/// Accumulates `Σ_i w_i ∇θ log π(body_i | prefix, body_<i)` into `out`.
pub fn grad_log_prob(
    params: &PolicyParameters,
    prefix: &[Token],
    body: &[Token],
    weights: &[f64],
    out: &mut GradientAccumulator,
) -> Result<()> {
    if weights.len() != body.len() {
        return Err(Error::LengthMismatch { expected: body.len(), found: weights.len() });
    }
    out.check_dim(params)?;
    let mut context = Vec::with_capacity(prefix.len() + body.len());
    context.extend_from_slice(prefix);
    for (&tok, &w) in body.iter().zip(weights) {
        if tok as usize >= params.vocab_size() {
            return Err(Error::TokenOutOfRange { token: tok, vocab: params.vocab_size() });
        }
        if w != 0.0 {
            let dist = forward(params, &context)?;
            let dlogits = onehot_minus_probs(&dist.probs, tok, w);
            params.backprop_logits(&context, &dlogits, &mut out.grad);
        }
        context.push(tok);
    }
    out.samples += 1;
    Ok(())
}

/// A sampled trace. `token_log_probs` holds one entry per sampled decision:
/// each trace token, plus the `END_THINK` decision unless the end was forced.
/// Log-probabilities are under the sampling policy at temperature 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSample {
    pub tokens: Vec<Token>,
    pub token_log_probs: Vec<f64>,
    pub log_prob: f64,
    pub end_forced: bool,
    pub stream_id: u64,
    /// Entropy of the trace-position distribution at each decision.
    pub step_entropies: Vec<f64>,
}

impl TraceSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `x · START_THINK`.
pub fn trace_prefix(question: &[Token]) -> Vec<Token> {
    let mut ctx = Vec::with_capacity(question.len() + 1);
    ctx.extend_from_slice(question);
    ctx.push(Vocabulary::START_THINK);
    ctx
}

/// `x · START_THINK · z · END_THINK`, the context the answer is scored in.
pub fn answer_prefix(question: &[Token], trace: &[Token]) -> Vec<Token> {
    let mut ctx = Vec::with_capacity(question.len() + trace.len() + 2);
    ctx.extend_from_slice(question);
    ctx.push(Vocabulary::START_THINK);
    ctx.extend_from_slice(trace);
    ctx.push(Vocabulary::END_THINK);
    ctx
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples a trace after `x · START_THINK`, stopping at `END_THINK` or at
/// `max_len` tokens (then `END_THINK` is appended and `end_forced` is set).
pub fn sample_trace(
    params: &PolicyParameters,
    question: &[Token],
    max_len: usize,
    temperature: f64,
    stream_id: u64,
) -> Result<TraceSample> {
    if !(temperature > 0.0) || max_len < 1 {
        return Err(Error::InvalidConfig(format!(
            "sampling needs temperature > 0 and max_len >= 1 (got {temperature}, {max_len})"
        )));
    }
    let mut rng = rng::from_id(stream_id);
    let mut context = trace_prefix(question);
    let mut tokens = Vec::new();
    let mut token_log_probs = Vec::new();
    let mut step_entropies = Vec::new();
    let mut logits = vec![0.0; params.vocab_size()];
    let mut end_forced = true;
    while tokens.len() < max_len {
        params.logits_into(&context, &mut logits)?;
        let dist = TokenDistribution::from_logits_masked(&logits, is_trace_token);
        step_entropies.push(dist.entropy());
        let choice = if temperature == 1.0 {
            sample_index(&dist.probs, &mut rng)
        } else {
            let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
            let tempered = TokenDistribution::from_logits_masked(&scaled, is_trace_token);
            sample_index(&tempered.probs, &mut rng)
        };
        token_log_probs.push(dist.log_probs[choice]);
        if choice == Vocabulary::END_THINK as usize {
            end_forced = false;
            break;
        }
        tokens.push(choice as Token);
        context.push(choice as Token);
    }
    Ok(TraceSample {
        log_prob: token_log_probs.iter().sum(),
        tokens,
        token_log_probs,
        end_forced,
        stream_id,
        step_entropies,
    })
}

/// `log π(z | x · START_THINK)` under `params`, counting the `END_THINK`
/// decision only when the trace stopped on its own.
pub fn trace_log_prob(
    params: &PolicyParameters,
    question: &[Token],
    trace: &[Token],
    end_forced: bool,
) -> Result<(f64, Vec<f64>)> {
    let mut context = trace_prefix(question);
    let mut logits = vec![0.0; params.vocab_size()];
    let mut per = Vec::with_capacity(trace.len() + 1);
    let steps = trace.iter().copied().chain((!end_forced).then_some(Vocabulary::END_THINK));
    for tok in steps {
        if !is_trace_token(tok as usize) || tok as usize >= logits.len() {
            return Err(Error::TokenOutOfRange { token: tok, vocab: logits.len() });
        }
        params.logits_into(&context, &mut logits)?;
        let dist = TokenDistribution::from_logits_masked(&logits, is_trace_token);
        per.push(dist.log_probs[tok as usize]);
        context.push(tok);
    }
    Ok((per.iter().sum(), per))
}

/// Accumulates `weight · ∇θ log π(z | x · START_THINK)`.
pub fn grad_trace_log_prob(
    params: &PolicyParameters,
    question: &[Token],
    trace: &[Token],
    end_forced: bool,
    weight: f64,
    out: &mut GradientAccumulator,
) -> Result<()> {
    out.check_dim(params)?;
    if weight == 0.0 {
        return Ok(());
    }
    let mut context = trace_prefix(question);
    let mut logits = vec![0.0; params.vocab_size()];
    let steps = trace.iter().copied().chain((!end_forced).then_some(Vocabulary::END_THINK));
    for tok in steps {
        params.logits_into(&context, &mut logits)?;
        let dist = TokenDistribution::from_logits_masked(&logits, is_trace_token);
        let dlogits = onehot_minus_probs(&dist.probs, tok, weight);
        params.backprop_logits(&context, &dlogits, &mut out.grad);
        context.push(tok);
    }
    Ok(())
}

/// `w · (onehot(tok) − p)`: the gradient of `w · log p_tok` w.r.t. the logits.
fn onehot_minus_probs(probs: &[f64], tok: Token, w: f64) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == tok as usize { w * (1.0 - p) } else { -w * p })
        .collect()
}

/// Fills `out` with the last `width` tokens of `context`, left-padded with EOS.
pub(crate) fn window_into(context: &[Token], out: &mut [Token]) {
    let width = out.len();
    let take = context.len().min(width);
    let pad = width - take;
    out[..pad].fill(Vocabulary::EOS);
    out[pad..].copy_from_slice(&context[context.len() - take..]);
}
