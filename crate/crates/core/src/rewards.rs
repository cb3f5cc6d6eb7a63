//! Intrinsic rewards: per-token answer probabilities, aggregation schemes,
//! trace rewards `R = f(c)` and token reward signals `S_i = c_i · ∂f/∂c_i`.

use alloc::collections::BTreeMap;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::math;
use crate::policy::{self, PolicyParameters};

/// Floor applied to baseline probabilities; bounds inverse weights at 1e6.
pub const BASELINE_FLOOR: f64 = 1e-6;

/// Returned as the LOGP reward when some `c_i` is exactly zero.
pub const LOGP_SENTINEL: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// `Σ log c_j`
    LogP,
    /// `Π c_j`
    P,
    /// `(Π c_j)^(1/T)`
    Gm,
    /// `(1/T) Σ c_j`
    Am,
    /// `Σ c_j / c_base,j`
    WsInv,
    /// `-Σ c_j log c_base,j`
    WsNegLog,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::LogP,
        Scheme::P,
        Scheme::Gm,
        Scheme::Am,
        Scheme::WsInv,
        Scheme::WsNegLog,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::LogP => "logp",
            Scheme::P => "p",
            Scheme::Gm => "gm",
            Scheme::Am => "am",
            Scheme::WsInv => "ws_inv",
            Scheme::WsNegLog => "ws_neglog",
        }
    }

    pub fn needs_baseline(&self) -> bool {
        matches!(self, Scheme::WsInv | Scheme::WsNegLog)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

/// `c_i = π(y*_i | x, z, y*_<i)`, kept alongside its logarithm so products
/// and geometric means never leave log space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalProbs {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl ConditionalProbs {
    pub fn from_log_probs(log_probs: Vec<f64>) -> Self {
        let probs = log_probs.iter().map(|&l| math::exp(l)).collect();
        Self { probs, log_probs }
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        let log_probs = probs.iter().map(|&p| math::ln(p)).collect();
        Self { probs, log_probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// `log π(y* | x, z)`.
    pub fn answer_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Empty-trace answer probabilities under the sampling snapshot, floored at
/// [`BASELINE_FLOOR`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineProbs {
    probs: Vec<f64>,
}

impl BaselineProbs {
    pub fn from_probs(raw: &[f64]) -> Self {
        Self { probs: raw.iter().map(|&p| p.clamp(BASELINE_FLOOR, 1.0)).collect() }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Reward and per-token signals for one (trace, answer) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    pub scheme: Scheme,
    pub reward: f64,
    pub signals: Vec<f64>,
    /// Token weights; present for the weighted-sum schemes only.
    pub weights: Option<Vec<f64>>,
    /// Set when LOGP hit a zero probability and returned the sentinel.
    pub sentinel: bool,
}

/// Exact answer probabilities in the context `x · START · z · END · y*_<i`.
pub fn conditional_probs(
    policy: &PolicyParameters,
    question: &[Token],
    trace: &[Token],
    answer: &[Token],
) -> Result<ConditionalProbs> {
    let prefix = policy::answer_prefix(question, trace);
    let (_, per) = policy::sequence_log_prob(policy, &prefix, answer)?;
    Ok(ConditionalProbs::from_log_probs(per))
}

/// Empty-trace answer probabilities under `snapshot`, floored.
pub fn baseline_probs(
    snapshot: &PolicyParameters,
    question: &[Token],
    answer: &[Token],
) -> Result<BaselineProbs> {
    let c = conditional_probs(snapshot, question, &[], answer)?;
    Ok(BaselineProbs::from_probs(c.probs()))
}

/// Baselines keyed by pair id, valid for one snapshot version.
#[derive(Debug, Clone, Default)]
pub struct BaselineCache {
    version: u64,
    entries: BTreeMap<usize, BaselineProbs>,
}

impl BaselineCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Returns the cached baseline for `pair_id`, recomputing it only when
    /// missing or when `version` differs from the cached snapshot version.
    pub fn get_or_compute(
        &mut self,
        version: u64,
        pair_id: usize,
        snapshot: &PolicyParameters,
        question: &[Token],
        answer: &[Token],
    ) -> Result<&BaselineProbs> {
        if version != self.version {
            self.entries.clear();
            self.version = version;
        }
        if !self.entries.contains_key(&pair_id) {
            let b = baseline_probs(snapshot, question, answer)?;
            self.entries.insert(pair_id, b);
        }
        Ok(&self.entries[&pair_id])
    }
}

/// `R = Σ w_j c_j`, `S_i = w_i c_i`.
pub fn weighted_sum(c: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    if c.len() != weights.len() {
        return Err(Error::LengthMismatch { expected: c.len(), found: weights.len() });
    }
    let signals: Vec<f64> = c.iter().zip(weights).map(|(c, w)| c * w).collect();
    Ok((signals.iter().sum(), signals))
}

fn ws_weights(scheme: Scheme, base: &BaselineProbs) -> Vec<f64> {
    match scheme {
        Scheme::WsInv => base.probs().iter().map(|b| 1.0 / b).collect(),
        Scheme::WsNegLog => base.probs().iter().map(|&b| -math::ln(b)).collect(),
        _ => unreachable!("not a weighted-sum scheme"),
    }
}

/// Closed-form trace reward and token signals for `scheme`.
pub fn aggregate(
    scheme: Scheme,
    c: &ConditionalProbs,
    base: Option<&BaselineProbs>,
) -> Result<RewardBreakdown> {
    let t = c.len();
    let tf = t as f64;
    let mut sentinel = false;
    let mut weights = None;
    let (reward, signals) = match scheme {
        Scheme::LogP => {
            if c.probs().iter().any(|&p| p <= 0.0) {
                sentinel = true;
                (LOGP_SENTINEL, alloc::vec![1.0; t])
            } else {
                (c.answer_log_prob(), alloc::vec![1.0; t])
            }
        }
        Scheme::P => {
            let r = math::exp(c.answer_log_prob());
            (r, alloc::vec![r; t])
        }
        Scheme::Gm => {
            let r = math::exp(c.answer_log_prob() / tf);
            (r, alloc::vec![r / tf; t])
        }
        Scheme::Am => {
            let signals: Vec<f64> = c.probs().iter().map(|p| p / tf).collect();
            (signals.iter().sum(), signals)
        }
        Scheme::WsInv | Scheme::WsNegLog => {
            let base = base.ok_or(Error::MissingBaseline(scheme))?;
            if base.len() != t {
                return Err(Error::LengthMismatch { expected: t, found: base.len() });
            }
            let w = ws_weights(scheme, base);
            let (r, s) = weighted_sum(c.probs(), &w)?;
            weights = Some(w);
            (r, s)
        }
    };
    Ok(RewardBreakdown { scheme, reward, signals, weights, sentinel })
}

/// `f(c)` evaluated directly from raw probabilities; used as the
/// finite-difference target for the signal check.
pub fn reward_value(scheme: Scheme, c: &[f64], base: Option<&BaselineProbs>) -> Result<f64> {
    let tf = c.len() as f64;
    Ok(match scheme {
        Scheme::LogP => c.iter().map(|&p| math::ln(p)).sum(),
        Scheme::P => c.iter().product(),
        Scheme::Gm => libm::pow(c.iter().product::<f64>(), 1.0 / tf),
        Scheme::Am => c.iter().sum::<f64>() / tf,
        Scheme::WsInv | Scheme::WsNegLog => {
            let base = base.ok_or(Error::MissingBaseline(scheme))?;
            let w = ws_weights(scheme, base);
            c.iter().zip(&w).map(|(c, w)| c * w).sum()
        }
    })
}

/// Max over `i` of `|S_i − c_i · (f(c + h e_i) − f(c − h e_i)) / 2h|`, `h = 1e-6`.
pub fn numeric_signal_check(scheme: Scheme, c: &[f64], base: Option<&BaselineProbs>) -> Result<f64> {
    const H: f64 = 1e-6;
    let analytic = aggregate(scheme, &ConditionalProbs::from_probs(c.to_vec()), base)?;
    let mut worst = 0.0f64;
    let mut probe = c.to_vec();
    for i in 0..c.len() {
        probe[i] = c[i] + H;
        let up = reward_value(scheme, &probe, base)?;
        probe[i] = c[i] - H;
        let down = reward_value(scheme, &probe, base)?;
        probe[i] = c[i];
        let numeric = c[i] * (up - down) / (2.0 * H);
        worst = worst.max((analytic.signals[i] - numeric).abs());
    }
    Ok(worst)
}
