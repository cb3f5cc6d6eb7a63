//! Exact objective by enumerating every trace event, exact gradients by
//! central differences on it, and a z-test of the single-trace estimator.
//!
//! Events partition the trace space: for lengths `ℓ < L` the policy stops by
//! choosing `END_THINK`, and at `ℓ = L` the end is forced. The baseline
//! probabilities are held fixed at the unperturbed policy throughout, as they
//! come from the sampling snapshot during training.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{QAPair, Token, Vocabulary};
use crate::error::{Error, Result};
use crate::estimator::{self, BatchItem, EstimatorConfig};
use crate::math::{self, CompensatedSum};
use crate::policy::{self, GradientAccumulator, PolicyParameters, TraceSample};
use crate::rewards::{self, BaselineProbs, Scheme};
use crate::rng::{self, tag};

pub const ENUMERATION_LIMIT: u128 = 1_000_000;
/// Comparisons with fewer samples are reported but not judged.
pub const MIN_JUDGED_SAMPLES: usize = 1000;
pub const Z_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationSpec {
    pub max_len: usize,
    pub alphabet: Vec<Token>,
    pub pair: QAPair,
    pub scheme: Scheme,
}

impl EnumerationSpec {
    /// Spec over the full trace alphabet of `vocab`.
    pub fn new(vocab: &Vocabulary, pair: QAPair, scheme: Scheme, max_len: usize) -> Result<Self> {
        let spec = Self { max_len, alphabet: vocab.trace_alphabet().collect(), pair, scheme };
        spec.check()?;
        Ok(spec)
    }

    pub fn event_count(&self) -> u128 {
        event_count(self.alphabet.len(), self.max_len)
    }

    pub fn check(&self) -> Result<()> {
        if self.max_len < 1 {
            return Err(Error::InvalidConfig("max trace length must be positive".into()));
        }
        if self.alphabet.iter().any(|&t| Vocabulary::is_reserved(t)) {
            return Err(Error::InvalidConfig("trace alphabet may not contain delimiters".into()));
        }
        let events = self.event_count();
        if events > ENUMERATION_LIMIT {
            return Err(Error::EnumerationBound { events, limit: ENUMERATION_LIMIT });
        }
        Ok(())
    }
}

/// `Σ_{ℓ<L} A^ℓ + A^L`, saturating.
pub fn event_count(alphabet: usize, max_len: usize) -> u128 {
    let a = alphabet as u128;
    let mut total: u128 = 0;
    let mut pow: u128 = 1;
    for _ in 0..max_len {
        total = total.saturating_add(pow);
        pow = pow.saturating_mul(a);
    }
    total.saturating_add(pow)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub tokens: Vec<Token>,
    pub end_forced: bool,
    pub log_prob: f64,
    pub token_log_probs: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactObjectiveReport {
    pub objective: f64,
    pub mass: f64,
    pub events: usize,
    pub contributions: Vec<TraceEvent>,
}

fn walk(
    spec: &EnumerationSpec,
    policy: &PolicyParameters,
    base: &BaselineProbs,
    prefix: &mut Vec<Token>,
    per: &mut Vec<f64>,
    lp: f64,
    visit: &mut dyn FnMut(TraceEvent) -> Result<()>,
) -> Result<()> {
    let pair = &spec.pair;
    let reward = |z: &[Token]| -> Result<f64> {
        let c = rewards::conditional_probs(policy, &pair.question, z, &pair.answer)?;
        Ok(rewards::aggregate(spec.scheme, &c, Some(base))?.reward)
    };
    if prefix.len() == spec.max_len {
        return visit(TraceEvent {
            tokens: prefix.clone(),
            end_forced: true,
            log_prob: lp,
            token_log_probs: per.clone(),
            reward: reward(prefix)?,
        });
    }
    let mut ctx = policy::trace_prefix(&pair.question);
    ctx.extend_from_slice(prefix);
    let dist = policy::trace_step_distribution(policy, &ctx)?;
    let end_lp = dist.log_probs[Vocabulary::END_THINK as usize];
    let mut stop_per = per.clone();
    stop_per.push(end_lp);
    visit(TraceEvent {
        tokens: prefix.clone(),
        end_forced: false,
        log_prob: lp + end_lp,
        token_log_probs: stop_per,
        reward: reward(prefix)?,
    })?;
    for &a in &spec.alphabet {
        let step_lp = dist.log_probs[a as usize];
        prefix.push(a);
        per.push(step_lp);
        walk(spec, policy, base, prefix, per, lp + step_lp, visit)?;
        prefix.pop();
        per.pop();
    }
    Ok(())
}

/// Visits every event in depth-first order.
pub fn for_each_event(
    spec: &EnumerationSpec,
    policy: &PolicyParameters,
    base: &BaselineProbs,
    mut visit: impl FnMut(TraceEvent) -> Result<()>,
) -> Result<()> {
    spec.check()?;
    walk(spec, policy, base, &mut Vec::new(), &mut Vec::new(), 0.0, &mut visit)
}

/// The empty-trace baseline of `policy` for the spec's pair.
pub fn spec_baseline(spec: &EnumerationSpec, policy: &PolicyParameters) -> Result<BaselineProbs> {
    rewards::baseline_probs(policy, &spec.pair.question, &spec.pair.answer)
}

/// `J = Σ_z π(z|x) R(z)` with the given fixed baseline.
pub fn enumerate_objective_with_baseline(
    spec: &EnumerationSpec,
    policy: &PolicyParameters,
    base: &BaselineProbs,
    keep_contributions: bool,
) -> Result<ExactObjectiveReport> {
    let mut j = CompensatedSum::new();
    let mut mass = CompensatedSum::new();
    let mut events = 0usize;
    let mut contributions = Vec::new();
    for_each_event(spec, policy, base, |e| {
        let p = math::exp(e.log_prob);
        j.add(p * e.reward);
        mass.add(p);
        events += 1;
        if keep_contributions {
            contributions.push(e);
        }
        Ok(())
    })?;
    Ok(ExactObjectiveReport { objective: j.value(), mass: mass.value(), events, contributions })
}

pub fn enumerate_objective(spec: &EnumerationSpec, policy: &PolicyParameters) -> Result<ExactObjectiveReport> {
    let base = spec_baseline(spec, policy)?;
    enumerate_objective_with_baseline(spec, policy, &base, false)
}

/// Central differences of `J` per coordinate, baseline fixed at `policy`.
pub fn exact_gradient(spec: &EnumerationSpec, policy: &PolicyParameters, h: f64) -> Result<Vec<f64>> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::InvalidConfig(format!("step {h} outside [1e-7, 1e-3]")));
    }
    let base = spec_baseline(spec, policy)?;
    let mut q = policy.clone();
    let mut grad = vec![0.0; policy.len()];
    for i in 0..policy.len() {
        let orig = q.theta()[i];
        q.theta_mut()[i] = orig + h;
        let up = enumerate_objective_with_baseline(spec, &q, &base, false)?.objective;
        q.theta_mut()[i] = orig - h;
        let down = enumerate_objective_with_baseline(spec, &q, &base, false)?.objective;
        q.theta_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { step: 0, context: format!("objective at coordinate {i}") });
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

fn event_sample(e: &TraceEvent) -> TraceSample {
    TraceSample {
        tokens: e.tokens.clone(),
        token_log_probs: e.token_log_probs.clone(),
        log_prob: e.log_prob,
        end_forced: e.end_forced,
        stream_id: 0,
        step_entropies: Vec::new(),
    }
}

/// `Σ_z π(z) [R ∇log π(z) + Σ_i S_i ∇log c_i]`, assembled analytically.
pub fn analytic_expected_gradient(spec: &EnumerationSpec, policy: &PolicyParameters) -> Result<Vec<f64>> {
    let base = spec_baseline(spec, policy)?;
    let mut acc = GradientAccumulator::for_params(policy);
    for_each_event(spec, policy, &base, |e| {
        let c = rewards::conditional_probs(policy, &spec.pair.question, &e.tokens, &spec.pair.answer)?;
        let b = rewards::aggregate(spec.scheme, &c, Some(&base))?;
        let w = math::exp(e.log_prob);
        estimator::accumulate_objective_term(policy, &spec.pair, &event_sample(&e), &b, w, &mut acc)
    })?;
    Ok(acc.grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorComparison {
    pub samples: usize,
    pub exact: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub z: Vec<f64>,
    pub max_abs_z: f64,
    /// Coordinates whose estimate never varied; these are compared exactly.
    pub zero_se_coordinates: usize,
    pub judged: bool,
}

impl EstimatorComparison {
    pub fn passes(&self) -> bool {
        self.judged && self.max_abs_z < Z_THRESHOLD
    }

    /// Fixed-order `key value` lines.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("samples {}\n", self.samples));
        s.push_str(&format!("coordinates {}\n", self.exact.len()));
        s.push_str(&format!("zero_se_coordinates {}\n", self.zero_se_coordinates));
        s.push_str(&format!("max_abs_z {:.6}\n", self.max_abs_z));
        s.push_str(&format!("judged {}\n", self.judged));
        s.push_str(&format!("pass {}\n", self.passes()));
        s
    }
}

/// Draws `n` single-trace estimates on-policy with the unclipped raw-reward
/// estimator and z-scores their mean against [`exact_gradient`].
pub fn compare_estimator(
    spec: &EnumerationSpec,
    policy: &PolicyParameters,
    n: usize,
    seed: u64,
) -> Result<EstimatorComparison> {
    spec.check()?;
    let exact = exact_gradient(spec, policy, 1e-5)?;
    let base = spec_baseline(spec, policy)?;
    let cfg = EstimatorConfig::unbiased();
    let dim = policy.len();
    let mut sum = vec![CompensatedSum::new(); dim];
    let mut sum_sq = vec![CompensatedSum::new(); dim];
    let mut acc = GradientAccumulator::for_params(policy);
    for i in 0..n {
        let id = rng::stream_id(seed, &[tag::ORACLE, i as u64]);
        let trace = policy::sample_trace(policy, &spec.pair.question, spec.max_len, 1.0, id)?;
        let item = BatchItem::build(0, spec.pair.clone(), vec![trace], policy, base.clone(), spec.scheme)?;
        acc.clear();
        estimator::nrt_gradient(&item, policy, &cfg, &mut acc)?;
        for (j, g) in acc.grad.iter().enumerate() {
            // the estimator returns a loss gradient
            let x = -g;
            sum[j].add(x);
            sum_sq[j].add(x * x);
        }
    }
    let nf = n as f64;
    let mut mean = vec![0.0; dim];
    let mut std_error = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut zero_se = 0usize;
    for j in 0..dim {
        let m = sum[j].value() / nf;
        let var = if n > 1 { ((sum_sq[j].value() - nf * m * m) / (nf - 1.0)).max(0.0) } else { 0.0 };
        let se = math::sqrt(var / nf);
        mean[j] = m;
        std_error[j] = se;
        if se > 1e-12 * (1.0 + m.abs()) {
            z[j] = (m - exact[j]) / se;
        } else {
            zero_se += 1;
            z[j] = if (m - exact[j]).abs() <= 1e-7 { 0.0 } else { f64::INFINITY };
        }
    }
    let max_abs_z = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(EstimatorComparison {
        samples: n,
        exact,
        mean,
        std_error,
        z,
        max_abs_z,
        zero_se_coordinates: zero_se,
        judged: n >= MIN_JUDGED_SAMPLES,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Architecture;

    fn fixture(order: usize, scheme: Scheme, max_len: usize, seed: u64) -> (EnumerationSpec, PolicyParameters) {
        let vocab = Vocabulary::new(3).unwrap();
        let pair = QAPair::new(&vocab, vec![4, 6], vec![5, 4]).unwrap();
        let spec = EnumerationSpec::new(&vocab, pair, scheme, max_len).unwrap();
        let p = PolicyParameters::init_uniform(Architecture::Tabular { vocab: 7, order }, 1.0, seed);
        (spec, p)
    }

    #[test]
    fn event_counts() {
        assert_eq!(event_count(3, 2), 1 + 3 + 9);
        assert_eq!(event_count(2, 2), 1 + 2 + 4);
        assert_eq!(event_count(1, 4), 5);
        let (mut spec, _) = fixture(1, Scheme::Gm, 2, 0);
        spec.max_len = 20;
        assert!(matches!(spec.check(), Err(Error::EnumerationBound { .. })));
    }

    #[test]
    fn mass_is_one() {
        for seed in 0..10 {
            let (spec, p) = fixture(2, Scheme::Am, 3, seed);
            let r = enumerate_objective(&spec, &p).unwrap();
            assert!((r.mass - 1.0).abs() < 1e-12);
            assert_eq!(r.events as u128, spec.event_count());
        }
    }

    #[test]
    fn certain_end_gives_empty_trace_reward() {
        let (spec, mut p) = fixture(2, Scheme::Gm, 2, 1);
        for row in 0..49 {
            p.theta_mut()[row * 7 + 1] = 1e4;
        }
        let r = enumerate_objective(&spec, &p).unwrap();
        let c = rewards::conditional_probs(&p, &spec.pair.question, &[], &spec.pair.answer).unwrap();
        let want = rewards::aggregate(Scheme::Gm, &c, None).unwrap().reward;
        assert_eq!(r.objective, want);
        assert_eq!(r.mass, 1.0);
    }

    #[test]
    fn trace_independent_answer_head_collapses_expectation() {
        // Order 1: answer tokens only see the previous token, never the trace.
        for seed in 0..5 {
            let (spec, p) = fixture(1, Scheme::Am, 2, seed);
            let r = enumerate_objective(&spec, &p).unwrap();
            let c = rewards::conditional_probs(&p, &spec.pair.question, &[], &spec.pair.answer).unwrap();
            let want = rewards::aggregate(Scheme::Am, &c, None).unwrap().reward;
            assert!((r.objective - want).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_reward_has_zero_gradient() {
        let (spec, mut p) = fixture(1, Scheme::Gm, 2, 3);
        // answer rows saturate on the reference answer
        p.theta_mut()[1 * 7 + 5] = 60.0;
        p.theta_mut()[5 * 7 + 4] = 60.0;
        let g = exact_gradient(&spec, &p, 1e-4).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn enumeration_order_does_not_matter() {
        let (spec, p) = fixture(2, Scheme::WsNegLog, 3, 4);
        let mut rev = spec.clone();
        rev.alphabet.reverse();
        let a = enumerate_objective(&spec, &p).unwrap().objective;
        let b = enumerate_objective(&rev, &p).unwrap().objective;
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
    }

    #[test]
    fn step_size_bounds() {
        let (spec, p) = fixture(2, Scheme::Gm, 2, 0);
        assert!(exact_gradient(&spec, &p, 1e-2).is_err());
        assert!(exact_gradient(&spec, &p, 1e-9).is_err());
    }

    #[test]
    fn halving_step_shrinks_error_quadratically() {
        let (spec, p) = fixture(2, Scheme::P, 2, 5);
        let g1 = exact_gradient(&spec, &p, 1e-3).unwrap();
        let g2 = exact_gradient(&spec, &p, 5e-4).unwrap();
        let g3 = exact_gradient(&spec, &p, 2.5e-4).unwrap();
        let mut checked = 0;
        for i in 0..g1.len() {
            let d1 = (g1[i] - g2[i]).abs();
            let d2 = (g2[i] - g3[i]).abs();
            if d1 > 1e-11 {
                let ratio = d1 / d2;
                assert!((3.0..5.0).contains(&ratio), "coord {i}: ratio {ratio}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn analytic_matches_numeric_gradient() {
        for scheme in Scheme::ALL {
            for order in [1, 2] {
                let (spec, p) = fixture(order, scheme, 2, 6);
                let num = exact_gradient(&spec, &p, 1e-5).unwrap();
                let ana = analytic_expected_gradient(&spec, &p).unwrap();
                for (a, n) in ana.iter().zip(&num) {
                    let err = (a - n).abs();
                    assert!(err <= 1e-4 * a.abs().max(n.abs()) || err <= 1e-8, "{scheme}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn small_comparisons_are_not_judged() {
        let (spec, p) = fixture(2, Scheme::Gm, 2, 7);
        let c = compare_estimator(&spec, &p, 10, 1).unwrap();
        assert!(!c.judged);
        assert!(!c.passes());
        assert_eq!(c.samples, 10);
        assert!(c.report_text().starts_with("samples 10\n"));
    }

    #[test]
    fn estimator_is_unbiased_on_small_fixture() {
        let (spec, p) = fixture(2, Scheme::Am, 2, 8);
        let c = compare_estimator(&spec, &p, 20_000, 3).unwrap();
        assert!(c.passes(), "max |z| {}", c.max_abs_z);
    }
}
