//! Release-gate property suite behind `nrt verify`.

use nrt_core::advantage::{self, RewardGroup};
use nrt_core::corpus::Vocabulary;
use nrt_core::oracle::{self, EnumerationSpec};
use nrt_core::policy::{self, Architecture, GradientAccumulator, PolicyParameters};
use nrt_core::rewards::{self, BaselineProbs, ConditionalProbs, Scheme};
use nrt_core::rng;
use nrt_core::QAPair;
use rand::Rng;

/// Seed of every random draw in the suite.
pub const VERIFY_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(name: &'static str, passed: bool, detail: String) -> PropertyResult {
    PropertyResult { name, passed, detail }
}

fn architectures() -> [Architecture; 2] {
    [
        Architecture::Tabular { vocab: 7, order: 2 },
        Architecture::Neural { vocab: 7, embed: 4, hidden: 6, window: 3 },
    ]
}

fn random_context(rng: &mut rng::StreamRng, vocab: usize, max_len: usize) -> Vec<u32> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
}

fn random_probs(rng: &mut rng::StreamRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(0.02..0.98)).collect()
}

pub fn normalization() -> PropertyResult {
    let mut rng = rng::stream(VERIFY_SEED, &[1]);
    let mut worst = 0.0f64;
    for arch in architectures() {
        for i in 0..500 {
            let p = PolicyParameters::init_uniform(arch, 2.0, i);
            let ctx = random_context(&mut rng, arch.vocab_size(), 6);
            let d = policy::forward(&p, &ctx).expect("forward");
            worst = worst.max((d.probs.iter().sum::<f64>() - 1.0).abs());
        }
    }
    result("forward distributions sum to one", worst <= 1e-9, format!("max |sum - 1| = {worst:.2e}"))
}

pub fn grad_log_prob_matches_differences() -> PropertyResult {
    let mut rng = rng::stream(VERIFY_SEED, &[2]);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for arch in architectures() {
        for i in 0..20 {
            let mut p = PolicyParameters::init_uniform(arch, 1.0, 100 + i);
            let prefix = random_context(&mut rng, arch.vocab_size(), 4);
            let body: Vec<u32> = (0..3).map(|_| rng.random_range(0..arch.vocab_size() as u32)).collect();
            let mut g = GradientAccumulator::for_params(&p);
            policy::grad_log_prob(&p, &prefix, &body, &[1.0; 3], &mut g).expect("grad");
            for j in 0..p.len() {
                let keep = p.theta()[j];
                p.theta_mut()[j] = keep + h;
                let up = policy::sequence_log_prob(&p, &prefix, &body).expect("lp").0;
                p.theta_mut()[j] = keep - h;
                let down = policy::sequence_log_prob(&p, &prefix, &body).expect("lp").0;
                p.theta_mut()[j] = keep;
                let numeric = (up - down) / (2.0 * h);
                let err = (g.grad[j] - numeric).abs() / numeric.abs().max(g.grad[j].abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
    }
    result("grad log-prob matches central differences", worst <= 1e-4, format!("max relative error {worst:.2e}"))
}

pub fn token_signals_match_differences() -> PropertyResult {
    let mut rng = rng::stream(VERIFY_SEED, &[3]);
    let mut worst = 0.0f64;
    for scheme in Scheme::ALL {
        for _ in 0..100 {
            let t = rng.random_range(1..6);
            let c = random_probs(&mut rng, t);
            let base = BaselineProbs::from_probs(&random_probs(&mut rng, t));
            let err = rewards::numeric_signal_check(scheme, &c, Some(&base)).expect("signal check");
            worst = worst.max(err);
        }
    }
    result("token signals match central differences", worst <= 1e-6, format!("max absolute error {worst:.2e}"))
}

pub fn am_gm_inequality() -> PropertyResult {
    let mut rng = rng::stream(VERIFY_SEED, &[4]);
    let mut violations = 0;
    for _ in 0..1000 {
        let t = rng.random_range(1..8);
        let c = ConditionalProbs::from_probs(random_probs(&mut rng, t));
        let gm = rewards::aggregate(Scheme::Gm, &c, None).expect("gm").reward;
        let am = rewards::aggregate(Scheme::Am, &c, None).expect("am").reward;
        if gm > am * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    result("geometric mean never exceeds arithmetic mean", violations == 0, format!("{violations} violations in 1000 draws"))
}

pub fn closed_form_identities() -> PropertyResult {
    let mut rng = rng::stream(VERIFY_SEED, &[5]);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let t = rng.random_range(1..7);
        let raw = random_probs(&mut rng, t);
        let c = ConditionalProbs::from_probs(raw.clone());
        let tf = t as f64;
        let p = rewards::aggregate(Scheme::P, &c, None).expect("p");
        let logp = rewards::aggregate(Scheme::LogP, &c, None).expect("logp");
        let gm = rewards::aggregate(Scheme::Gm, &c, None).expect("gm");
        let am = rewards::aggregate(Scheme::Am, &c, None).expect("am");
        let ws_inv = rewards::aggregate(Scheme::WsInv, &c, Some(&BaselineProbs::from_probs(&raw))).expect("ws");
        let uniform: Vec<f64> = vec![1.0 / tf; t];
        let (ws_uniform, ws_uniform_signals) = rewards::weighted_sum(&raw, &uniform).expect("ws");
        for s in &p.signals {
            worst = worst.max((s.ln() - p.reward.ln()).abs());
        }
        for s in &logp.signals {
            worst = worst.max((s - 1.0).abs());
        }
        worst = worst.max((gm.reward.ln() - p.reward.ln() / tf).abs());
        worst = worst.max((ws_uniform.ln() - am.reward.ln()).abs());
        for (a, b) in ws_uniform_signals.iter().zip(&am.signals) {
            worst = worst.max((a.ln() - b.ln()).abs());
        }
        worst = worst.max((ws_inv.reward.ln() - tf.ln()).abs());
    }
    result("closed-form scheme identities", worst <= 1e-12, format!("max log-domain deviation {worst:.2e}"))
}

pub fn advantage_contract() -> PropertyResult {
    let mut rng = rng::stream(VERIFY_SEED, &[6]);
    let mut failures = 0;
    for i in 0..10_000 {
        let k = rng.random_range(2..17);
        let tie = rng.random_bool(0.1);
        let rewards: Vec<f64> = if tie {
            vec![rng.random_range(-1.0..1.0); k]
        } else {
            (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let group = RewardGroup { prompt_id: i, rewards, baseline: rng.random_range(-1.0..0.5) };
        let a = advantage::advantages(&group).expect("advantages");
        let mut ok = a.clipped.iter().all(|&r| r >= 0.0);
        if a.degenerate {
            ok &= a.advantages.iter().all(|&x| x == 0.0);
        } else {
            let kf = k as f64;
            let mean = a.advantages.iter().sum::<f64>() / kf;
            let sd = (a.advantages.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / kf).sqrt();
            ok &= mean.abs() <= 1e-9 && (sd - 1.0).abs() <= 1e-6;
            for x in 0..k {
                for y in 0..k {
                    if a.clipped[x] < a.clipped[y] {
                        ok &= a.advantages[x] < a.advantages[y];
                    }
                }
            }
        }
        failures += usize::from(!ok);
    }
    result("advantage clipping and normalization contract", failures == 0, format!("{failures} failing groups of 10000"))
}

fn oracle_fixture(max_len: usize) -> (EnumerationSpec, PolicyParameters) {
    let vocab = Vocabulary::new(3).expect("vocab");
    let pair = QAPair::new(&vocab, vec![4, 6], vec![5, 4]).expect("pair");
    let spec = EnumerationSpec::new(&vocab, pair, Scheme::Gm, max_len).expect("spec");
    let p = PolicyParameters::init_uniform(Architecture::Tabular { vocab: 7, order: 2 }, 1.0, VERIFY_SEED);
    (spec, p)
}

pub fn trace_event_completeness() -> PropertyResult {
    let mut worst = 0.0f64;
    for max_len in 1..=3 {
        let (spec, p) = oracle_fixture(max_len);
        let report = oracle::enumerate_objective(&spec, &p).expect("enumerate");
        worst = worst.max((report.mass - 1.0).abs());
    }
    result("trace events carry total probability one", worst <= 1e-8, format!("max |mass - 1| = {worst:.2e}"))
}

pub fn expected_gradient_matches_differences() -> PropertyResult {
    let (spec, p) = oracle_fixture(2);
    let analytic = oracle::analytic_expected_gradient(&spec, &p).expect("analytic");
    let numeric = oracle::exact_gradient(&spec, &p, 1e-5).expect("numeric");
    let worst = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    result("expected objective gradient matches differences", worst <= 1e-7, format!("max absolute error {worst:.2e}"))
}

pub fn run_all() -> Vec<PropertyResult> {
    vec![
        normalization(),
        grad_log_prob_matches_differences(),
        token_signals_match_differences(),
        am_gm_inequality(),
        closed_form_identities(),
        advantage_contract(),
        trace_event_completeness(),
        expected_gradient_matches_differences(),
    ]
}
