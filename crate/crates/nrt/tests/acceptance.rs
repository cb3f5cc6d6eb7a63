//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::time::{Duration, Instant};

use nrt::checkpoint;
use nrt::experiments::{median, Protocol};
use nrt::run::{self, Start, CHECKPOINT_FILE, METRICS_FILE};
use nrt::sweep::{self, RunSummary};
use nrt_core::advantage::{self, RewardGroup};
use nrt_core::corpus::Vocabulary;
use nrt_core::oracle::{self, EnumerationSpec};
use nrt_core::policy::{self, Architecture, GradientAccumulator, PolicyParameters};
use nrt_core::rewards::{self, BaselineProbs, ConditionalProbs, Scheme};
use nrt_core::rng;
use nrt_core::QAPair;
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn oracle_estimator() -> Outcome {
    let vocab = Vocabulary::new(3).unwrap();
    let pair = QAPair::new(&vocab, vec![vocab.symbol(0), vocab.symbol(2)], vec![vocab.symbol(1), vocab.symbol(0)]).unwrap();
    let spec = EnumerationSpec::new(&vocab, pair, Scheme::Gm, 2).unwrap();
    let p = PolicyParameters::init_uniform(Architecture::Tabular { vocab: vocab.size(), order: 2 }, 1.0, 0);
    let mass = oracle::enumerate_objective(&spec, &p).unwrap().mass;
    let t0 = Instant::now();
    let c = oracle::compare_estimator(&spec, &p, 200_000, 0).unwrap();
    let elapsed = t0.elapsed();
    let ok = c.passes() && (mass - 1.0).abs() < 1e-10 && elapsed < Duration::from_secs(120);
    outcome(ok, format!("max |z| {:.3} over {} coordinates, {:.1}s", c.max_abs_z, c.exact.len(), elapsed.as_secs_f64()))
}

// Reward formulas written out independently of the library.
fn reward_formula(scheme: Scheme, c: &[f64], b: &[f64]) -> f64 {
    let t = c.len() as f64;
    match scheme {
        Scheme::LogP => c.iter().map(|x| x.ln()).sum(),
        Scheme::P => c.iter().product(),
        Scheme::Gm => (c.iter().map(|x| x.ln()).sum::<f64>() / t).exp(),
        Scheme::Am => c.iter().sum::<f64>() / t,
        Scheme::WsInv => c.iter().zip(b).map(|(c, b)| c / b).sum(),
        Scheme::WsNegLog => c.iter().zip(b).map(|(c, b)| -c * b.ln()).sum(),
    }
}

fn gradient_checks() -> Outcome {
    let mut r = rng::stream(11, &[2]);
    let h = 1e-5;
    let mut worst_policy = 0.0f64;
    let archs = [
        Architecture::Tabular { vocab: 8, order: 2 },
        Architecture::Neural { vocab: 8, embed: 3, hidden: 5, window: 4 },
    ];
    for arch in archs {
        for i in 0..10 {
            let mut p = PolicyParameters::init_uniform(arch, 1.0, 1000 + i);
            let prefix: Vec<u32> = (0..r.random_range(0..5)).map(|_| r.random_range(0..8)).collect();
            let body: Vec<u32> = (0..4).map(|_| r.random_range(0..8)).collect();
            let weights: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let mut g = GradientAccumulator::for_params(&p);
            policy::grad_log_prob(&p, &prefix, &body, &weights, &mut g).unwrap();
            let weighted = |p: &PolicyParameters| {
                let per = policy::sequence_log_prob(p, &prefix, &body).unwrap().1;
                per.iter().zip(&weights).map(|(l, w)| l * w).sum::<f64>()
            };
            for j in 0..p.len() {
                let keep = p.theta()[j];
                p.theta_mut()[j] = keep + h;
                let up = weighted(&p);
                p.theta_mut()[j] = keep - h;
                let down = weighted(&p);
                p.theta_mut()[j] = keep;
                let numeric = (up - down) / (2.0 * h);
                worst_policy = worst_policy.max((g.grad[j] - numeric).abs() / numeric.abs().max(1.0));
            }
        }
    }
    // Token signals are the derivative of the reward with respect to log c_t.
    let mut worst_signal = 0.0f64;
    for scheme in Scheme::ALL {
        for _ in 0..200 {
            let t = r.random_range(1..7);
            let c: Vec<f64> = (0..t).map(|_| r.random_range(0.05..0.95)).collect();
            let b: Vec<f64> = (0..t).map(|_| r.random_range(0.05..0.95)).collect();
            let base = BaselineProbs::from_probs(&b);
            let s = rewards::aggregate(scheme, &ConditionalProbs::from_probs(c.clone()), Some(&base)).unwrap().signals;
            for i in 0..t {
                let mut up = c.clone();
                let mut down = c.clone();
                up[i] = (c[i].ln() + h).exp();
                down[i] = (c[i].ln() - h).exp();
                let numeric = (reward_formula(scheme, &up, &b) - reward_formula(scheme, &down, &b)) / (2.0 * h);
                worst_signal = worst_signal.max((s[i] - numeric).abs() / numeric.abs().max(1.0));
            }
        }
    }
    let ok = worst_policy <= 1e-6 && worst_signal <= 1e-6;
    outcome(ok, format!("policy gradient rel err {worst_policy:.1e}, signal rel err {worst_signal:.1e}"))
}

fn closed_forms() -> Outcome {
    let mut r = rng::stream(11, &[3]);
    let mut worst = 0.0f64;
    let log_gap = |a: f64, b: f64| (a.ln() - b.ln()).abs();
    for _ in 0..1000 {
        let t = r.random_range(1..9);
        let c: Vec<f64> = (0..t).map(|_| r.random_range(0.01..1.0)).collect();
        let tf = t as f64;
        let cp = ConditionalProbs::from_probs(c.clone());
        let base = BaselineProbs::from_probs(&c);
        let agg = |s: Scheme| rewards::aggregate(s, &cp, Some(&base)).unwrap();
        let (p, logp, gm, am) = (agg(Scheme::P), agg(Scheme::LogP), agg(Scheme::Gm), agg(Scheme::Am));
        let prod: f64 = c.iter().product();
        worst = worst.max(log_gap(p.reward, prod));
        worst = worst.max((logp.reward - c.iter().map(|x| x.ln()).sum::<f64>()).abs());
        worst = worst.max(log_gap(gm.reward, prod.powf(1.0 / tf)));
        worst = worst.max(log_gap(am.reward, c.iter().sum::<f64>() / tf));
        for i in 0..t {
            worst = worst.max(log_gap(p.signals[i], prod));
            worst = worst.max((logp.signals[i] - 1.0).abs());
            worst = worst.max(log_gap(gm.signals[i], gm.reward / tf));
            worst = worst.max(log_gap(am.signals[i], c[i] / tf));
        }
        // At the baseline itself every inverse-probability weight times its
        // probability is one.
        worst = worst.max(log_gap(agg(Scheme::WsInv).reward, tf));
        let ws_neglog: f64 = c.iter().map(|x| -x * x.ln()).sum();
        let neglog = agg(Scheme::WsNegLog).reward;
        if ws_neglog > 0.0 {
            worst = worst.max(log_gap(neglog, ws_neglog));
        }
    }
    // Frozen hand values.
    let gm = rewards::aggregate(Scheme::Gm, &ConditionalProbs::from_probs(vec![0.25, 1.0]), None).unwrap();
    let am = rewards::aggregate(Scheme::Am, &ConditionalProbs::from_probs(vec![0.2, 0.4, 0.6]), None).unwrap();
    let frozen = (gm.reward - 0.5).abs() < 1e-15 && (gm.signals[0] - 0.25).abs() < 1e-15 && (am.reward - 0.4).abs() < 1e-15;
    outcome(worst <= 1e-12 && frozen, format!("max log-domain deviation {worst:.1e}, hand values {}", if frozen { "match" } else { "differ" }))
}

fn advantage_contract() -> Outcome {
    let mut r = rng::stream(11, &[4]);
    let mut failures = 0usize;
    let mut degenerate = 0usize;
    for i in 0..10_000 {
        let k = r.random_range(2..17);
        let rewards: Vec<f64> = if r.random_bool(0.1) {
            vec![r.random_range(-1.0..1.0); k]
        } else {
            (0..k).map(|_| r.random_range(-1.0..1.0)).collect()
        };
        let baseline = r.random_range(-1.0..0.5);
        let a = advantage::advantages(&RewardGroup { prompt_id: i, rewards: rewards.clone(), baseline }).unwrap();
        let clipped: Vec<f64> = rewards.iter().map(|x| (x - baseline).max(0.0)).collect();
        let kf = k as f64;
        let mean = clipped.iter().sum::<f64>() / kf;
        let sd = (clipped.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / kf).sqrt();
        let mut ok = a.clipped == clipped;
        if sd < 1e-8 {
            degenerate += 1;
            ok &= a.degenerate && a.advantages.iter().all(|&x| x == 0.0);
        } else {
            ok &= !a.degenerate;
            for (got, c) in a.advantages.iter().zip(&clipped) {
                ok &= (got - (c - mean) / sd).abs() <= 1e-12;
            }
            let m = a.advantages.iter().sum::<f64>() / kf;
            let s = (a.advantages.iter().map(|x| (x - m).powi(2)).sum::<f64>() / kf).sqrt();
            ok &= m.abs() <= 1e-9 && (s - 1.0).abs() <= 1e-9;
        }
        failures += usize::from(!ok);
    }
    outcome(failures == 0, format!("{failures} failing groups of 10000 ({degenerate} degenerate)"))
}

fn skewed_sweep() -> (Vec<RunSummary>, Duration) {
    let protocol = Protocol::skewed_collapse();
    let (vocab, data) = protocol.dataset().unwrap();
    let t0 = Instant::now();
    let runs = sweep::sweep(
        &protocol.run,
        &vocab,
        &data,
        &[Scheme::Am, Scheme::WsNegLog, Scheme::WsInv],
        &[0, 1, 2, 3, 4],
        None,
        "skewed",
        sweep::worker_threads(),
    )
    .unwrap();
    (runs, t0.elapsed())
}

fn of(runs: &[RunSummary], scheme: Scheme, f: impl Fn(&RunSummary) -> f64) -> f64 {
    median(&runs.iter().filter(|r| r.scheme == scheme).map(f).collect::<Vec<_>>())
}

fn collapse(runs: &[RunSummary], elapsed: Duration) -> Outcome {
    let failed = runs.iter().filter(|r| r.error.is_some()).count();
    let am_ent = of(runs, Scheme::Am, |r| r.final_entropy);
    let ws_ent = of(runs, Scheme::WsNegLog, |r| r.final_entropy);
    let am_len = of(runs, Scheme::Am, |r| r.final_len);
    let ws_len = of(runs, Scheme::WsNegLog, |r| r.final_len);
    let monotone = runs.iter().filter(|r| r.scheme == Scheme::Am && r.entropy_monotone_after_peak).count();
    let ok = failed == 0 && am_ent < ws_ent && am_len < ws_len && monotone >= 4 && elapsed < Duration::from_secs(900);
    outcome(
        ok,
        format!(
            "entropy am {am_ent:.4} vs ws_neglog {ws_ent:.4}, length am {am_len:.3} vs ws_neglog {ws_len:.3}, \
             am monotone {monotone}/5, {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn top_bucket(runs: &[RunSummary]) -> Outcome {
    let am = of(runs, Scheme::Am, |r| r.top_bucket_ratio);
    let neglog = of(runs, Scheme::WsNegLog, |r| r.top_bucket_ratio);
    let inv = of(runs, Scheme::WsInv, |r| r.top_bucket_ratio);
    let ok = neglog > am && inv > am && neglog > 1.0 && inv > 1.0;
    outcome(ok, format!("top-bucket ratio am {am:.3}, ws_neglog {neglog:.3}, ws_inv {inv:.3}"))
}

fn lookup_lift() -> Outcome {
    let protocol = Protocol::lookup_lift();
    let (vocab, data) = protocol.dataset().unwrap();
    let margins: Vec<f64> = (0..5)
        .map(|seed| {
            let cfg = protocol.config(Scheme::Gm, seed);
            run::execute(&cfg, &vocab, &data, Start::Fresh, None, "lookup").map_or(f64::NAN, |o| o.lift.margin())
        })
        .collect();
    let positive = margins.iter().filter(|&&m| m > 0.0).count();
    let shown: Vec<String> = margins.iter().map(|m| format!("{m:.3}")).collect();
    outcome(positive >= 4, format!("gm margins [{}], {positive}/5 positive", shown.join(", ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let protocol = Protocol::skewed_collapse();
    let (vocab, data) = protocol.dataset().unwrap();
    let mut cfg = protocol.config(Scheme::WsNegLog, 3);
    cfg.training.steps = 20;
    cfg.training.eval_period = 5;
    let d = dir.path();
    let full_a = run::execute(&cfg, &vocab, &data, Start::Fresh, Some(&d.join("a")), "skewed").unwrap();
    run::execute(&cfg, &vocab, &data, Start::Fresh, Some(&d.join("b")), "skewed").unwrap();
    let a = fs::read(d.join("a").join(METRICS_FILE)).unwrap();
    let b = fs::read(d.join("b").join(METRICS_FILE)).unwrap();
    let identical = a == b;

    let mut half = cfg.clone();
    half.training.steps = 10;
    run::execute(&half, &vocab, &data, Start::Fresh, Some(&d.join("half")), "skewed").unwrap();
    let record = checkpoint::load_record(&d.join("half").join(CHECKPOINT_FILE)).unwrap();
    let resumed = run::execute(&cfg, &vocab, &data, Start::Resume(record), Some(&d.join("rest")), "skewed").unwrap();
    let bits = |p: &PolicyParameters| p.theta().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let rows_match = resumed.rows.len() == 10
        && resumed.rows.iter().zip(&full_a.rows[10..]).all(|(x, y)| {
            x.step == y.step && x.values().iter().zip(y.values()).all(|(u, v)| u.to_bits() == v.to_bits())
        });
    let theta_match = bits(&resumed.policy) == bits(&full_a.policy);
    let ckpt_match = fs::read(d.join("a").join(CHECKPOINT_FILE)).unwrap() == fs::read(d.join("rest").join(CHECKPOINT_FILE)).unwrap();
    let ok = identical && rows_match && theta_match && ckpt_match;
    outcome(
        ok,
        format!("metrics identical {identical}, resumed rows {rows_match}, parameters {theta_match}, checkpoint {ckpt_match}"),
    )
}

fn main() {
    // Honour the harness's list probe so `cargo test -- --list` stays quiet.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("estimator matches exact enumeration", oracle_estimator());
    report("gradients match finite differences", gradient_checks());
    report("closed-form reward identities", closed_forms());
    report("advantage contract", advantage_contract());
    let (runs, elapsed) = skewed_sweep();
    report("am collapses on skewed difficulty", collapse(&runs, elapsed));
    report("weighted sums favour high-entropy tokens", top_bucket(&runs));
    report("gm traces lift held-out likelihood", lookup_lift());
    report("determinism and resume", determinism());
    let failed = results.iter().filter(|(_, o)| !o.passed).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
