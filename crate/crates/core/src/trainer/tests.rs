use super::*;
use crate::corpus::{generate_skewed_difficulty, TaskSpec, Vocabulary};
use crate::estimator::importance_ratio;

fn data(n: usize) -> Dataset {
    generate_skewed_difficulty(&TaskSpec::skewed(3, 2, 1, 3, 5), n).unwrap().1
}

fn arch() -> Architecture {
    Architecture::Neural { vocab: 7, embed: 3, hidden: 6, window: 4 }
}

fn small_config() -> TrainingConfig {
    TrainingConfig {
        k: 4,
        batch_size: 3,
        minibatch_size: 5,
        max_trace_len: 3,
        steps: 20,
        seed: 9,
        eval_period: 4,
        eval_traces: 2,
        lr: 1e-2,
        ..TrainingConfig::default()
    }
}

fn init() -> PolicyParameters {
    PolicyParameters::init_uniform(arch(), 0.3, 1)
}

#[test]
fn defaults_follow_reference_hyperparameters() {
    let c = TrainingConfig::default();
    assert_eq!(c.k, 8);
    assert_eq!(c.temperature, 1.0);
    assert_eq!(c.lambda_format, 0.3);
    assert_eq!((c.clip_low, c.clip_high), (0.2, 0.28));
    assert_eq!(c.steps, 2000);
    assert_eq!(c.sync_period, 1);
    assert_eq!(c.passes, 2);
    assert_eq!(c.optimizer, OptimizerKind::Adam);
    assert_eq!(TrainingConfig::for_architecture(&Architecture::Tabular { vocab: 5, order: 1 }).lr, 1e-2);
    c.validate().unwrap();
}

#[test]
fn config_text_round_trips() {
    let mut c = small_config();
    c.scheme = Scheme::WsNegLog;
    c.ratio_on_token_term = true;
    let mut d = TrainingConfig::default();
    for line in c.canonical_text().lines() {
        let (k, v) = line.split_once('=').unwrap();
        d.set(k.trim(), v).unwrap();
    }
    assert_eq!(c, d);
    assert!(d.set("learning_rate", "0.1").is_err());
    assert!(d.set("k", "many").is_err());
    assert!(d.set("scheme", "rlpr").is_err());
}

#[test]
fn digest_ignores_step_budget_only() {
    let c = small_config();
    let longer = TrainingConfig { steps: 999, ..c.clone() };
    let reseeded = TrainingConfig { seed: 10, ..c.clone() };
    assert_eq!(c.digest(), longer.digest());
    assert_ne!(c.digest(), reseeded.digest());
}

#[test]
fn invalid_configs_are_rejected() {
    let base = small_config();
    for bad in [
        TrainingConfig { k: 1, ..base.clone() },
        TrainingConfig { minibatch_size: 13, ..base.clone() },
        TrainingConfig { lr: f64::NAN, ..base.clone() },
        TrainingConfig { sync_period: 0, ..base.clone() },
        TrainingConfig { temperature: 0.0, ..base.clone() },
        TrainingConfig { passes: 0, ..base.clone() },
    ] {
        assert!(bad.validate().is_err());
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let c = TrainingConfig { lr: 0.0, steps: 5, ..small_config() };
    let (p, rows) = train(c, &data(30), init()).unwrap();
    assert_eq!(p, init());
    assert_eq!(rows.len(), 5);
}

#[test]
fn same_seed_gives_identical_rows() {
    let d = data(30);
    let (pa, a) = train(small_config(), &d, init()).unwrap();
    let (pb, b) = train(small_config(), &d, init()).unwrap();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let (_, c) = train(TrainingConfig { seed: 10, ..small_config() }, &d, init()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let d = data(30);
    let (full_p, full) = train(small_config(), &d, init()).unwrap();
    let mut t = Trainer::new(small_config(), init()).unwrap();
    t.run_until(&d, 10, |_| {}).unwrap();
    let record = t.checkpoint();
    drop(t);
    let mut resumed = Trainer::resume(small_config(), record.clone()).unwrap();
    let mut tail = Vec::new();
    resumed.run_until(&d, 20, |r| tail.push(*r)).unwrap();
    assert_eq!(&full[10..], &tail[..]);
    assert_eq!(resumed.policy(), &full_p);

    let altered = TrainingConfig { lambda_format: 0.5, ..small_config() };
    assert!(Trainer::resume(altered, record.clone()).is_err());
    let mut tampered = record;
    tampered.step += 1;
    assert!(Trainer::resume(small_config(), tampered).is_err());
}

#[test]
fn sync_resets_ratios_and_bumps_version() {
    let d = data(30);
    let c = TrainingConfig { sync_period: 1000, ..small_config() };
    let mut t = Trainer::new(c, init()).unwrap();
    t.run_until(&d, 2, |_| {}).unwrap();
    assert_eq!(t.snapshot_version(), 0);
    let items = t.rollout(&d, 3).unwrap();
    let drifted = items
        .iter()
        .flat_map(|it| it.traces.iter().map(move |z| (it, z)))
        .any(|(it, z)| importance_ratio(t.policy(), t.old_policy(), &it.pair.question, z).unwrap() != 1.0);
    assert!(drifted);

    let before = t.snapshot_version();
    t.sync_old_policy();
    assert!(t.snapshot_version() > before);
    let items = t.rollout(&d, 3).unwrap();
    for it in &items {
        for z in &it.traces {
            assert_eq!(importance_ratio(t.policy(), t.old_policy(), &it.pair.question, z).unwrap(), 1.0);
        }
    }
}

#[test]
fn baselines_follow_the_snapshot() {
    let d = data(30);
    let mut t = Trainer::new(TrainingConfig { sync_period: 1000, ..small_config() }, init()).unwrap();
    let a = t.rollout(&d, 1).unwrap();
    t.sync_old_policy();
    let b = t.rollout(&d, 1).unwrap();
    // θ unchanged: recomputed baselines agree
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.baseline, y.baseline);
    }
    t.run_until(&d, 1, |_| {}).unwrap();
    t.sync_old_policy();
    let c = t.rollout(&d, 1).unwrap();
    assert!(a.iter().zip(&c).any(|(x, y)| x.baseline != y.baseline));
}

#[test]
fn schedule_wraps_and_covers_each_epoch() {
    let n = 7;
    let mut seen = Vec::new();
    for step in 1..=7 {
        seen.extend(prompt_schedule(3, tag::BATCH, n, step, 2));
    }
    for epoch in seen.chunks(n) {
        let mut e = epoch.to_vec();
        e.sort();
        assert_eq!(e, (0..n).collect::<Vec<_>>());
    }
    // a batch larger than the split wraps within one step
    let big = prompt_schedule(3, tag::BATCH, 3, 1, 7);
    assert_eq!(big.len(), 7);
    assert!(big.iter().all(|&i| i < 3));
}

#[test]
fn empty_dataset_is_rejected() {
    let d = Dataset::empty();
    assert_eq!(train(small_config(), &d, init()).unwrap_err(), Error::EmptyDataset);
}

/// Every trace row strongly prefers `END_THINK`: traces are empty, the two
/// rewards tie, and the trace term vanishes.
fn immediate_end_policy() -> PolicyParameters {
    let v = 7;
    let mut p = PolicyParameters::init_uniform(Architecture::Tabular { vocab: v, order: 2 }, 0.3, 4);
    for row in 0..v * v {
        p.theta_mut()[row * v + Vocabulary::END_THINK as usize] = 60.0;
    }
    p
}

#[test]
fn logp_with_empty_traces_is_supervised_training() {
    let d = data(30);
    let c = TrainingConfig {
        scheme: Scheme::LogP,
        k: 2,
        batch_size: 4,
        minibatch_size: 8,
        passes: 1,
        steps: 6,
        ..small_config()
    };
    let (p, rows) = train(c.clone(), &d, immediate_end_policy()).unwrap();
    assert!(rows.iter().all(|r| r.mean_trace_len == 0.0 && r.degenerate_frac == 1.0));

    let mut q = immediate_end_policy();
    let mut opt = OptimizerState::new(c.optimizer, q.len());
    let train_idx = d.train_indices();
    for step in 1..=c.steps {
        let picks = prompt_schedule(c.seed, tag::BATCH, train_idx.len(), step, c.batch_size);
        let pairs: Vec<&QAPair> = picks.iter().map(|&i| &d.pairs[train_idx.start + i]).collect();
        let (g, _) = supervised_gradient(&q, &pairs, c.lambda_format).unwrap();
        opt.apply(&mut q, &g, c.lr).unwrap();
    }
    for (a, b) in p.theta().iter().zip(q.theta()) {
        assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn warmup_raises_empty_trace_likelihood() {
    let d = data(60);
    let p0 = init();
    let before = empty_trace_answer_logprob(&p0, d.train()).unwrap();
    let p = supervised_warmup(p0, &d, 100, 8, 1e-2, 0.3, 2).unwrap();
    let after = empty_trace_answer_logprob(&p, d.train()).unwrap();
    assert!(after > before + 0.1, "{before} -> {after}");
}
