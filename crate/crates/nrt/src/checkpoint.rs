//! Checkpoint files.
//!
//! The first line is `nrt-checkpoint v1 <architecture descriptor>`, followed
//! by θ with one decimal value per line. A trainer checkpoint continues with
//! `[section]` blocks holding the remaining state. Floats are written in
//! shortest round-trip form, so a reload is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nrt_core::optim::OptimizerState;
use nrt_core::trainer::CheckpointRecord;
use nrt_core::{Architecture, PolicyParameters};

use crate::error::{CliError, CliResult};

pub const MAGIC: &str = "nrt-checkpoint v1";

fn push_values(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = writeln!(out, "{v:?}");
    }
}

pub fn render_policy(policy: &PolicyParameters) -> String {
    let mut out = format!("{MAGIC} {}\n", policy.architecture().descriptor());
    push_values(&mut out, policy.theta());
    out
}

pub fn render_record(record: &CheckpointRecord) -> String {
    let mut out = render_policy(&record.policy);
    let _ = writeln!(out, "[trainer]");
    let _ = writeln!(out, "step = {}", record.step);
    let _ = writeln!(out, "snapshot_version = {}", record.snapshot_version);
    let _ = writeln!(out, "last_eval = {:?}", record.last_eval);
    let _ = writeln!(out, "rng_digest = {:016x}", record.rng_digest);
    let _ = writeln!(out, "config_digest = {:016x}", record.config_digest);
    let _ = writeln!(out, "optimizer = {}", record.optimizer.kind);
    let _ = writeln!(out, "optimizer_step = {}", record.optimizer.step);
    let _ = writeln!(out, "[old_policy]");
    push_values(&mut out, record.old_policy.theta());
    let _ = writeln!(out, "[first_moment]");
    push_values(&mut out, &record.optimizer.m);
    let _ = writeln!(out, "[second_moment]");
    push_values(&mut out, &record.optimizer.v);
    out
}

struct Parsed {
    arch: Architecture,
    theta: Vec<f64>,
    sections: Vec<(String, Vec<String>)>,
}

fn parse(path: &Path, text: &str) -> CliResult<Parsed> {
    let bad = |msg: String| CliError::format(path, msg);
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let descriptor = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad(format!("expected header {MAGIC:?}")))?;
    let arch = Architecture::parse_descriptor(descriptor.trim()).map_err(|e| bad(e.to_string()))?;
    let mut theta = Vec::with_capacity(arch.num_params());
    let mut sections: Vec<(String, Vec<String>)> = Vec::new();
    for line in lines {
        let line = line.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push((name.to_string(), Vec::new()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push(line.to_string());
        } else {
            theta.push(line.parse().map_err(|_| bad(format!("bad parameter value {line:?}")))?);
        }
    }
    if theta.len() != arch.num_params() {
        return Err(bad(format!("expected {} parameters, found {}", arch.num_params(), theta.len())));
    }
    Ok(Parsed { arch, theta, sections })
}

pub fn parse_policy(path: &Path, text: &str) -> CliResult<PolicyParameters> {
    let p = parse(path, text)?;
    PolicyParameters::from_theta(p.arch, p.theta).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn parse_record(path: &Path, text: &str) -> CliResult<CheckpointRecord> {
    let bad = |msg: String| CliError::format(path, msg);
    let p = parse(path, text)?;
    let section = |name: &str| -> CliResult<&Vec<String>> {
        p.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| bad(format!("missing [{name}] section")))
    };
    let values = |name: &str| -> CliResult<Vec<f64>> {
        section(name)?
            .iter()
            .map(|l| l.parse().map_err(|_| bad(format!("bad value {l:?} in [{name}]"))))
            .collect()
    };
    let fields = section("trainer")?;
    let field = |key: &str| -> CliResult<&str> {
        fields
            .iter()
            .find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim()))
            .ok_or_else(|| bad(format!("missing trainer field {key}")))
    };
    let int = |key: &str| -> CliResult<u64> { field(key)?.parse().map_err(|_| bad(format!("bad {key}"))) };
    let hex = |key: &str| -> CliResult<u64> {
        u64::from_str_radix(field(key)?, 16).map_err(|_| bad(format!("bad {key}")))
    };
    let kind = field("optimizer")?.parse().map_err(|e: nrt_core::Error| bad(e.to_string()))?;
    let mut optimizer = OptimizerState::new(kind, 0);
    optimizer.step = int("optimizer_step")?;
    optimizer.m = values("first_moment")?;
    optimizer.v = values("second_moment")?;
    let policy = PolicyParameters::from_theta(p.arch, p.theta).map_err(|e| bad(e.to_string()))?;
    let old_policy = PolicyParameters::from_theta(p.arch, values("old_policy")?).map_err(|e| bad(e.to_string()))?;
    Ok(CheckpointRecord {
        step: int("step")?,
        policy,
        old_policy,
        snapshot_version: int("snapshot_version")?,
        optimizer,
        last_eval: field("last_eval")?.parse().map_err(|_| bad("bad last_eval".into()))?,
        rng_digest: hex("rng_digest")?,
        config_digest: hex("config_digest")?,
    })
}

fn write(path: &Path, text: String) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn save_policy(path: &Path, policy: &PolicyParameters) -> CliResult<()> {
    write(path, render_policy(policy))
}

pub fn save_record(path: &Path, record: &CheckpointRecord) -> CliResult<()> {
    write(path, render_record(record))
}

/// Reads θ from any checkpoint, ignoring trainer sections.
pub fn load_policy(path: &Path) -> CliResult<PolicyParameters> {
    parse_policy(path, &read(path)?)
}

pub fn load_record(path: &Path) -> CliResult<CheckpointRecord> {
    parse_record(path, &read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nrt_core::optim::OptimizerKind;

    #[test]
    fn policy_round_trip_is_exact() {
        let arch = Architecture::Neural { vocab: 6, embed: 3, hidden: 4, window: 2 };
        let mut p = PolicyParameters::init_uniform(arch, 0.1, 4);
        p.theta_mut()[0] = 1.0 / 3.0;
        p.theta_mut()[1] = -2.5e-300;
        let text = render_policy(&p);
        assert!(text.starts_with("nrt-checkpoint v1 neural vocab=6 embed=3 hidden=4 window=2\n"));
        assert_eq!(text.lines().count(), 1 + p.len());
        let back = parse_policy(Path::new("mem"), &text).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn record_round_trip_is_exact() {
        let arch = Architecture::Tabular { vocab: 5, order: 1 };
        let p = PolicyParameters::init_uniform(arch, 1.0, 1);
        let mut optimizer = OptimizerState::new(OptimizerKind::Adam, p.len());
        optimizer.step = 7;
        optimizer.m[2] = 0.125;
        optimizer.v[3] = 1e-17;
        let record = CheckpointRecord {
            step: 7,
            old_policy: PolicyParameters::init_uniform(arch, 1.0, 2),
            policy: p,
            snapshot_version: 7,
            optimizer,
            last_eval: f64::NAN,
            rng_digest: 0xdead_beef,
            config_digest: u64::MAX,
        };
        let text = render_record(&record);
        let back = parse_record(Path::new("mem"), &text).unwrap();
        assert!(back.last_eval.is_nan());
        assert_eq!(render_record(&back), text);
        assert_eq!(back.policy, record.policy);
        assert_eq!(back.optimizer, record.optimizer);
        assert_eq!(parse_policy(Path::new("mem"), &text).unwrap(), record.policy);
    }

    #[test]
    fn rejects_malformed() {
        let m = Path::new("mem");
        assert!(parse_policy(m, "nrt-checkpoint v2 tabular vocab=2 order=1\n").is_err());
        assert!(parse_policy(m, "nrt-checkpoint v1 tabular vocab=2 order=1\n0.5\n").is_err());
        let arch = Architecture::Tabular { vocab: 2, order: 1 };
        let text = render_policy(&PolicyParameters::zeros(arch));
        assert!(parse_record(m, &text).is_err());
    }
}
