//! Run configuration: trainer settings plus policy shape and warm-up.
//!
//! Files are flat `key = value` text. `#` starts a comment. Unknown keys are
//! errors.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nrt_core::trainer::{TrainingConfig, CONFIG_KEYS};
use nrt_core::{Architecture, Vocabulary};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Tabular,
    Neural,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub training: TrainingConfig,
    pub policy: PolicyKind,
    pub order: usize,
    pub embed: usize,
    pub hidden: usize,
    pub window: usize,
    pub init_scale: f64,
    pub warmup_steps: u64,
    pub warmup_batch: usize,
    pub warmup_lr: f64,
    /// Format-loss weight during warm-up. Small positive values leave the
    /// reference policy mostly ending traces at once.
    pub warmup_lambda_format: f64,
    /// Traces per held-out pair in the end-of-run token analysis.
    pub analysis_traces: usize,
}

pub const RUN_KEYS: [&str; 11] = [
    "policy",
    "order",
    "embed",
    "hidden",
    "window",
    "init_scale",
    "warmup_steps",
    "warmup_batch",
    "warmup_lr",
    "warmup_lambda_format",
    "analysis_traces",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::default(),
            policy: PolicyKind::Neural,
            order: 2,
            embed: 8,
            hidden: 24,
            window: 4,
            init_scale: 0.3,
            warmup_steps: 300,
            warmup_batch: 16,
            warmup_lr: 1e-2,
            warmup_lambda_format: 0.01,
            analysis_traces: 8,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|_| CliError::Usage(format!("bad value {v:?} for {key}")))
}

impl RunConfig {
    pub fn architecture(&self, vocab: &Vocabulary) -> Architecture {
        match self.policy {
            PolicyKind::Tabular => Architecture::Tabular { vocab: vocab.size(), order: self.order },
            PolicyKind::Neural => Architecture::Neural {
                vocab: vocab.size(),
                embed: self.embed,
                hidden: self.hidden,
                window: self.window,
            },
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "policy" => {
                self.policy = match v {
                    "tabular" => PolicyKind::Tabular,
                    "neural" => PolicyKind::Neural,
                    _ => return Err(CliError::Usage(format!("unknown policy {v:?}"))),
                }
            }
            "order" => self.order = num(key, v)?,
            "embed" => self.embed = num(key, v)?,
            "hidden" => self.hidden = num(key, v)?,
            "window" => self.window = num(key, v)?,
            "init_scale" => self.init_scale = num(key, v)?,
            "warmup_steps" => self.warmup_steps = num(key, v)?,
            "warmup_batch" => self.warmup_batch = num(key, v)?,
            "warmup_lr" => self.warmup_lr = num(key, v)?,
            "warmup_lambda_format" => self.warmup_lambda_format = num(key, v)?,
            "analysis_traces" => self.analysis_traces = num(key, v)?,
            _ => self.training.set(key, v).map_err(|e| CliError::Usage(e.to_string()))?,
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "policy" => match self.policy {
                PolicyKind::Tabular => "tabular".to_string(),
                PolicyKind::Neural => "neural".to_string(),
            },
            "order" => self.order.to_string(),
            "embed" => self.embed.to_string(),
            "hidden" => self.hidden.to_string(),
            "window" => self.window.to_string(),
            "init_scale" => format!("{:?}", self.init_scale),
            "warmup_steps" => self.warmup_steps.to_string(),
            "warmup_batch" => self.warmup_batch.to_string(),
            "warmup_lr" => format!("{:?}", self.warmup_lr),
            "warmup_lambda_format" => format!("{:?}", self.warmup_lambda_format),
            "analysis_traces" => self.analysis_traces.to_string(),
            _ => return self.training.get(key),
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key, run keys first, in a fixed order.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for key in RUN_KEYS.iter().chain(CONFIG_KEYS.iter()) {
            let _ = writeln!(s, "{key} = {}", self.get(key).unwrap_or_default());
        }
        s
    }

    pub fn validate(&self) -> CliResult<()> {
        self.training.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.warmup_batch < 1 || self.analysis_traces < 1 {
            return Err(CliError::Usage("warmup_batch and analysis_traces must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_overrides() {
        let mut c = RunConfig::default();
        c.set("scheme", "ws_neglog").unwrap();
        c.set("window", "6").unwrap();
        c.set("lr", "0.0005").unwrap();
        let back = RunConfig::parse(&c.canonical_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let c = RunConfig::parse("# run\nk = 4  # traces\n\npolicy = tabular\n").unwrap();
        assert_eq!(c.training.k, 4);
        assert_eq!(c.policy, PolicyKind::Tabular);
        assert!(RunConfig::parse("colour = red\n").is_err());
        assert!(RunConfig::parse("k 4\n").is_err());
        assert!(RunConfig::parse("k = four\n").is_err());
    }
}
