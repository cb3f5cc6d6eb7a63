//! CSV streams and run manifests.

use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nrt_core::metrics::{MetricsRow, TokenProbAnalysis, ANALYSIS_COLUMNS, COLUMNS};

use crate::error::{CliError, CliResult};

/// Shortest text that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Metrics CSV flushed after every row, so an interrupted run leaves a
/// parseable prefix.
pub struct MetricsWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = Self { path: path.to_path_buf(), inner: csv::Writer::from_writer(file) };
        w.record(COLUMNS.iter().map(|c| c.to_string()).collect())?;
        Ok(w)
    }

    fn record(&mut self, fields: Vec<String>) -> CliResult<()> {
        let io = |e: std::io::Error| CliError::io(&self.path, e);
        self.inner.write_record(&fields).map_err(|e| io(std::io::Error::other(e)))?;
        self.inner.flush().map_err(io)
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> CliResult<()> {
        let mut fields = vec![row.step.to_string()];
        fields.extend(row.values().iter().map(|&v| fmt_f64(v)));
        self.record(fields)
    }
}

pub fn read_metrics(path: &Path) -> CliResult<Vec<MetricsRow>> {
    let bad = |msg: String| CliError::format(path, msg);
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    let header: Vec<String> = r.headers().map_err(|e| bad(e.to_string()))?.iter().map(String::from).collect();
    if header != COLUMNS {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| -> CliResult<f64> {
            rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(format!("bad field {i}")))
        };
        rows.push(MetricsRow {
            step: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad step".into()))?,
            mean_trace_len: f(1)?,
            median_trace_len: f(2)?,
            mean_trace_entropy: f(3)?,
            mean_reward: f(4)?,
            mean_clipped_reward: f(5)?,
            degenerate_frac: f(6)?,
            forced_end_frac: f(7)?,
            mean_answer_logprob: f(8)?,
            format_loss: f(9)?,
            eval_answer_logprob: f(10)?,
        });
    }
    Ok(rows)
}

pub fn write_analysis(path: &Path, analysis: &TokenProbAnalysis) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
    w.write_record(ANALYSIS_COLUMNS).map_err(io)?;
    for r in &analysis.records {
        w.write_record([
            r.token_id.to_string(),
            r.position.to_string(),
            fmt_f64(r.baseline_entropy),
            r.bucket.to_string(),
            fmt_f64(r.prob_ratio),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Ordered `key = value` record of how a run was produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

pub const ENTROPY_DEFINITION: &str = "mean per-position entropy of the masked trace distribution (task symbols and END_THINK) over every sampled trace decision of the step, pooled across traces";
pub const REFERENCE_DEFINITION: &str = "reference policy = initial policy after supervised warm-up on answers with empty traces; P_base and H_base are its empty-trace probabilities and entropies";

impl Manifest {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
        f.write_all(self.render().as_bytes()).map_err(|e| CliError::io(path, e))
    }
}

pub fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows: Vec<MetricsRow> = (1..4)
            .map(|s| MetricsRow { step: s, mean_trace_len: 0.1 * s as f64, eval_answer_logprob: f64::NAN, ..Default::default() })
            .collect();
        let mut w = MetricsWriter::create(&path).unwrap();
        for r in &rows {
            w.write_row(r).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), COLUMNS.join(","));
        let back = read_metrics(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2].mean_trace_len.to_bits(), rows[2].mean_trace_len.to_bits());
        assert!(back[0].eval_answer_logprob.is_nan());
    }

    #[test]
    fn rows_are_flushed_as_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.write_row(&MetricsRow { step: 1, ..Default::default() }).unwrap();
        assert_eq!(read_metrics(&path).unwrap().len(), 1);
        drop(w);
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::default();
        m.push("seed", 3);
        m.push("bucket_edges", "0.1 0.2");
        assert_eq!(Manifest::parse(&m.render()), m);
        assert_eq!(m.get("seed"), Some("3"));
    }
}
