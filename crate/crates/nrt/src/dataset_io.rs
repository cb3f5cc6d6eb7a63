//! Plain-text datasets.
//!
//! ```text
//! # alphabet 5
//! # split 800
//! 3 1	3 3 4
//! ```
//!
//! Directives start with `#`; every other nonblank line is one pair, question
//! glyphs and answer glyphs separated by a tab, glyphs by single spaces.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nrt_core::{Dataset, QAPair, Vocabulary};

use crate::error::{CliError, CliResult};

pub fn render(vocab: &Vocabulary, dataset: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# alphabet {}", vocab.alphabet_size());
    let _ = writeln!(out, "# split {}", dataset.eval_start());
    let glyphs = |ts: &[u32]| ts.iter().map(|&t| vocab.glyph(t)).collect::<Vec<_>>().join(" ");
    for pair in &dataset.pairs {
        let _ = writeln!(out, "{}\t{}", glyphs(&pair.question), glyphs(&pair.answer));
    }
    out
}

pub fn write_dataset(path: &Path, vocab: &Vocabulary, dataset: &Dataset) -> CliResult<()> {
    fs::write(path, render(vocab, dataset)).map_err(|e| CliError::io(path, e))
}

pub fn parse(path: &Path, text: &str) -> CliResult<(Vocabulary, Dataset)> {
    let mut alphabet = None;
    let mut split = None;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let at = |msg: String| CliError::format(path, format!("line {}: {msg}", n + 1));
        if let Some(directive) = line.strip_prefix('#') {
            let mut parts = directive.split_whitespace();
            let key = parts.next().unwrap_or("");
            let value = parts.next().and_then(|v| v.parse::<usize>().ok());
            match (key, value) {
                ("alphabet", Some(v)) => alphabet = Some(v),
                ("split", Some(v)) => split = Some(v),
                _ => return Err(at(format!("unrecognized directive {line:?}"))),
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (q, a) = line.split_once('\t').ok_or_else(|| at("expected question<TAB>answer".into()))?;
        rows.push((n + 1, q.to_string(), a.to_string()));
    }
    let alphabet = alphabet.ok_or_else(|| CliError::format(path, "missing '# alphabet N' directive"))?;
    let vocab = Vocabulary::new(alphabet).map_err(|e| CliError::format(path, e.to_string()))?;
    let mut pairs = Vec::with_capacity(rows.len());
    for (line, q, a) in rows {
        let tokens = |s: &str| -> CliResult<Vec<u32>> {
            s.split_whitespace()
                .map(|g| {
                    vocab
                        .parse_glyph(g)
                        .ok_or_else(|| CliError::format(path, format!("line {line}: bad glyph {g:?}")))
                })
                .collect()
        };
        let pair = QAPair::new(&vocab, tokens(&q)?, tokens(&a)?)
            .map_err(|e| CliError::format(path, format!("line {line}: {e}")))?;
        pairs.push(pair);
    }
    let dataset = match split {
        Some(s) => Dataset::new(pairs, s).map_err(|e| CliError::format(path, e.to_string()))?,
        None => Dataset::with_default_split(pairs),
    };
    Ok((vocab, dataset))
}

pub fn read_dataset(path: &Path) -> CliResult<(Vocabulary, Dataset)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(path, &text)
}
