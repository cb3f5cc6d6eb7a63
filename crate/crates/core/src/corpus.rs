//! Vocabularies, QA pairs and deterministic synthetic task generators.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub type Token = u32;

/// Shared token space for questions, traces and answers.
///
/// Ids 0..4 are reserved (`START_THINK`, `END_THINK`, `SEP`, `EOS`); task
/// symbol `i` has id `4 + i` and the printable glyph `i` in decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    alphabet: usize,
}

impl Vocabulary {
    pub const START_THINK: Token = 0;
    pub const END_THINK: Token = 1;
    pub const SEP: Token = 2;
    pub const EOS: Token = 3;
    pub const RESERVED: usize = 4;

    pub fn new(alphabet_size: usize) -> Result<Self> {
        if alphabet_size < 2 {
            return Err(Error::AlphabetTooSmall(alphabet_size));
        }
        Ok(Self { alphabet: alphabet_size })
    }

    pub fn size(&self) -> usize {
        self.alphabet + Self::RESERVED
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    pub fn symbol(&self, index: usize) -> Token {
        debug_assert!(index < self.alphabet);
        (Self::RESERVED + index) as Token
    }

    pub fn symbol_index(&self, token: Token) -> Option<usize> {
        let t = token as usize;
        (Self::RESERVED..self.size())
            .contains(&t)
            .then(|| t - Self::RESERVED)
    }

    /// Tokens a trace may contain: every task symbol.
    pub fn trace_alphabet(&self) -> impl Iterator<Item = Token> + '_ {
        (0..self.alphabet).map(|i| self.symbol(i))
    }

    pub fn is_reserved(token: Token) -> bool {
        (token as usize) < Self::RESERVED
    }

    pub fn glyph(&self, token: Token) -> String {
        match token {
            Self::START_THINK => "<think>".to_string(),
            Self::END_THINK => "</think>".to_string(),
            Self::SEP => "|".to_string(),
            Self::EOS => "<eos>".to_string(),
            t => match self.symbol_index(t) {
                Some(i) => format!("{i}"),
                None => format!("<?{t}>"),
            },
        }
    }

    pub fn parse_glyph(&self, glyph: &str) -> Option<Token> {
        match glyph {
            "<think>" => Some(Self::START_THINK),
            "</think>" => Some(Self::END_THINK),
            "|" => Some(Self::SEP),
            "<eos>" => Some(Self::EOS),
            g => {
                if g.is_empty() || !g.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                let i: usize = g.parse().ok()?;
                (i < self.alphabet).then(|| self.symbol(i))
            }
        }
    }

    pub fn check(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.size()) {
            Some(&token) => Err(Error::TokenOutOfRange { token, vocab: self.size() }),
            None => Ok(()),
        }
    }
}

/// A question and its reference answer. Neither side may contain trace
/// delimiters and the answer is never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QAPair {
    pub question: Vec<Token>,
    pub answer: Vec<Token>,
}

impl QAPair {
    pub fn new(vocab: &Vocabulary, question: Vec<Token>, answer: Vec<Token>) -> Result<Self> {
        vocab.check(&question)?;
        vocab.check(&answer)?;
        if answer.is_empty() {
            return Err(Error::InvalidPair("answer must contain at least one token".into()));
        }
        let delim = |t: &Token| *t == Vocabulary::START_THINK || *t == Vocabulary::END_THINK;
        if question.iter().any(delim) || answer.iter().any(delim) {
            return Err(Error::InvalidPair("trace delimiters are not allowed in QA pairs".into()));
        }
        Ok(Self { question, answer })
    }

    pub fn answer_len(&self) -> usize {
        self.answer.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// `E` copies of the first question symbol, then the symbol sum mod `m`.
    SkewedDifficulty,
    /// A key→value table plus a start key; answer follows the chain `depth` hops.
    LookupChain,
    /// Answer is the symbol sum of the question mod `m`.
    ModularAddition,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::SkewedDifficulty => "skewed",
            TaskKind::LookupChain => "lookup",
            TaskKind::ModularAddition => "modadd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "skewed" | "skewed-difficulty" => Some(TaskKind::SkewedDifficulty),
            "lookup" | "lookup-chain" => Some(TaskKind::LookupChain),
            "modadd" | "modular-addition" => Some(TaskKind::ModularAddition),
            _ => None,
        }
    }
}

/// Everything a generator needs; generation is a pure function of this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub alphabet: usize,
    /// Number of question symbols (skewed / modular addition).
    pub question_len: usize,
    /// Easy answer tokens `E` (skewed).
    pub easy_tokens: usize,
    /// Hard answer tokens (skewed); must be exactly 1.
    pub hard_tokens: usize,
    pub modulus: usize,
    /// Chain hops (lookup).
    pub depth: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn skewed(alphabet: usize, question_len: usize, easy_tokens: usize, modulus: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::SkewedDifficulty,
            alphabet,
            question_len,
            easy_tokens,
            hard_tokens: 1,
            modulus,
            depth: 0,
            seed,
        }
    }

    pub fn lookup(alphabet: usize, depth: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::LookupChain,
            alphabet,
            question_len: alphabet + 1,
            easy_tokens: 0,
            hard_tokens: 1,
            modulus: alphabet,
            depth,
            seed,
        }
    }

    pub fn modular_addition(alphabet: usize, question_len: usize, modulus: usize, seed: u64) -> Self {
        Self {
            kind: TaskKind::ModularAddition,
            alphabet,
            question_len,
            easy_tokens: 0,
            hard_tokens: 1,
            modulus,
            depth: 0,
            seed,
        }
    }
}

/// Ordered QA pairs with a train prefix and an eval suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub pairs: Vec<QAPair>,
    eval_start: usize,
}

impl Dataset {
    pub fn new(pairs: Vec<QAPair>, eval_start: usize) -> Result<Self> {
        if eval_start > pairs.len() {
            return Err(Error::InvalidConfig(format!(
                "eval split starts at {eval_start} but dataset has {} pairs",
                pairs.len()
            )));
        }
        Ok(Self { pairs, eval_start })
    }

    /// Default split: the last fifth is held out.
    pub fn with_default_split(pairs: Vec<QAPair>) -> Self {
        let eval_start = pairs.len() - pairs.len() / 5;
        Self { pairs, eval_start }
    }

    pub fn empty() -> Self {
        Self { pairs: Vec::new(), eval_start: 0 }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn eval_start(&self) -> usize {
        self.eval_start
    }

    pub fn train_indices(&self) -> core::ops::Range<usize> {
        0..self.eval_start
    }

    pub fn eval_indices(&self) -> core::ops::Range<usize> {
        self.eval_start..self.pairs.len()
    }

    pub fn train(&self) -> &[QAPair] {
        &self.pairs[..self.eval_start]
    }

    pub fn eval(&self) -> &[QAPair] {
        &self.pairs[self.eval_start..]
    }
}

pub fn build_vocabulary(alphabet_size: usize) -> Result<Vocabulary> {
    Vocabulary::new(alphabet_size)
}

/// Answer for the skewed-difficulty task: `easy` copies of the first symbol
/// followed by the symbol sum mod `modulus`. Inputs are symbol indices.
pub fn skewed_answer(question: &[usize], easy: usize, modulus: usize) -> Vec<usize> {
    let mut answer = alloc::vec![question[0]; easy];
    answer.push(question.iter().sum::<usize>() % modulus);
    answer
}

/// Follows `table` from `start` for `depth` hops.
pub fn follow_chain(table: &[usize], start: usize, depth: usize) -> usize {
    (0..depth).fold(start, |key, _| table[key])
}

fn invalid(msg: &str) -> Error {
    Error::InvalidTaskSpec(msg.into())
}

fn data_rng(spec: &TaskSpec) -> rng::StreamRng {
    rng::stream(spec.seed, &[rng::tag::DATA, spec.kind as u64])
}

fn symbols(vocab: &Vocabulary, idx: &[usize]) -> Vec<Token> {
    idx.iter().map(|&i| vocab.symbol(i)).collect()
}

pub fn generate_skewed_difficulty(spec: &TaskSpec, n: usize) -> Result<(Vocabulary, Dataset)> {
    if spec.kind != TaskKind::SkewedDifficulty {
        return Err(invalid("expected a skewed-difficulty spec"));
    }
    if spec.easy_tokens < 1 {
        return Err(invalid("skewed task needs at least one easy token"));
    }
    if spec.hard_tokens != 1 {
        return Err(invalid("skewed task has exactly one hard token"));
    }
    if spec.question_len < 1 {
        return Err(invalid("question length must be positive"));
    }
    if spec.modulus < 2 || spec.modulus > spec.alphabet {
        return Err(invalid("modulus must lie in [2, alphabet]"));
    }
    let vocab = Vocabulary::new(spec.alphabet).map_err(|_| invalid("alphabet must be at least 2"))?;
    let mut rng = data_rng(spec);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let q: Vec<usize> = (0..spec.question_len)
            .map(|_| rng.random_range(0..spec.alphabet))
            .collect();
        let a = skewed_answer(&q, spec.easy_tokens, spec.modulus);
        pairs.push(QAPair::new(&vocab, symbols(&vocab, &q), symbols(&vocab, &a))?);
    }
    Ok((vocab, Dataset::with_default_split(pairs)))
}

/// Question layout: `table[0] .. table[m-1] start`, one value per key in key
/// order; the answer is the single symbol reached after `depth` hops.
pub fn generate_lookup_chain(spec: &TaskSpec, n: usize) -> Result<(Vocabulary, Dataset)> {
    if spec.kind != TaskKind::LookupChain {
        return Err(invalid("expected a lookup-chain spec"));
    }
    if spec.depth < 1 {
        return Err(invalid("chain depth must be at least 1"));
    }
    let vocab = Vocabulary::new(spec.alphabet).map_err(|_| invalid("alphabet must be at least 2"))?;
    let m = spec.alphabet;
    let mut rng = data_rng(spec);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let table: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
        let start = rng.random_range(0..m);
        let mut q = table.clone();
        q.push(start);
        let a = follow_chain(&table, start, spec.depth);
        pairs.push(QAPair::new(&vocab, symbols(&vocab, &q), symbols(&vocab, &[a]))?);
    }
    Ok((vocab, Dataset::with_default_split(pairs)))
}

pub fn generate_modular_addition(spec: &TaskSpec, n: usize) -> Result<(Vocabulary, Dataset)> {
    if spec.kind != TaskKind::ModularAddition {
        return Err(invalid("expected a modular-addition spec"));
    }
    if spec.question_len < 1 {
        return Err(invalid("question length must be positive"));
    }
    if spec.modulus < 2 || spec.modulus > spec.alphabet {
        return Err(invalid("modulus must lie in [2, alphabet]"));
    }
    let vocab = Vocabulary::new(spec.alphabet).map_err(|_| invalid("alphabet must be at least 2"))?;
    let mut rng = data_rng(spec);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let q: Vec<usize> = (0..spec.question_len)
            .map(|_| rng.random_range(0..spec.alphabet))
            .collect();
        let a = q.iter().sum::<usize>() % spec.modulus;
        pairs.push(QAPair::new(&vocab, symbols(&vocab, &q), symbols(&vocab, &[a]))?);
    }
    Ok((vocab, Dataset::with_default_split(pairs)))
}

pub fn generate(spec: &TaskSpec, n: usize) -> Result<(Vocabulary, Dataset)> {
    match spec.kind {
        TaskKind::SkewedDifficulty => generate_skewed_difficulty(spec, n),
        TaskKind::LookupChain => generate_lookup_chain(spec, n),
        TaskKind::ModularAddition => generate_modular_addition(spec, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_sizes() {
        let v = build_vocabulary(2).unwrap();
        assert_eq!(v.size(), 6);
        assert_eq!(
            [Vocabulary::START_THINK, Vocabulary::END_THINK, Vocabulary::SEP, Vocabulary::EOS],
            [0, 1, 2, 3]
        );
        assert_eq!(build_vocabulary(10).unwrap().size(), 14);
        assert_eq!(build_vocabulary(0), Err(Error::AlphabetTooSmall(0)));
        assert!(build_vocabulary(1).is_err());
    }

    #[test]
    fn glyph_round_trip() {
        let v = Vocabulary::new(12).unwrap();
        for t in 0..v.size() as Token {
            assert_eq!(v.parse_glyph(&v.glyph(t)), Some(t));
        }
        assert_eq!(v.parse_glyph("12"), None);
        assert_eq!(v.parse_glyph("x"), None);
        assert_eq!(v.parse_glyph("+1"), None);
    }

    #[test]
    fn skewed_answer_examples() {
        assert_eq!(skewed_answer(&[3, 1, 2], 2, 5), [3, 3, 1]);
        assert_eq!(skewed_answer(&[0, 0], 1, 2), [0, 0]);
    }

    #[test]
    fn chain_examples() {
        // a=0 -> b=1 -> c=2
        let table = [1, 2, 2];
        assert_eq!(follow_chain(&table, 0, 2), 2);
        assert_eq!(follow_chain(&table, 0, 1), 1);
    }

    #[test]
    fn skewed_generation_matches_construction() {
        let spec = TaskSpec::skewed(5, 3, 2, 5, 11);
        let (v, d) = generate_skewed_difficulty(&spec, 200).unwrap();
        for p in &d.pairs {
            let q: Vec<usize> = p.question.iter().map(|&t| v.symbol_index(t).unwrap()).collect();
            let a: Vec<usize> = p.answer.iter().map(|&t| v.symbol_index(t).unwrap()).collect();
            assert_eq!(a, skewed_answer(&q, 2, 5));
        }
        let (_, again) = generate_skewed_difficulty(&spec, 200).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn skewed_rejects_bad_specs() {
        let mut spec = TaskSpec::skewed(5, 3, 0, 5, 1);
        assert!(generate_skewed_difficulty(&spec, 1).is_err());
        spec.easy_tokens = 1;
        spec.modulus = 6;
        assert!(generate_skewed_difficulty(&spec, 1).is_err());
        spec.modulus = 5;
        spec.hard_tokens = 2;
        assert!(generate_skewed_difficulty(&spec, 1).is_err());
        let lookup = TaskSpec::lookup(4, 2, 0);
        assert!(generate_skewed_difficulty(&lookup, 1).is_err());
    }

    #[test]
    fn lookup_generation_follows_table() {
        let spec = TaskSpec::lookup(4, 2, 3);
        let (v, d) = generate_lookup_chain(&spec, 100).unwrap();
        for p in &d.pairs {
            let q: Vec<usize> = p.question.iter().map(|&t| v.symbol_index(t).unwrap()).collect();
            let (table, start) = q.split_at(4);
            let a = v.symbol_index(p.answer[0]).unwrap();
            assert_eq!(a, table[table[start[0]]]);
        }
        assert_eq!(d.train().len() + d.eval().len(), 100);
        assert_eq!(d.train_indices().end, d.eval_indices().start);
        assert!(generate_lookup_chain(&TaskSpec::lookup(4, 0, 3), 1).is_err());
    }

    #[test]
    fn pairs_reject_delimiters() {
        let v = Vocabulary::new(3).unwrap();
        assert!(QAPair::new(&v, alloc::vec![4, 0], alloc::vec![5]).is_err());
        assert!(QAPair::new(&v, alloc::vec![4], alloc::vec![]).is_err());
        assert!(QAPair::new(&v, alloc::vec![4], alloc::vec![9]).is_err());
        assert!(QAPair::new(&v, alloc::vec![4, 2], alloc::vec![5, 3]).is_ok());
    }
}
