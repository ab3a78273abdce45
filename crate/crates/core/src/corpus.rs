//! Corpus ingestion: tokenization, frequency-ranked vocabulary, encoding and
//! the 70/10/20 train/dev/test split.
//!
//! One line of a corpus file is one record; each record is anonymized on its
//! own.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const NUM_SPECIALS: usize = 4;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Default maximum record length in tokens.
pub const DEFAULT_MAX_LEN: usize = 50;
/// Default vocabulary size, specials included.
pub const DEFAULT_VOCAB_SIZE: usize = 20_000;

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Tokenizer switches. The default rule set lowercases, splits on whitespace,
/// detaches runs of punctuation and splits contractions before the apostrophe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerRules {
    pub lowercase: bool,
    pub split_contractions: bool,
}

impl Default for TokenizerRules {
    fn default() -> Self {
        Self {
            lowercase: true,
            split_contractions: true,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Punct,
}

fn classify(c: char) -> Class {
    if c.is_alphanumeric() {
        Class::Word
    } else {
        Class::Punct
    }
}

pub fn tokenize(raw_text: &str, rules: TokenizerRules) -> Vec<String> {
    let text = if rules.lowercase {
        raw_text.to_lowercase()
    } else {
        raw_text.to_string()
    };
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut cur = String::new();
        let mut cur_class: Option<Class> = None;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            // apostrophe followed by a letter opens a suffix token: "i'm" -> "i", "'m"
            if rules.split_contractions
                && c == '\''
                && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
                && cur_class != Some(Class::Punct)
            {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                cur.push(c);
                cur_class = Some(Class::Word);
                i += 1;
                continue;
            }
            let class = classify(c);
            if cur_class.is_some_and(|k| k != class) && !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            cur.push(c);
            cur_class = Some(class);
            i += 1;
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit list of non-special tokens, in id
    /// order. Duplicates and special names are rejected.
    pub fn from_tokens<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for w in words {
            let w = w.into();
            if index.contains_key(&w) {
                return Err(Error::invalid(format!("duplicate vocabulary token {w:?}")));
            }
            index.insert(w.clone(), tokens.len() as u32);
            tokens.push(w);
        }
        Ok(Self { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Ids of every non-special token.
    pub fn word_ids(&self) -> std::ops::Range<u32> {
        NUM_SPECIALS as u32..self.tokens.len() as u32
    }

    pub fn decode(&self, seq: &TokenSequence) -> Vec<&str> {
        seq.ids()
            .iter()
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]))
            .collect()
    }

    pub fn decode_string(&self, seq: &TokenSequence) -> String {
        self.decode(seq).join(" ")
    }

    /// One token per line; line number is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS {
            return Err(Error::Parse {
                line: lines.len() + 1,
                msg: "vocabulary file is missing special tokens".into(),
            });
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if lines[i] != *special {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected special token {special}, found {:?}", lines[i]),
                });
            }
        }
        Self::from_tokens(lines[NUM_SPECIALS..].iter().copied())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Keeps the `max_size - 4` most frequent tokens (ties broken
/// lexicographically) after the four specials.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], max_size: usize) -> Result<Vocabulary> {
    if max_size < NUM_SPECIALS + 1 {
        return Err(Error::invalid(format!(
            "max vocabulary size must be at least {}, got {max_size}",
            NUM_SPECIALS + 1
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for record in corpus {
        for tok in record {
            let tok = tok.as_ref();
            if SPECIAL_TOKENS.contains(&tok) {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - NUM_SPECIALS);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// A record as token ids. Non-empty, and never holds PAD in the interior.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>, vocab_size: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                size: vocab_size,
            });
        }
        let last = ids.len() - 1;
        if ids[..last].contains(&PAD) {
            return Err(Error::invalid("PAD inside a token sequence"));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn encode<S: AsRef<str>>(
    words: &[S],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<TokenSequence> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    if words.is_empty() {
        return Err(Error::EmptyText);
    }
    let ids = words
        .iter()
        .take(max_len)
        .map(|w| vocab.id(w.as_ref()).unwrap_or(UNK))
        .collect();
    TokenSequence::new(ids, vocab.size())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Dev,
    Test,
}

impl SplitPart {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Dev => "dev",
            SplitPart::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitPart::Train),
            "dev" => Some(SplitPart::Dev),
            "test" => Some(SplitPart::Test),
            _ => None,
        }
    }
}

pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.7, 0.1, 0.2);

/// Record indices for each part of a 70/10/20 split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitAssignment {
    pub fn part_of(&self, n_records: usize) -> Vec<SplitPart> {
        let mut parts = vec![SplitPart::Train; n_records];
        for &i in &self.dev {
            parts[i] = SplitPart::Dev;
        }
        for &i in &self.test {
            parts[i] = SplitPart::Test;
        }
        parts
    }

    /// `record_index<TAB>part` lines in record order.
    pub fn manifest(&self) -> String {
        let n = self.train.len() + self.dev.len() + self.test.len();
        let mut s = String::new();
        for (i, part) in self.part_of(n).into_iter().enumerate() {
            let _ = writeln!(s, "{i}\t{}", part.as_str());
        }
        s
    }

    pub fn parse_manifest(text: &str) -> Result<Self> {
        let mut out = SplitAssignment {
            train: vec![],
            dev: vec![],
            test: vec![],
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            let (idx, part) = line.split_once('\t').ok_or_else(|| err("missing tab"))?;
            let idx: usize = idx.parse().map_err(|_| err("bad record index"))?;
            match SplitPart::parse(part.trim()) {
                Some(SplitPart::Train) => out.train.push(idx),
                Some(SplitPart::Dev) => out.dev.push(idx),
                Some(SplitPart::Test) => out.test.push(idx),
                None => return Err(err("unknown split part")),
            }
        }
        Ok(out)
    }
}

pub fn split_indices(n_records: usize, seed: u64) -> Result<SplitAssignment> {
    if n_records < 10 {
        return Err(Error::invalid(format!(
            "split needs at least 10 records, got {n_records}"
        )));
    }
    let mut order: Vec<usize> = (0..n_records).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n_records as f64 * SPLIT_FRACTIONS.0).round() as usize;
    let n_dev = (n_records as f64 * SPLIT_FRACTIONS.1).round() as usize;
    let test = order.split_off(n_train + n_dev);
    let dev = order.split_off(n_train);
    Ok(SplitAssignment {
        train: order,
        dev,
        test,
    })
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<TokenSequence>,
    pub dev: Vec<TokenSequence>,
    pub test: Vec<TokenSequence>,
    pub assignment: SplitAssignment,
}

pub fn split(corpus: &[TokenSequence], seed: u64) -> Result<CorpusSplit> {
    let assignment = split_indices(corpus.len(), seed)?;
    Ok(apply_split(corpus, assignment))
}

pub fn apply_split(corpus: &[TokenSequence], assignment: SplitAssignment) -> CorpusSplit {
    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect();
    CorpusSplit {
        train: pick(&assignment.train),
        dev: pick(&assignment.dev),
        test: pick(&assignment.test),
        assignment,
    }
}

/// Reads a corpus file: one record per line, blank lines dropped.
pub fn read_corpus(path: &Path, rules: TokenizerRules) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| tokenize(l, rules))
        .filter(|t| !t.is_empty())
        .collect())
}
