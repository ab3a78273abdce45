//! Utility, privacy and style metrics for rewritten text, and the budget
//! sweep that ties them together.
//!
//! The semantic score is a proxy: the cosine between mean-pooled word
//! embeddings of the two texts. The authorship attacker is a multinomial
//! logistic regression over hashed character n-grams and word frequencies.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anonymizer::{anonymize_batch, word_distribution, BatchSetup, Method};
use crate::corpus::{is_special, TokenSequence, Vocabulary, NUM_SPECIALS};
use crate::dp::{exponential_probabilities, two_set_sample, DpParams, WithinSet};
use crate::embedding::{cosine_unchecked, gamma, EmbeddingTable};
use crate::error::{Error, Result};
use crate::model::{top_k_ids, ModelParams};
use crate::nn::{AdamConfig, AdamState, Graph, ParamId, ParamStore};

pub const FUNCTION_WORD_COUNT: usize = 50;
pub const STYLO_DIM: usize = 4 + FUNCTION_WORD_COUNT + 3;

const FUNCTION_WORDS_FILE: &str = include_str!("../data/function_words.txt");

/// The fixed function-word list, in feature order.
pub fn function_words() -> &'static [String] {
    static WORDS: OnceLock<Vec<String>> = OnceLock::new();
    WORDS.get_or_init(|| {
        let words: Vec<String> = FUNCTION_WORDS_FILE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_owned)
            .collect();
        assert_eq!(words.len(), FUNCTION_WORD_COUNT, "function word list must have 50 entries");
        words
    })
}

fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| !c.is_alphanumeric())
}

/// Context-free style features of a tokenized text:
/// token count, character count, mean word length, type-token ratio, the
/// relative frequency of each function word, then the punctuation-token
/// fraction, digit ratio and uppercase ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct StyloVector(Vec<f64>);

impl StyloVector {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut v = Vec::with_capacity(STYLO_DIM);
        let n = tokens.len();
        let nf = n.max(1) as f64;
        let letters: usize = tokens.iter().map(|t| t.as_ref().chars().count()).sum();
        v.push(n as f64);
        v.push((letters + n.saturating_sub(1)) as f64);
        v.push(letters as f64 / nf);
        let types: std::collections::HashSet<&str> = tokens.iter().map(|t| t.as_ref()).collect();
        v.push(types.len() as f64 / nf);
        for w in function_words() {
            v.push(tokens.iter().filter(|t| t.as_ref() == w).count() as f64 / nf);
        }
        v.push(tokens.iter().filter(|t| is_punctuation(t.as_ref())).count() as f64 / nf);
        let chars = || tokens.iter().flat_map(|t| t.as_ref().chars());
        let digits = chars().filter(char::is_ascii_digit).count();
        v.push(if letters == 0 { 0.0 } else { digits as f64 / letters as f64 });
        let alpha = chars().filter(|c| c.is_alphabetic()).count();
        let upper = chars().filter(|c| c.is_uppercase()).count();
        v.push(if alpha == 0 { 0.0 } else { upper as f64 / alpha as f64 });
        debug_assert_eq!(v.len(), STYLO_DIM);
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn l2_distance(&self, other: &StyloVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// L2 distance between the style vectors of two decoded texts.
pub fn stylometric_distance(orig: &TokenSequence, gen: &TokenSequence, vocab: &Vocabulary) -> f64 {
    StyloVector::from_tokens(&vocab.decode(orig)).l2_distance(&StyloVector::from_tokens(&vocab.decode(gen)))
}

fn mean_pool(x: &TokenSequence, emb: &EmbeddingTable) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; emb.dim()];
    let mut n = 0usize;
    for &id in x.ids().iter().filter(|&&id| !is_special(id)) {
        n += 1;
        acc.iter_mut().zip(emb.row(id)).for_each(|(a, v)| *a += v);
    }
    (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect())
}

/// Cosine between the mean non-special embeddings of the two texts. A text
/// made only of specials scores 0.
pub fn semantic_similarity(orig: &TokenSequence, gen: &TokenSequence, emb: &EmbeddingTable) -> f64 {
    match (mean_pool(orig, emb), mean_pool(gen, emb)) {
        (Some(a), Some(b)) => cosine_unchecked(&a, &b),
        _ => {
            log::warn!("semantic similarity of a text without words is taken as 0");
            0.0
        }
    }
}

pub const NGRAM_BUCKETS: usize = 4096;
pub const NGRAM_ORDERS: std::ops::RangeInclusive<usize> = 2..=4;

fn fnv1a(bytes: impl Iterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Dense features: hashed character 2-4-gram relative frequencies over the
/// space-joined text, followed by word relative frequencies by vocabulary id.
fn attack_features(x: &TokenSequence, vocab: &Vocabulary) -> Vec<f64> {
    let mut f = vec![0.0; NGRAM_BUCKETS + vocab.size()];
    let text: Vec<char> = format!(" {} ", vocab.decode_string(x)).chars().collect();
    let mut grams = 0usize;
    let mut buf = [0u8; 4];
    for n in NGRAM_ORDERS {
        for w in text.windows(n) {
            let h = fnv1a(w.iter().flat_map(|c| c.encode_utf8(&mut buf).as_bytes().to_vec()));
            f[(h % NGRAM_BUCKETS as u64) as usize] += 1.0;
            grams += 1;
        }
    }
    if grams > 0 {
        f[..NGRAM_BUCKETS].iter_mut().for_each(|v| *v /= grams as f64);
    }
    let len = x.len() as f64;
    for &id in x.ids() {
        f[NGRAM_BUCKETS + id as usize] += 1.0 / len;
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 16,
            lr: 0.05,
            seed: 0,
        }
    }
}

/// Trained authorship classifier.
#[derive(Debug, Clone)]
pub struct AttackModel {
    authors: usize,
    vocab_size: usize,
    store: ParamStore,
    w: ParamId,
    b: ParamId,
}

impl AttackModel {
    pub fn authors(&self) -> usize {
        self.authors
    }

    fn logits(&self, features: &[f64]) -> Vec<f64> {
        let w = &self.store.get(self.w).data;
        let b = &self.store.get(self.b).data;
        let d = features.len();
        (0..self.authors)
            .map(|a| {
                b[a] + w[a * d..(a + 1) * d]
                    .iter()
                    .zip(features)
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: &TokenSequence, vocab: &Vocabulary) -> Result<usize> {
        if vocab.size() != self.vocab_size {
            return Err(Error::dims(format!(
                "attack trained on a vocabulary of {}, got {}",
                self.vocab_size,
                vocab.size()
            )));
        }
        let logits = self.logits(&attack_features(x, vocab));
        Ok((0..logits.len())
            .max_by(|&i, &j| logits[i].total_cmp(&logits[j]).then(j.cmp(&i)))
            .unwrap_or(0))
    }

    pub fn accuracy(&self, labeled: &[(TokenSequence, usize)], vocab: &Vocabulary) -> Result<f64> {
        if labeled.is_empty() {
            return Ok(0.0);
        }
        let mut hit = 0usize;
        for (x, a) in labeled {
            hit += usize::from(self.predict(x, vocab)? == *a);
        }
        Ok(hit as f64 / labeled.len() as f64)
    }
}

/// Fits the authorship classifier with Adam on mean cross-entropy.
pub fn train_authorship_attack(
    labeled: &[(TokenSequence, usize)],
    vocab: &Vocabulary,
    cfg: &AttackConfig,
) -> Result<AttackModel> {
    let authors = labeled.iter().map(|(_, a)| a + 1).max().unwrap_or(0);
    let mut counts = vec![0usize; authors];
    labeled.iter().for_each(|(_, a)| counts[*a] += 1);
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.len() < 2 {
        return Err(Error::invalid("authorship attack needs at least two authors"));
    }
    if present.iter().any(|&c| c < 2) {
        return Err(Error::invalid("authorship attack needs two samples per author"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let d = NGRAM_BUCKETS + vocab.size();
    let features: Vec<Vec<f64>> = labeled.iter().map(|(x, _)| attack_features(x, vocab)).collect();
    let mut store = ParamStore::new();
    let w = store.add_zeros("attack.w", vec![authors, d]);
    let b = store.add_zeros("attack.b", vec![authors]);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            store.zero_grads();
            let grads = {
                let mut g = Graph::new();
                let wn = g.param(&store, w);
                let bn = g.param(&store, b);
                let mut terms = Vec::with_capacity(batch.len());
                for &i in batch {
                    let x = g.constant_slice(&features[i]);
                    let z = g.matmul(wn, x)?;
                    let z = g.add(z, bn)?;
                    let p = g.softmax(z);
                    let pa = g.pick(p, labeled[i].1)?;
                    terms.push(g.log(pa));
                }
                let s = g.sum(&terms)?;
                let loss = g.scale(s, -1.0 / batch.len() as f64);
                g.backward(loss)?
            };
            store.accumulate(&grads, 1.0);
            adam.update(&mut store)?;
        }
    }
    if !store.all_finite() {
        return Err(Error::Diverged("authorship attack weights are not finite".into()));
    }
    Ok(AttackModel {
        authors,
        vocab_size: vocab.size(),
        store,
        w,
        b,
    })
}

/// One original text, its rewrite and the true author.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub orig: TokenSequence,
    pub gen: TokenSequence,
    pub author: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub semantic_proxy: f64,
    pub authorship_acc: f64,
    pub stylo_l2: f64,
}

/// Means over pairs; the attack is run on the rewritten texts.
pub fn evaluate(pairs: &[EvalPair], attack: &AttackModel, emb: &EmbeddingTable, vocab: &Vocabulary) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let n = pairs.len() as f64;
    let (mut sem, mut hit, mut sty) = (0.0, 0usize, 0.0);
    for p in pairs {
        sem += semantic_similarity(&p.orig, &p.gen, emb);
        sty += stylometric_distance(&p.orig, &p.gen, vocab);
        hit += usize::from(attack.predict(&p.gen, vocab)? == p.author);
    }
    Ok(Metrics {
        semantic_proxy: sem / n,
        authorship_acc: hit as f64 / n,
        stylo_l2: sty / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    /// Empty for the original text and for Random-R.
    pub eps: Option<f64>,
    /// Largest per-record `(eps + ln s) * l` in the evaluated set.
    pub eps_effective_total: Option<f64>,
    pub metrics: Metrics,
}

pub const REPORT_HEADER: &str = "method,eps,eps_effective_total,semantic_proxy,authorship_acc,stylo_l2";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with [`REPORT_HEADER`]. Floats use the shortest representation that
/// parses back to the same value.
pub fn report_csv(rows: &[EvalReport]) -> String {
    let mut s = format!("{REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.method,
            opt(r.eps),
            opt(r.eps_effective_total),
            r.metrics.semantic_proxy,
            r.metrics.authorship_acc,
            r.metrics.stylo_l2
        );
    }
    s
}

pub fn parse_report_csv(text: &str) -> Result<Vec<EvalReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: "unexpected report header".into(),
        });
    }
    let num = |s: &str, line: usize| {
        s.parse::<f64>().map_err(|e| Error::Parse {
            line,
            msg: format!("{s:?}: {e}"),
        })
    };
    let opt_num = |s: &str, line: usize| if s.is_empty() { Ok(None) } else { num(s, line).map(Some) };
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 2;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 6 fields, got {}", f.len()),
                });
            }
            Ok(EvalReport {
                method: f[0].to_string(),
                eps: opt_num(f[1], line)?,
                eps_effective_total: opt_num(f[2], line)?,
                metrics: Metrics {
                    semantic_proxy: num(f[3], line)?,
                    authorship_acc: num(f[4], line)?,
                    stylo_l2: num(f[5], line)?,
                },
            })
        })
        .collect()
}

/// Whitespace-separated plot data with the report columns; `-` marks an
/// empty value.
pub fn plot_data(rows: &[EvalReport]) -> String {
    let mut s = format!("# {}\n", REPORT_HEADER.replace(',', " "));
    let dash = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
    for r in rows {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            r.method,
            dash(r.eps),
            dash(r.eps_effective_total),
            r.metrics.semantic_proxy,
            r.metrics.authorship_acc,
            r.metrics.stylo_l2
        );
    }
    s
}

/// Inputs shared by every row of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup<'a> {
    /// Evaluation records and their authors.
    pub records: &'a [(TokenSequence, usize)],
    pub attack: &'a AttackModel,
    pub er_ae: Option<&'a ModelParams>,
    pub ae_dp: Option<&'a ModelParams>,
    pub methods: Vec<Method>,
    pub vocab: &'a Vocabulary,
    pub emb: &'a EmbeddingTable,
    pub k_subset: usize,
    pub rule: WithinSet,
    pub seed: u64,
}

/// Metrics of one method at one budget. Every record uses the same random
/// stream at every budget, so rows differ only through the budget.
pub fn evaluate_method(method: Method, eps: f64, setup: &SweepSetup<'_>) -> Result<EvalReport> {
    let model = match method {
        Method::ErAe => setup.er_ae,
        Method::AeDp => setup.ae_dp,
        _ => None,
    };
    let batch = BatchSetup {
        vocab: setup.vocab,
        emb: setup.emb,
        model,
        k_subset: setup.k_subset,
        rule: setup.rule,
        seed: setup.seed,
    };
    let seqs: Vec<TokenSequence> = setup.records.iter().map(|(x, _)| x.clone()).collect();
    let out = anonymize_batch(method, &seqs, eps, &batch)?;
    let eps_effective_total = out
        .iter()
        .filter_map(|g| g.ledger.map(|l| l.total))
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));
    let pairs: Vec<EvalPair> = setup
        .records
        .iter()
        .zip(out)
        .map(|((x, a), g)| EvalPair {
            orig: x.clone(),
            gen: g.ids,
            author: *a,
        })
        .collect();
    Ok(EvalReport {
        method: method.to_string(),
        eps: method.is_dp().then_some(eps),
        eps_effective_total,
        metrics: evaluate(&pairs, setup.attack, setup.emb, setup.vocab)?,
    })
}

/// The original-text row: the attack on unmodified text.
pub fn original_row(setup: &SweepSetup<'_>) -> Result<EvalReport> {
    let pairs: Vec<EvalPair> = setup
        .records
        .iter()
        .map(|(x, a)| EvalPair {
            orig: x.clone(),
            gen: x.clone(),
            author: *a,
        })
        .collect();
    Ok(EvalReport {
        method: "original".into(),
        eps: None,
        eps_effective_total: None,
        metrics: evaluate(&pairs, setup.attack, setup.emb, setup.vocab)?,
    })
}

/// Original row, then for each method one row per budget (Random-R once).
pub fn sweep(eps_grid: &[f64], setup: &SweepSetup<'_>) -> Result<Vec<EvalReport>> {
    if eps_grid.is_empty() {
        return Err(Error::invalid("empty epsilon grid"));
    }
    let mut rows = vec![original_row(setup)?];
    for &method in &setup.methods {
        if method.is_dp() {
            for &eps in eps_grid {
                rows.push(evaluate_method(method, eps, setup)?);
            }
        } else {
            rows.push(evaluate_method(method, eps_grid[0], setup)?);
        }
    }
    Ok(rows)
}

/// Shape of a model's per-step distributions over a set of texts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStats {
    /// Mean entropy (nats) of the per-step distributions.
    pub mean_entropy: f64,
    /// Mean `gamma(x_i, v)` over each step's five most probable tokens other
    /// than `x_i`.
    pub mean_top5_gamma: f64,
}

pub fn distribution_stats(model: &ModelParams, emb: &EmbeddingTable, seqs: &[TokenSequence]) -> Result<DistributionStats> {
    let (mut ent, mut gam, mut steps, mut cands) = (0.0, 0.0, 0usize, 0usize);
    for x in seqs {
        for (d, &orig) in model.distributions(x, emb)?.iter().zip(x.ids()) {
            ent += d.entropy();
            steps += 1;
            for v in top_k_ids(d.probs(), 6).into_iter().filter(|&v| v != orig).take(5) {
                gam += gamma(orig, v, emb);
                cands += 1;
            }
        }
    }
    Ok(DistributionStats {
        mean_entropy: ent / steps.max(1) as f64,
        mean_top5_gamma: gam / cands.max(1) as f64,
    })
}

fn top_k_mask(word_probs: &[f64], k: usize) -> Vec<bool> {
    let mut mask = vec![false; word_probs.len()];
    for v in top_k_ids(word_probs, k) {
        mask[v as usize] = true;
    }
    mask
}

/// Monte-Carlo estimate of how often a two-set draw lands in the model's
/// top-`k` words, with `draws` samples per position.
pub fn two_set_top_k_rate<R: Rng + ?Sized>(
    model: &ModelParams,
    emb: &EmbeddingTable,
    seqs: &[TokenSequence],
    dp: &DpParams,
    rule: WithinSet,
    k: usize,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for x in seqs {
        for d in model.distributions(x, emb)? {
            let words = word_distribution(&d);
            let mask = top_k_mask(&words, k);
            for _ in 0..draws {
                hit += usize::from(mask[two_set_sample(&words, dp, rule, rng)?.sampled]);
                total += 1;
            }
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

/// Exact probability that the plain exponential mechanism, rating every word
/// by its model probability, lands in the model's top-`k` words; averaged
/// over positions.
pub fn exponential_top_k_probability(
    model: &ModelParams,
    emb: &EmbeddingTable,
    seqs: &[TokenSequence],
    dp: &DpParams,
    k: usize,
) -> Result<f64> {
    let (mut acc, mut steps) = (0.0, 0usize);
    for x in seqs {
        for d in model.distributions(x, emb)? {
            let words = word_distribution(&d);
            let mask = top_k_mask(&words, k);
            let probs = exponential_probabilities(&words, dp.epsilon, dp.sensitivity)?;
            acc += probs.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| p).sum::<f64>();
            steps += 1;
        }
    }
    Ok(acc / steps.max(1) as f64)
}

/// Number of candidate words seen by the mechanisms for a vocabulary.
pub fn candidate_count(vocab: &Vocabulary) -> usize {
    vocab.size() - NUM_SPECIALS
}
