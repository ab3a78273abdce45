//! Differentially private rewriting of token sequences, plus the baselines
//! used for comparison.
//!
//! All samplers take an explicit RNG. The seeded ChaCha generators used by
//! the CLI make runs reproducible; a deployment that relies on the privacy
//! guarantee should seed from the operating system's CSPRNG instead.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::{TokenSequence, Vocabulary, NUM_SPECIALS};
use crate::dp::{
    compose_budget, exponential_mechanism, two_set_sample, BudgetLedger, DpParams, TwoSetOutcome, WithinSet,
};
use crate::embedding::{cosine, EmbeddingTable};
use crate::error::{Error, Result};
use crate::model::{ModelParams, TokenDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ErAe,
    AeDp,
    RandomR,
    SynTf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::ErAe, Method::AeDp, Method::RandomR, Method::SynTf];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ErAe => "er-ae",
            Method::AeDp => "ae-dp",
            Method::RandomR => "random-r",
            Method::SynTf => "syntf",
        }
    }

    /// Random-R spends no budget and carries no ledger.
    pub fn is_dp(self) -> bool {
        self != Method::RandomR
    }

    /// Methods that sample from a trained autoencoder.
    pub fn needs_model(self) -> bool {
        matches!(self, Method::ErAe | Method::AeDp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedText {
    pub ids: TokenSequence,
    pub surface: String,
    /// `None` for Random-R.
    pub ledger: Option<BudgetLedger>,
    pub method: Method,
}

/// Word-only probabilities: specials are dropped and the remaining mass is
/// renormalized. Index `j` corresponds to token id `j + NUM_SPECIALS`.
pub fn word_distribution(dist: &TokenDistribution) -> Vec<f64> {
    let words = &dist.probs()[NUM_SPECIALS..];
    let total: f64 = words.iter().sum();
    if total > 0.0 && total.is_finite() {
        words.iter().map(|p| p / total).collect()
    } else {
        vec![1.0 / words.len() as f64; words.len()]
    }
}

fn check_dp_space(dp: &DpParams, vocab_size: usize) -> Result<usize> {
    dp.validate()?;
    if dp.vocab_size != vocab_size {
        return Err(Error::invalid(format!(
            "privacy parameters are for a vocabulary of {} but the model has {}",
            dp.vocab_size, vocab_size
        )));
    }
    let words = vocab_size.saturating_sub(NUM_SPECIALS);
    if words < 2 || dp.k_subset > words {
        return Err(Error::invalid(format!(
            "k_subset {} needs at least that many non-special words, have {words}",
            dp.k_subset
        )));
    }
    Ok(words)
}

fn check_length(x: &TokenSequence, max_len: usize) -> Result<()> {
    if x.len() > max_len {
        return Err(Error::TooLong {
            len: x.len(),
            max_len,
        });
    }
    Ok(())
}

/// Per-position mechanism outcomes, in candidate-space indices. Exposed for
/// diagnostics such as top-k hit rates.
pub fn two_set_outcomes<R: Rng + ?Sized>(
    dists: &[TokenDistribution],
    dp: &DpParams,
    rule: WithinSet,
    rng: &mut R,
) -> Result<Vec<TwoSetOutcome>> {
    dists
        .iter()
        .map(|d| two_set_sample(&word_distribution(d), dp, rule, rng))
        .collect()
}

fn from_model<R: Rng + ?Sized>(
    method: Method,
    x: &TokenSequence,
    model: &ModelParams,
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
    dp: &DpParams,
    rule: WithinSet,
    rng: &mut R,
) -> Result<GeneratedText> {
    check_dp_space(dp, model.config.vocab_size)?;
    if vocab.size() != model.config.vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary has {} tokens but the model has {}",
            vocab.size(),
            model.config.vocab_size
        )));
    }
    check_length(x, model.config.max_len)?;
    let dists = model.distributions(x, emb)?;
    let ids = two_set_outcomes(&dists, dp, rule, rng)?
        .into_iter()
        .map(|o| (o.sampled + NUM_SPECIALS) as u32)
        .collect();
    let ids = TokenSequence::new(ids, vocab.size())?;
    Ok(GeneratedText {
        surface: vocab.decode_string(&ids),
        ledger: Some(compose_budget(dp, x.len())?),
        ids,
        method,
    })
}

/// Rewrites `x`: one encoding, one teacher-forced pass for the per-step
/// distributions, then an independent two-set draw per position.
pub fn anonymize<R: Rng + ?Sized>(
    x: &TokenSequence,
    model: &ModelParams,
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
    dp: &DpParams,
    rule: WithinSet,
    rng: &mut R,
) -> Result<GeneratedText> {
    from_model(Method::ErAe, x, model, emb, vocab, dp, rule, rng)
}

/// Same pipeline as [`anonymize`], for a model trained without the embedding
/// reward.
pub fn ae_dp_baseline<R: Rng + ?Sized>(
    x: &TokenSequence,
    model: &ModelParams,
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
    dp: &DpParams,
    rule: WithinSet,
    rng: &mut R,
) -> Result<GeneratedText> {
    from_model(Method::AeDp, x, model, emb, vocab, dp, rule, rng)
}

/// Each position replaced by a uniform non-special token.
pub fn random_replacement<R: Rng + ?Sized>(x: &TokenSequence, vocab: &Vocabulary, rng: &mut R) -> Result<GeneratedText> {
    let range = vocab.word_ids();
    if range.is_empty() {
        return Err(Error::invalid("vocabulary has no words"));
    }
    let ids = (0..x.len()).map(|_| rng.gen_range(range.clone())).collect();
    let ids = TokenSequence::new(ids, vocab.size())?;
    Ok(GeneratedText {
        surface: vocab.decode_string(&ids),
        ledger: None,
        ids,
        method: Method::RandomR,
    })
}

/// Exponential mechanism per position over all words, rated by
/// `(cosine(x_i, v) + 1) / 2` with sensitivity 1.
pub fn syntf_baseline<R: Rng + ?Sized>(
    x: &TokenSequence,
    emb: &EmbeddingTable,
    vocab: &Vocabulary,
    dp: &DpParams,
    rng: &mut R,
) -> Result<GeneratedText> {
    check_dp_space(dp, vocab.size())?;
    if emb.len() != vocab.size() {
        return Err(Error::dims(format!("{} embeddings for {} tokens", emb.len(), vocab.size())));
    }
    let words = vocab.word_ids();
    let mut ids = Vec::with_capacity(x.len());
    for &orig in x.ids() {
        let ratings = words
            .clone()
            .map(|v| cosine(emb.row(orig), emb.row(v)).map(|c| (c + 1.0) / 2.0))
            .collect::<Result<Vec<f64>>>()?;
        ids.push(exponential_mechanism(&ratings, dp, rng)? as u32 + words.start);
    }
    let ids = TokenSequence::new(ids, vocab.size())?;
    Ok(GeneratedText {
        surface: vocab.decode_string(&ids),
        ledger: Some(compose_budget(dp, x.len())?),
        ids,
        method: Method::SynTf,
    })
}

/// Independent generator for record `index` of a batch: one seed, one
/// stream per record, so records can be processed in any order.
pub fn record_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Everything a batch run needs besides the method and budget.
#[derive(Debug, Clone, Copy)]
pub struct BatchSetup<'a> {
    pub vocab: &'a Vocabulary,
    pub emb: &'a EmbeddingTable,
    /// Required for ER-AE and AE-DP.
    pub model: Option<&'a ModelParams>,
    pub k_subset: usize,
    pub rule: WithinSet,
    pub seed: u64,
}

/// Rewrites every record with `method`. Random-R ignores `eps`.
pub fn anonymize_batch(
    method: Method,
    records: &[TokenSequence],
    eps: f64,
    setup: &BatchSetup<'_>,
) -> Result<Vec<GeneratedText>> {
    let dp = if method.is_dp() {
        Some(DpParams::new(eps, setup.k_subset, setup.vocab.size())?)
    } else {
        None
    };
    let model = match (method.needs_model(), setup.model) {
        (true, None) => return Err(Error::invalid(format!("method {method} needs a trained model"))),
        (_, m) => m,
    };
    records
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = record_rng(setup.seed, i);
            match (method, dp.as_ref(), model) {
                (Method::ErAe, Some(dp), Some(m)) => anonymize(x, m, setup.emb, setup.vocab, dp, setup.rule, &mut rng),
                (Method::AeDp, Some(dp), Some(m)) => {
                    ae_dp_baseline(x, m, setup.emb, setup.vocab, dp, setup.rule, &mut rng)
                }
                (Method::SynTf, Some(dp), _) => syntf_baseline(x, setup.emb, setup.vocab, dp, &mut rng),
                (Method::RandomR, _, _) => random_replacement(x, setup.vocab, &mut rng),
                _ => unreachable!("parameters checked above"),
            }
        })
        .collect()
}

/// Sidecar rows for a batch: `line_no, method, eps, eps_effective_total`.
/// Line numbers start at 1; the budget columns are empty for Random-R.
pub fn ledger_csv(outputs: &[GeneratedText], eps: f64) -> String {
    let mut s = String::from("line_no,method,eps,eps_effective_total\n");
    for (i, g) in outputs.iter().enumerate() {
        match &g.ledger {
            Some(l) => {
                let _ = writeln!(s, "{},{},{},{}", i + 1, g.method, eps, l.total);
            }
            None => {
                let _ = writeln!(s, "{},{},,", i + 1, g.method);
            }
        }
    }
    s
}
