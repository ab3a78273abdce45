//! Seeded multi-author toy corpus with matching word embeddings.
//!
//! Sentences come from shared templates. Each content slot names a word
//! category; the generator picks a synonym group from that category and then
//! one of the group's synonyms. Every author has a preferred synonym per group
//! (different authors prefer different ones) and uses it with probability
//! `preference`, which is the only author signal in the text.
//!
//! Embeddings place the synonyms of a group around a shared random center, so
//! synonyms are close in cosine while unrelated words are not.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const TEMPLATES: &[&str] = &[
    "the A N V the N .",
    "i R V my A N .",
    "we V the N and the N was A .",
    "this N is very A , but the N is A .",
    "they R V a N with the A N .",
    "it was a A N and i V it .",
    "my N V R , so we V the N .",
    "the N at the N was not A .",
    "you V a A N from the N .",
    "our N is just A and R A .",
    "she V the N in the A N .",
    "he was really A about the N !",
];

const CATEGORIES: [char; 4] = ['N', 'V', 'A', 'R'];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub authors: usize,
    pub sentences_per_author: usize,
    /// Synonym groups per category (noun, verb, adjective, adverb).
    pub groups_per_category: usize,
    pub synonyms_per_group: usize,
    /// Probability that an author uses its preferred synonym.
    pub preference: f64,
    pub emb_dim: usize,
    /// Per-coordinate noise around a group's unit-norm center.
    pub synonym_noise: f64,
    /// Multiplier applied to every written vector. Cosines do not depend on
    /// it; it sets the input magnitude seen by the encoder. The default gives
    /// coordinates of roughly unit size at width 16.
    pub vector_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            authors: 5,
            sentences_per_author: 60,
            groups_per_category: 10,
            synonyms_per_group: 5,
            preference: 0.85,
            emb_dim: 16,
            synonym_noise: 0.08,
            vector_scale: 4.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.authors < 2 || self.sentences_per_author == 0 {
            return Err(Error::invalid("need at least two authors with one sentence each"));
        }
        if self.groups_per_category == 0 || self.synonyms_per_group < 2 {
            return Err(Error::invalid("need at least one group of two synonyms per category"));
        }
        if !(0.0..=1.0).contains(&self.preference)
            || self.emb_dim == 0
            || !(self.synonym_noise >= 0.0)
            || !(self.vector_scale > 0.0)
        {
            return Err(Error::invalid(format!("invalid synthetic config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    /// One space-tokenized sentence per record.
    pub lines: Vec<String>,
    /// Author index of each line.
    pub authors: Vec<usize>,
    /// `groups[c][g]` lists the synonyms of group `g` in category `c`.
    pub groups: Vec<Vec<Vec<String>>>,
    /// Word-embedding text file: `token v1 .. vd` per line.
    pub embeddings: String,
}

impl SyntheticCorpus {
    pub fn corpus_text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }

    pub fn authors_text(&self) -> String {
        self.authors.iter().map(|a| format!("{a}\n")).collect()
    }

    /// The group a word belongs to, as `(category, group)`.
    pub fn group_of(&self, word: &str) -> Option<(usize, usize)> {
        self.groups.iter().enumerate().find_map(|(c, gs)| {
            gs.iter()
                .position(|g| g.iter().any(|w| w == word))
                .map(|g| (c, g))
        })
    }
}

fn frame_words() -> BTreeSet<&'static str> {
    TEMPLATES
        .iter()
        .flat_map(|t| t.split(' '))
        .filter(|w| !(w.len() == 1 && CATEGORIES.contains(&w.chars().next().unwrap_or(' '))))
        .collect()
}

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
        w.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    if rng.gen_bool(0.3) {
        w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
    }
    w
}

fn unit_gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

fn push_vector(out: &mut String, word: &str, v: &[f64], scale: f64) {
    out.push_str(word);
    for x in v {
        let _ = write!(out, " {:.6}", x * scale);
    }
    out.push('\n');
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frame = frame_words();
    let mut used: BTreeSet<String> = frame.iter().map(|w| w.to_string()).collect();

    let mut groups = vec![Vec::new(); CATEGORIES.len()];
    for cat in groups.iter_mut() {
        for _ in 0..cfg.groups_per_category {
            let mut g = Vec::with_capacity(cfg.synonyms_per_group);
            while g.len() < cfg.synonyms_per_group {
                let w = pseudo_word(&mut rng);
                if used.insert(w.clone()) {
                    g.push(w);
                }
            }
            cat.push(g);
        }
    }

    let mut embeddings = String::new();
    for w in &frame {
        push_vector(&mut embeddings, w, &unit_gaussian(cfg.emb_dim, &mut rng), cfg.vector_scale);
    }
    for cat in &groups {
        for g in cat {
            let center = unit_gaussian(cfg.emb_dim, &mut rng);
            for w in g {
                let v: Vec<f64> = center
                    .iter()
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + cfg.synonym_noise * z
                    })
                    .collect();
                push_vector(&mut embeddings, w, &v, cfg.vector_scale);
            }
        }
    }

    let templates: Vec<Vec<&str>> = TEMPLATES.iter().map(|t| t.split(' ').collect()).collect();
    let n_syn = cfg.synonyms_per_group;
    let mut lines = Vec::new();
    let mut authors = Vec::new();
    for author in 0..cfg.authors {
        for _ in 0..cfg.sentences_per_author {
            let t = templates.choose(&mut rng).expect("templates");
            let words: Vec<&str> = t
                .iter()
                .map(|slot| match CATEGORIES.iter().position(|c| slot.len() == 1 && slot.starts_with(*c)) {
                    Some(c) => {
                        let g = rng.gen_range(0..cfg.groups_per_category);
                        let preferred = (author + g + c) % n_syn;
                        let pick = if rng.gen_bool(cfg.preference) {
                            preferred
                        } else {
                            (preferred + rng.gen_range(1..n_syn)) % n_syn
                        };
                        groups[c][g][pick].as_str()
                    }
                    None => slot,
                })
                .collect();
            lines.push(words.join(" "));
            authors.push(author);
        }
    }
    // interleave authors so that file order carries no label information
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.shuffle(&mut rng);
    let lines = order.iter().map(|&i| lines[i].clone()).collect();
    let authors = order.iter().map(|&i| authors[i]).collect();

    Ok(SyntheticCorpus {
        lines,
        authors,
        groups,
        embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, tokenize, TokenizerRules};
    use crate::embedding::{cosine, embeddings_from_text};

    #[test]
    fn deterministic_and_sized() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.lines.len(), 300);
        for a_id in 0..5 {
            assert_eq!(a.authors.iter().filter(|&&x| x == a_id).count(), 60);
        }
        let other = generate(&SyntheticConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.lines, other.lines);
    }

    #[test]
    fn vocabulary_fits_desk_scale() {
        let c = generate(&SyntheticConfig::default()).unwrap();
        let rules = TokenizerRules::default();
        let toks: Vec<Vec<String>> = c.lines.iter().map(|l| tokenize(l, rules)).collect();
        for (l, t) in c.lines.iter().zip(&toks) {
            assert_eq!(t.join(" "), *l, "tokenizer must not re-split synthetic text");
        }
        let vocab = build_vocab(&toks, 2000).unwrap();
        assert!(vocab.size() <= 300, "{}", vocab.size());
    }

    #[test]
    fn synonyms_are_close() {
        let c = generate(&SyntheticConfig::default()).unwrap();
        let toks: Vec<Vec<String>> = c.lines.iter().map(|l| tokenize(l, TokenizerRules::default())).collect();
        let vocab = build_vocab(&toks, 2000).unwrap();
        let emb = embeddings_from_text(&c.embeddings, &vocab, 16, 0).unwrap();
        let g = &c.groups[0][0];
        let (Some(a), Some(b)) = (vocab.id(&g[0]), vocab.id(&g[1])) else {
            return;
        };
        assert!(cosine(emb.row(a), emb.row(b)).unwrap() > 0.8);
    }

    #[test]
    fn authors_prefer_their_synonym() {
        let cfg = SyntheticConfig::default();
        let c = generate(&cfg).unwrap();
        let (mut hit, mut total) = (0usize, 0usize);
        for (line, &author) in c.lines.iter().zip(&c.authors) {
            for w in line.split(' ') {
                if let Some((cat, g)) = c.group_of(w) {
                    total += 1;
                    let preferred = &c.groups[cat][g][(author + g + cat) % cfg.synonyms_per_group];
                    hit += usize::from(w == preferred);
                }
            }
        }
        let rate = hit as f64 / total as f64;
        assert!((rate - 0.85).abs() < 0.03, "{rate}");
    }
}
