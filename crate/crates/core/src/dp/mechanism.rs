use rand::Rng;

use crate::error::{Error, Result};

/// Privacy parameters of one token draw.
///
/// `epsilon` is the budget of the set choice; the per-token guarantee of the
/// two-set mechanism is `epsilon + ln(vocab_size)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub sensitivity: f64,
    pub k_subset: usize,
    pub vocab_size: usize,
}

pub const DEFAULT_K_SUBSET: usize = 5;

impl DpParams {
    /// Sensitivity 1: set ratings are probability masses in [0, 1].
    pub fn new(epsilon: f64, k_subset: usize, vocab_size: usize) -> Result<Self> {
        let p = Self {
            epsilon,
            sensitivity: 1.0,
            k_subset,
            vocab_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_sensitivity(mut self, sensitivity: f64) -> Result<Self> {
        self.sensitivity = sensitivity;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(Error::invalid(format!("sensitivity must be positive, got {}", self.sensitivity)));
        }
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocabulary needs at least two outcomes"));
        }
        if self.k_subset == 0 || self.k_subset > self.vocab_size {
            return Err(Error::invalid(format!(
                "k_subset must be in 1..={}, got {}",
                self.vocab_size, self.k_subset
            )));
        }
        Ok(())
    }
}

/// Inverse-CDF sampler over non-negative weights.
#[derive(Debug, Clone)]
pub struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(weights.len());
        for &w in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("bad weight {w}")));
            }
            acc += w;
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::invalid("weights sum to zero"));
        }
        Ok(Self { cdf })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cdf.last().expect("non-empty");
        let u = rng.gen::<f64>() * total;
        let i = self.cdf.partition_point(|&c| c <= u);
        if i < self.cdf.len() {
            return i;
        }
        // u rounded onto the total: last index with positive weight
        let mut j = self.cdf.len() - 1;
        while j > 0 && self.cdf[j] == self.cdf[j - 1] {
            j -= 1;
        }
        j
    }
}

/// Exact output probabilities of the exponential mechanism:
/// `exp(eps * r / (2 * sensitivity))`, normalized.
pub fn exponential_probabilities(ratings: &[f64], epsilon: f64, sensitivity: f64) -> Result<Vec<f64>> {
    if ratings.is_empty() {
        return Err(Error::invalid("exponential mechanism over no outcomes"));
    }
    if let Some(r) = ratings.iter().find(|r| !r.is_finite()) {
        return Err(Error::invalid(format!("rating {r} is not finite")));
    }
    let scale = epsilon / (2.0 * sensitivity);
    let max = ratings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = ratings.iter().map(|r| (scale * (r - max)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

pub fn exponential_mechanism<R: Rng + ?Sized>(ratings: &[f64], dp: &DpParams, rng: &mut R) -> Result<usize> {
    let probs = exponential_probabilities(ratings, dp.epsilon, dp.sensitivity)?;
    Ok(Categorical::new(&probs)?.sample(rng))
}

/// How an item is picked once a set has been chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WithinSet {
    /// Uniform over the distinct members.
    #[default]
    Distinct,
    /// Uniform over the k draws, so repeated draws weigh more. Applies to S
    /// only; O is always uniform.
    Multiset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetChoice {
    S,
    O,
}

/// Model-sampled candidate set S and its complement O.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSets {
    n: usize,
    draws: Vec<usize>,
    in_s: Vec<bool>,
    members: Vec<usize>,
}

impl TwoSets {
    fn from_draws(n: usize, draws: Vec<usize>) -> Self {
        let mut in_s = vec![false; n];
        for &d in &draws {
            in_s[d] = true;
        }
        let members = (0..n).filter(|&i| in_s[i]).collect();
        Self {
            n,
            draws,
            in_s,
            members,
        }
    }

    /// Distinct members of S, ascending.
    pub fn s(&self) -> &[usize] {
        &self.members
    }

    pub fn o(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| !self.in_s[i]).collect()
    }

    pub fn o_len(&self) -> usize {
        self.n - self.members.len()
    }

    pub fn draws(&self) -> &[usize] {
        &self.draws
    }

    pub fn contains(&self, i: usize) -> bool {
        self.in_s[i]
    }

    /// Normalized probability mass of S; O's rating is `1 - rho_s`.
    pub fn rho_s(&self, probs: &[f64]) -> f64 {
        let total: f64 = probs.iter().sum();
        let mass: f64 = self.members.iter().map(|&i| probs[i]).sum();
        (mass / total).clamp(0.0, 1.0)
    }
}

/// `k` draws with replacement, proportional to `probs`.
pub fn build_two_sets<R: Rng + ?Sized>(probs: &[f64], k: usize, rng: &mut R) -> Result<TwoSets> {
    let cat = Categorical::new(probs)?;
    let draws = (0..k).map(|_| cat.sample(rng)).collect();
    Ok(TwoSets::from_draws(probs.len(), draws))
}

/// Probability of choosing S and O given S's rating. O's rating is
/// `1 - rho_s`.
pub fn set_choice_probs(rho_s: f64, epsilon: f64, sensitivity: f64) -> (f64, f64) {
    let p = exponential_probabilities(&[rho_s, 1.0 - rho_s], epsilon, sensitivity)
        .expect("two finite ratings");
    (p[0], p[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSetOutcome {
    pub sets: TwoSets,
    pub chosen: SetChoice,
    pub sampled: usize,
}

/// One draw of the two-set exponential mechanism over `probs.len()`
/// outcomes. If O is chosen but empty, the item is taken from S.
pub fn two_set_sample<R: Rng + ?Sized>(
    probs: &[f64],
    dp: &DpParams,
    rule: WithinSet,
    rng: &mut R,
) -> Result<TwoSetOutcome> {
    if probs.len() < 2 {
        return Err(Error::invalid("two-set mechanism needs at least two outcomes"));
    }
    let sets = build_two_sets(probs, dp.k_subset, rng)?;
    let (p_s, _) = set_choice_probs(sets.rho_s(probs), dp.epsilon, dp.sensitivity);
    let mut chosen = if rng.gen::<f64>() < p_s { SetChoice::S } else { SetChoice::O };
    if chosen == SetChoice::O && sets.o_len() == 0 {
        chosen = SetChoice::S;
    }
    let sampled = match (chosen, rule) {
        (SetChoice::S, WithinSet::Distinct) => sets.members[rng.gen_range(0..sets.members.len())],
        (SetChoice::S, WithinSet::Multiset) => sets.draws[rng.gen_range(0..sets.draws.len())],
        (SetChoice::O, _) => {
            let j = rng.gen_range(0..sets.o_len());
            (0..sets.n).filter(|&i| !sets.in_s[i]).nth(j).expect("j < |O|")
        }
    };
    Ok(TwoSetOutcome {
        sets,
        chosen,
        sampled,
    })
}

/// Upper limit on enumerated draw sequences.
pub const MAX_ENUMERATION: u128 = 10_000_000;

/// Exact `Pr[output = w]` for every outcome, by enumerating all `n^k` ordered
/// draw sequences, both set choices and the within-set pick.
pub fn exact_output_distribution(probs: &[f64], dp: &DpParams, rule: WithinSet) -> Result<Vec<f64>> {
    let n = probs.len();
    if n < 2 {
        return Err(Error::invalid("two-set mechanism needs at least two outcomes"));
    }
    let count = (n as u128).checked_pow(dp.k_subset as u32).unwrap_or(u128::MAX);
    if count > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge(count));
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("probabilities must be non-negative with positive mass"));
    }
    let p: Vec<f64> = probs.iter().map(|x| x / total).collect();
    let mut out = vec![0.0; n];
    let mut draws = Vec::with_capacity(dp.k_subset);
    enumerate(&p, dp, rule, 1.0, &mut draws, &mut out);
    Ok(out)
}

fn enumerate(p: &[f64], dp: &DpParams, rule: WithinSet, weight: f64, draws: &mut Vec<usize>, out: &mut [f64]) {
    if draws.len() == dp.k_subset {
        let sets = TwoSets::from_draws(p.len(), draws.clone());
        let (mut p_s, mut p_o) = set_choice_probs(sets.rho_s(p), dp.epsilon, dp.sensitivity);
        if sets.o_len() == 0 {
            p_s += p_o;
            p_o = 0.0;
        }
        match rule {
            WithinSet::Distinct => {
                let each = weight * p_s / sets.members.len() as f64;
                for &m in &sets.members {
                    out[m] += each;
                }
            }
            WithinSet::Multiset => {
                let each = weight * p_s / sets.draws.len() as f64;
                for &d in &sets.draws {
                    out[d] += each;
                }
            }
        }
        if p_o > 0.0 {
            let each = weight * p_o / sets.o_len() as f64;
            for (i, o) in out.iter_mut().enumerate() {
                if !sets.in_s[i] {
                    *o += each;
                }
            }
        }
        return;
    }
    for (i, &pi) in p.iter().enumerate() {
        if pi == 0.0 {
            continue;
        }
        draws.push(i);
        enumerate(p, dp, rule, weight * pi, draws, out);
        draws.pop();
    }
}
