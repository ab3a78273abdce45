use rand::Rng;

use super::TokenDistribution;
use crate::corpus::{TokenSequence, PAD};
use crate::embedding::{gamma, EmbeddingTable};
use crate::error::{Error, Result};
use crate::nn::graph::LOG_CLAMP;
use crate::nn::{Graph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub lambda_recon: f64,
    pub lambda_embed: f64,
    /// Size of both the top-k and the random exploration set of the reward.
    pub k_reward: usize,
    /// Epochs of reconstruction-only training before the reward is added.
    pub pretrain_epochs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_recon: 1.0,
            lambda_embed: 0.5,
            k_reward: 5,
            pretrain_epochs: 5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_recon >= 0.0 && self.lambda_embed >= 0.0) || self.k_reward == 0 {
            return Err(Error::invalid(format!("invalid loss config {self:?}")));
        }
        Ok(())
    }
}

/// The `k` most probable ids, highest first; ties go to the lower id.
pub fn top_k_ids(probs: &[f64], k: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..probs.len() as u32).collect();
    let k = k.min(ids.len());
    let cmp = |a: &u32, b: &u32| {
        probs[*b as usize]
            .total_cmp(&probs[*a as usize])
            .then(a.cmp(b))
    };
    if k < ids.len() {
        ids.select_nth_unstable_by(k, cmp);
        ids.truncate(k);
    }
    ids.sort_by(cmp);
    ids
}

/// `k` i.i.d. uniform draws over the whole vocabulary (duplicates allowed).
pub fn sample_explore_ids<R: Rng>(vocab_size: usize, k: usize, rng: &mut R) -> Vec<u32> {
    (0..k).map(|_| rng.gen_range(0..vocab_size as u32)).collect()
}

fn check_lengths(n_dists: usize, x: &TokenSequence) -> Result<()> {
    if n_dists != x.len() {
        return Err(Error::dims(format!(
            "{n_dists} distributions for a sequence of length {}",
            x.len()
        )));
    }
    Ok(())
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

/// Sum over positions of `-ln p_i(x_i)`, skipping PAD positions.
pub fn reconstruction_loss(dists: &[TokenDistribution], x: &TokenSequence) -> Result<f64> {
    check_lengths(dists.len(), x)?;
    Ok(dists
        .iter()
        .zip(x.ids())
        .filter(|(_, &t)| t != PAD)
        .map(|(d, &t)| -clamped_ln(d.probs()[t as usize]))
        .sum())
}

/// Reward credited at each position: the top-k tokens by probability plus
/// `k` uniformly sampled tokens, each weighted by `gamma(x_i, v)`.
pub fn embedding_reward_loss<R: Rng>(
    dists: &[TokenDistribution],
    x: &TokenSequence,
    emb: &EmbeddingTable,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<f64> {
    check_lengths(dists.len(), x)?;
    let mut total = 0.0;
    for (d, &orig) in dists.iter().zip(x.ids()) {
        if orig == PAD {
            continue;
        }
        let probs = d.probs();
        let top = top_k_ids(probs, cfg.k_reward);
        let explore = sample_explore_ids(probs.len(), cfg.k_reward, rng);
        for v in top.into_iter().chain(explore) {
            total += clamped_ln(probs[v as usize]) * gamma(orig, v, emb);
        }
    }
    Ok(-total)
}

pub fn total_loss(recon: f64, embed: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda_recon * recon + cfg.lambda_embed * embed
}

/// Graph form of [`reconstruction_loss`].
pub fn reconstruction_graph(g: &mut Graph<'_>, dists: &[NodeId], x: &TokenSequence) -> Result<NodeId> {
    check_lengths(dists.len(), x)?;
    let mut terms = Vec::with_capacity(x.len());
    for (&d, &t) in dists.iter().zip(x.ids()) {
        if t == PAD {
            continue;
        }
        let p = g.pick(d, t as usize)?;
        terms.push(g.log(p));
    }
    if terms.is_empty() {
        return g.constant(1, 1, vec![0.0]);
    }
    let s = g.sum(&terms)?;
    Ok(g.scale(s, -1.0))
}

/// Graph form of [`embedding_reward_loss`]; consumes the RNG identically.
pub fn embedding_reward_graph<R: Rng>(
    g: &mut Graph<'_>,
    dists: &[NodeId],
    x: &TokenSequence,
    emb: &EmbeddingTable,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<NodeId> {
    check_lengths(dists.len(), x)?;
    let mut terms = Vec::new();
    for (&d, &orig) in dists.iter().zip(x.ids()) {
        if orig == PAD {
            continue;
        }
        let top = top_k_ids(g.value(d), cfg.k_reward);
        let explore = sample_explore_ids(g.shape(d).0, cfg.k_reward, rng);
        for v in top.into_iter().chain(explore) {
            let reward = gamma(orig, v, emb);
            if reward == 0.0 {
                continue;
            }
            let p = g.pick(d, v as usize)?;
            let lp = g.log(p);
            terms.push(g.scale(lp, -reward));
        }
    }
    if terms.is_empty() {
        return g.constant(1, 1, vec![0.0]);
    }
    g.sum(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn recon_cases() {
        let x = TokenSequence::new(vec![1, 2], 4).unwrap();
        let onehot = [dist(&[0., 1., 0., 0.]), dist(&[0., 0., 1., 0.])];
        assert_eq!(reconstruction_loss(&onehot, &x).unwrap(), 0.0);
        let uni = [dist(&[0.25; 4]), dist(&[0.25; 4])];
        assert!((reconstruction_loss(&uni, &x).unwrap() - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((reconstruction_loss(&uni, &x).unwrap() - 2.7726).abs() < 1e-4);
        let half = [dist(&[0., 0.5, 0.5, 0.]), dist(&[0., 0., 1., 0.])];
        assert!((reconstruction_loss(&half, &x).unwrap() - 2f64.ln()).abs() < 1e-12);
        let zero = [dist(&[1., 0., 0., 0.]), dist(&[0., 0., 1., 0.])];
        assert!((reconstruction_loss(&zero, &x).unwrap() - -(1e-12f64).ln()).abs() < 1e-9);
        assert!(reconstruction_loss(&onehot[..1], &x).is_err());
    }

    #[test]
    fn reward_zero_for_orthogonal_table() {
        // x_i's row is orthogonal to every other row and its own row is zero,
        // so every gamma term vanishes
        let emb = EmbeddingTable::from_rows(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let x = TokenSequence::new(vec![0], 4).unwrap();
        let d = [dist(&[0.1, 0.2, 0.3, 0.4])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(embedding_reward_loss(&d, &x, &emb, &LossConfig::default(), &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn reward_skips_pad_positions() {
        let emb = EmbeddingTable::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let x = TokenSequence::new(vec![0], 1).unwrap();
        let d = [dist(&[1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = embedding_reward_loss(&d, &x, &emb, &LossConfig::default(), &mut rng).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn reward_hand_value() {
        // id 1 is the original; ids 0 and 2 are orthogonal to it, so only
        // draws of id 1 earn the capped reward 0.85
        let emb = EmbeddingTable::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = TokenSequence::new(vec![1], 3).unwrap();
        let cfg = LossConfig {
            k_reward: 1,
            ..LossConfig::default()
        };
        let d = [dist(&[0.0, 0.6, 0.4])];
        let d_top = [dist(&[0.0, 0.4, 0.6])];
        let mut draws = ChaCha8Rng::seed_from_u64(5);
        let explore = sample_explore_ids(3, 1, &mut draws);
        let hits = explore.iter().filter(|&&v| v == 1).count() as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let got = embedding_reward_loss(&d, &x, &emb, &cfg, &mut rng).unwrap();
        let expect = -0.85 * 0.6f64.ln() * (1.0 + hits);
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");

        // top-1 is now the orthogonal token, so only explore hits count
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let got = embedding_reward_loss(&d_top, &x, &emb, &cfg, &mut rng).unwrap();
        assert!((got - (-0.85 * 0.4f64.ln() * hits)).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weights() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.k_reward, 5);
        assert_eq!(total_loss(2.0, 4.0, &cfg), 4.0);
        let ae = LossConfig {
            lambda_embed: 0.0,
            ..cfg
        };
        assert_eq!(total_loss(2.0, 4.0, &ae), 2.0);
        assert_eq!(total_loss(0.0, 0.0, &cfg), 0.0);
    }

    #[test]
    fn top_k_order() {
        assert_eq!(top_k_ids(&[0.1, 0.4, 0.1, 0.4], 3), vec![1, 3, 0]);
        assert_eq!(top_k_ids(&[0.5, 0.5], 5), vec![0, 1]);
    }
}
