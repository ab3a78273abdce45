//! Numerical self-check of the reverse-mode gradients on small random models,
//! against a fourth-order central finite-difference stencil.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    embedding_reward_graph, embedding_reward_loss, reconstruction_graph, reconstruction_loss, LossConfig,
    ModelConfig, ModelParams,
};
use crate::corpus::TokenSequence;
use crate::embedding::EmbeddingTable;
use crate::error::Result;
use crate::nn::{gru_step, Gradients, Graph, GruCell, ParamId, ParamStore};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;
/// Entries checked per tensor; smaller tensors are checked in full.
pub const ENTRIES_PER_TENSOR: usize = 40;
/// Upper bound on every random dimension.
pub const MAX_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Encoder,
    GruStep,
    Generator,
    Reconstruction,
    EmbeddingReward,
    Total,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Encoder,
        Component::GruStep,
        Component::Generator,
        Component::Reconstruction,
        Component::EmbeddingReward,
        Component::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::GruStep => "gru_step",
            Component::Generator => "generator",
            Component::Reconstruction => "l_recon",
            Component::EmbeddingReward => "l_embed",
            Component::Total => "total_loss",
        }
    }
}

struct Instance {
    params: ModelParams,
    emb: EmbeddingTable,
    x: TokenSequence,
    probe: Vec<f64>,
}

fn instance(seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = rng.gen_range(5..=MAX_DIM);
    let cfg = ModelConfig {
        vocab_size: vocab,
        emb_dim: rng.gen_range(2..=MAX_DIM),
        hidden: rng.gen_range(2..=MAX_DIM),
        latent: rng.gen_range(2..=MAX_DIM),
        layers: rng.gen_range(1..=2),
        max_len: MAX_DIM,
    };
    let mut params = ModelParams::new(cfg, seed)?;
    // larger weights than the default init, so nonlinearities are exercised
    for t in params.store.iter_mut() {
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.6..0.6));
    }
    let rows = (0..vocab)
        .map(|_| (0..cfg.emb_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let emb = EmbeddingTable::from_rows(rows)?;
    let len = rng.gen_range(2..=5);
    let ids = (0..len).map(|_| rng.gen_range(1..vocab as u32)).collect();
    let x = TokenSequence::new(ids, vocab)?;
    let probe = (0..cfg.latent.max(vocab * len)).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Ok(Instance { params, emb, x, probe })
}

/// Worst elementwise relative error between `analytic` and finite
/// differences of `f` over (a sample of) every parameter entry.
fn max_relative_error(
    store: &mut ParamStore,
    analytic: &Gradients,
    seed: u64,
    mut f: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut worst: f64 = 0.0;
    for t in 0..store.len() {
        let id = ParamId(t);
        let n = store.get(id).numel();
        let entries: Vec<usize> = if n <= ENTRIES_PER_TENSOR {
            (0..n).collect()
        } else {
            (0..ENTRIES_PER_TENSOR).map(|_| rng.gen_range(0..n)).collect()
        };
        for j in entries {
            let orig = store.get(id).data[j];
            let mut at = |offset: f64| -> Result<f64> {
                store.get_mut(id).data[j] = orig + offset;
                f(store)
            };
            let numeric = (-at(2.0 * STEP)? + 8.0 * at(STEP)? - 8.0 * at(-STEP)? + at(-2.0 * STEP)?) / (12.0 * STEP);
            store.get_mut(id).data[j] = orig;
            let a = analytic.get(id).map_or(0.0, |g| g[j]);
            // rounding noise of the stencil is about 1e-11 for losses of
            // order 10, so entries below 1e-6 are compared on that floor
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

fn with_store(params: &ModelParams, store: &ParamStore) -> ModelParams {
    let mut p = params.clone();
    p.store = store.clone();
    p
}

fn encoder(seed: u64) -> Result<f64> {
    let mut inst = instance(seed)?;
    let h = inst.params.config.latent;
    let grads = {
        let mut g = Graph::new();
        let z = inst.params.encode_graph(&mut g, &inst.x, &inst.emb)?;
        let c = g.constant(1, h, inst.probe[..h].to_vec())?;
        let f = g.matmul(c, z)?;
        g.backward(f)?
    };
    let (params, emb, x, probe) = (inst.params.clone(), &inst.emb, &inst.x, &inst.probe);
    max_relative_error(&mut inst.params.store, &grads, seed, |s| {
        let z = with_store(&params, s).encode(x, emb)?;
        Ok(z.iter().zip(probe).map(|(a, b)| a * b).sum())
    })
}

fn gru(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_in, hidden) = (rng.gen_range(1..=MAX_DIM), rng.gen_range(1..=MAX_DIM));
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "cell", d_in, hidden, &mut rng);
    for t in store.iter_mut() {
        t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
    }
    let x: Vec<f64> = (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..hidden).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grads = {
        let mut g = Graph::new();
        let b = cell.bind(&mut g, &store);
        let xn = g.constant(d_in, 1, x.clone())?;
        let hn = g.constant(hidden, 1, h.clone())?;
        let out = b.step(&mut g, xn, hn)?;
        let cn = g.constant(1, hidden, c.clone())?;
        let f = g.matmul(cn, out)?;
        g.backward(f)?
    };
    max_relative_error(&mut store, &grads, seed, |s| {
        let out = gru_step(s, &cell, &x, &h)?;
        Ok(out.iter().zip(&c).map(|(a, b)| a * b).sum())
    })
}

fn generator(seed: u64) -> Result<f64> {
    let mut inst = instance(seed)?;
    let h = inst.params.config.latent;
    let s = inst.params.config.vocab_size;
    let latent: Vec<f64> = inst.probe[..h].iter().map(|v| v * 0.7).collect();
    let grads = {
        let mut g = Graph::new();
        let z = g.constant(h, 1, latent.clone())?;
        let dists = inst.params.generate_graph(&mut g, &inst.x, z, &inst.emb)?;
        let mut terms = Vec::new();
        for (i, &d) in dists.iter().enumerate() {
            let c = g.constant(1, s, inst.probe[i * s..(i + 1) * s].to_vec())?;
            terms.push(g.matmul(c, d)?);
        }
        let f = g.sum(&terms)?;
        g.backward(f)?
    };
    let (params, emb, x, probe) = (inst.params.clone(), &inst.emb, &inst.x, &inst.probe);
    max_relative_error(&mut inst.params.store, &grads, seed, |st| {
        let dists = with_store(&params, st).generator_distributions(x, &latent, emb)?;
        Ok(dists
            .iter()
            .flat_map(|d| d.probs().iter().copied())
            .zip(probe)
            .map(|(a, b)| a * b)
            .sum())
    })
}

fn loss(component: Component, seed: u64) -> Result<f64> {
    let cfg = LossConfig {
        k_reward: 3,
        ..LossConfig::default()
    };
    let mut inst = instance(seed)?;
    let rng_seed = seed + 100;
    let grads = {
        let mut g = Graph::new();
        let dists = inst.params.forward_graph(&mut g, &inst.x, &inst.emb)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let l = match component {
            Component::Reconstruction => reconstruction_graph(&mut g, &dists, &inst.x)?,
            Component::EmbeddingReward => embedding_reward_graph(&mut g, &dists, &inst.x, &inst.emb, &cfg, &mut rng)?,
            _ => {
                let r = reconstruction_graph(&mut g, &dists, &inst.x)?;
                let e = embedding_reward_graph(&mut g, &dists, &inst.x, &inst.emb, &cfg, &mut rng)?;
                let r = g.scale(r, cfg.lambda_recon);
                let e = g.scale(e, cfg.lambda_embed);
                g.add(r, e)?
            }
        };
        g.backward(l)?
    };
    let (params, emb, x) = (inst.params.clone(), &inst.emb, &inst.x);
    max_relative_error(&mut inst.params.store, &grads, seed, |s| {
        let dists = with_store(&params, s).distributions(x, emb)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        Ok(match component {
            Component::Reconstruction => reconstruction_loss(&dists, x)?,
            Component::EmbeddingReward => embedding_reward_loss(&dists, x, emb, &cfg, &mut rng)?,
            _ => {
                cfg.lambda_recon * reconstruction_loss(&dists, x)?
                    + cfg.lambda_embed * embedding_reward_loss(&dists, x, emb, &cfg, &mut rng)?
            }
        })
    })
}

/// Worst relative gradient error of `component` on the random instance drawn
/// from `seed`.
pub fn check(component: Component, seed: u64) -> Result<f64> {
    match component {
        Component::Encoder => encoder(seed),
        Component::GruStep => gru(seed),
        Component::Generator => generator(seed),
        c => loss(c, seed),
    }
}
