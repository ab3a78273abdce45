//! The autoencoder: a bidirectional GRU encoder projected to a latent vector,
//! and a GRU generator that is teacher-forced on the original tokens and
//! emits one distribution over the vocabulary per position.

pub mod gradcheck;
mod loss;
mod train;

pub use loss::{
    embedding_reward_graph, embedding_reward_loss, reconstruction_graph, reconstruction_loss, sample_explore_ids,
    top_k_ids, total_loss,
    LossConfig,
};
pub use train::{token_accuracy, train, train_from, EpochLog, Phase, TrainConfig, TrainState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{TokenSequence, BOS, DEFAULT_MAX_LEN};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::checkpoint::Record;
use crate::nn::gru::INIT_RANGE;
use crate::nn::{BoundGru, Graph, GruCell, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Embedding width (m1).
    pub emb_dim: usize,
    /// GRU width (m).
    pub hidden: usize,
    /// Latent width (h).
    pub latent: usize,
    pub layers: usize,
    pub max_len: usize,
}

impl ModelConfig {
    /// Full-scale dimensions: 768-wide embeddings, two stacked 512-cell GRU
    /// layers, latent width equal to the GRU width.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            emb_dim: 768,
            hidden: 512,
            latent: 512,
            layers: 2,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            emb_dim: 16,
            hidden: 32,
            latent: 32,
            layers: 1,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5
            || self.emb_dim == 0
            || self.hidden == 0
            || self.latent == 0
            || self.layers == 0
            || self.max_len == 0
        {
            return Err(Error::invalid(format!("invalid model config {self:?}")));
        }
        Ok(())
    }
}

/// One position's distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution(Vec<f64>);

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("distribution entries must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("distribution sums to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> u32 {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best as u32
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    enc_fwd: Vec<GruCell>,
    enc_bwd: Vec<GruCell>,
    w_h: ParamId,
    gen: Vec<GruCell>,
    w_out: ParamId,
    b_out: ParamId,
}

pub(crate) struct BoundModel {
    enc_fwd: Vec<BoundGru>,
    enc_bwd: Vec<BoundGru>,
    w_h: NodeId,
    gen: Vec<BoundGru>,
    w_out: NodeId,
    b_out: NodeId,
    zero: NodeId,
}

const META_MAX_LEN: &str = "meta.max_len";

impl ModelParams {
    /// Seeded uniform(-0.08, 0.08) initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let m = config.hidden;
        let stack = |store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d_in: usize| {
            (0..config.layers)
                .map(|l| {
                    let input = if l == 0 { d_in } else { m };
                    GruCell::new(store, &format!("{prefix}.{l}"), input, m, rng)
                })
                .collect::<Vec<_>>()
        };
        let enc_fwd = stack(&mut store, &mut rng, "encoder.fwd", config.emb_dim);
        let enc_bwd = stack(&mut store, &mut rng, "encoder.bwd", config.emb_dim);
        let w_h = store.add_uniform("encoder.w_h", vec![config.latent, 2 * m], INIT_RANGE, &mut rng);
        let gen = stack(&mut store, &mut rng, "generator", config.latent + config.emb_dim);
        let w_out = store.add_uniform("generator.w_out", vec![config.vocab_size, m], INIT_RANGE, &mut rng);
        let b_out = store.add_uniform("generator.b_out", vec![config.vocab_size], INIT_RANGE, &mut rng);
        Ok(Self {
            config,
            store,
            enc_fwd,
            enc_bwd,
            w_h,
            gen,
            w_out,
            b_out,
        })
    }

    pub fn w_h(&self) -> ParamId {
        self.w_h
    }

    pub fn w_out(&self) -> ParamId {
        self.w_out
    }

    pub fn b_out(&self) -> ParamId {
        self.b_out
    }

    pub fn to_records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .store
            .iter()
            .map(|t| Record::from_f64(t.name.clone(), t.shape.clone(), &t.data))
            .collect();
        out.push(Record::from_f64(META_MAX_LEN, vec![1], &[self.config.max_len as f64]));
        out
    }

    /// Rebuilds a model from checkpoint records; dimensions come from the
    /// tensor shapes. Records that are not model tensors are ignored.
    pub fn from_records(records: &[Record]) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut max_len = DEFAULT_MAX_LEN;
        for r in records {
            if r.name == META_MAX_LEN {
                max_len = r.data.first().copied().unwrap_or(DEFAULT_MAX_LEN as f32) as usize;
            } else if r.name.starts_with("encoder.") || r.name.starts_with("generator.") {
                store.add(Tensor::new(r.name.clone(), r.shape.clone(), r.to_f64())?);
            }
        }
        let find = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
        };
        let w_h = find("encoder.w_h")?;
        let w_out = find("generator.w_out")?;
        let b_out = find("generator.b_out")?;
        let layers = (0..)
            .take_while(|l| store.find(&format!("encoder.fwd.{l}.w_z")).is_some())
            .count();
        let load = |prefix: &str| {
            (0..layers)
                .map(|l| GruCell::from_store(&store, &format!("{prefix}.{l}")))
                .collect::<Result<Vec<_>>>()
        };
        let enc_fwd = load("encoder.fwd")?;
        let enc_bwd = load("encoder.bwd")?;
        let gen = load("generator")?;
        let (vocab_size, hidden) = store.get(w_out).matrix_shape();
        let (latent, two_m) = store.get(w_h).matrix_shape();
        let emb_dim = enc_fwd
            .first()
            .ok_or_else(|| Error::Checkpoint("no encoder layers".into()))?
            .d_in;
        let config = ModelConfig {
            vocab_size,
            emb_dim,
            hidden,
            latent,
            layers,
            max_len,
        };
        if two_m != 2 * hidden
            || gen[0].d_in != latent + emb_dim
            || store.get(b_out).numel() != vocab_size
        {
            return Err(Error::Checkpoint("inconsistent tensor shapes".into()));
        }
        Ok(Self {
            config,
            store,
            enc_fwd,
            enc_bwd,
            w_h,
            gen,
            w_out,
            b_out,
        })
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>) -> BoundModel {
        let bind_all = |g: &mut Graph<'a>, cells: &[GruCell]| {
            cells.iter().map(|c| c.bind(g, &self.store)).collect::<Vec<_>>()
        };
        BoundModel {
            enc_fwd: bind_all(g, &self.enc_fwd),
            enc_bwd: bind_all(g, &self.enc_bwd),
            w_h: g.param(&self.store, self.w_h),
            gen: bind_all(g, &self.gen),
            w_out: g.param(&self.store, self.w_out),
            b_out: g.param(&self.store, self.b_out),
            zero: g
                .constant(self.config.hidden, 1, vec![0.0; self.config.hidden])
                .expect("shape matches"),
        }
    }

    fn check_inputs(&self, x: &TokenSequence, emb: &EmbeddingTable) -> Result<()> {
        if emb.dim() != self.config.emb_dim {
            return Err(Error::dims(format!(
                "embedding width {} but model expects {}",
                emb.dim(),
                self.config.emb_dim
            )));
        }
        if emb.len() < self.config.vocab_size {
            return Err(Error::dims("embedding table smaller than vocabulary"));
        }
        if let Some(&id) = x.ids().iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::IdOutOfRange {
                id,
                size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn run_stack(g: &mut Graph<'_>, cells: &[BoundGru], zero: NodeId, mut seq: Vec<NodeId>) -> Result<NodeId> {
        for cell in cells {
            let mut h = zero;
            let mut outs = Vec::with_capacity(seq.len());
            for &x in &seq {
                h = cell.step(g, x, h)?;
                outs.push(h);
            }
            seq = outs;
        }
        Ok(*seq.last().expect("non-empty sequence"))
    }

    pub(crate) fn encode_in<'a>(
        &self,
        g: &mut Graph<'a>,
        b: &BoundModel,
        x: &TokenSequence,
        emb: &'a EmbeddingTable,
    ) -> Result<NodeId> {
        let inputs: Vec<NodeId> = x.ids().iter().map(|&id| g.constant_slice(emb.row(id))).collect();
        let s_f = Self::run_stack(g, &b.enc_fwd, b.zero, inputs.clone())?;
        let s_b = Self::run_stack(g, &b.enc_bwd, b.zero, inputs.into_iter().rev().collect())?;
        let cat = g.concat(&[s_f, s_b])?;
        g.matmul(b.w_h, cat)
    }

    /// Softmax nodes, one per position. Step `i` sees the latent vector and
    /// the embedding of original token `i-1` (BOS for the first step).
    pub(crate) fn generate_in<'a>(
        &self,
        g: &mut Graph<'a>,
        b: &BoundModel,
        x: &TokenSequence,
        latent: NodeId,
        emb: &'a EmbeddingTable,
    ) -> Result<Vec<NodeId>> {
        if g.shape(latent) != (self.config.latent, 1) {
            return Err(Error::dims(format!(
                "latent has shape {:?}, expected ({}, 1)",
                g.shape(latent),
                self.config.latent
            )));
        }
        let mut states = vec![b.zero; b.gen.len()];
        let mut prev = BOS;
        let mut out = Vec::with_capacity(x.len());
        for &tok in x.ids() {
            let e = g.constant_slice(emb.row(prev));
            let mut input = g.concat(&[latent, e])?;
            for (cell, h) in b.gen.iter().zip(states.iter_mut()) {
                *h = cell.step(g, input, *h)?;
                input = *h;
            }
            let proj = g.matmul(b.w_out, input)?;
            let logits = g.add(proj, b.b_out)?;
            out.push(g.softmax(logits));
            prev = tok;
        }
        Ok(out)
    }

    /// Records the full forward pass on `g` and returns the softmax node of
    /// every position.
    pub fn forward_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: &TokenSequence,
        emb: &'a EmbeddingTable,
    ) -> Result<Vec<NodeId>> {
        self.check_inputs(x, emb)?;
        let b = self.bind(g);
        let latent = self.encode_in(g, &b, x, emb)?;
        self.generate_in(g, &b, x, latent, emb)
    }

    /// Records only the encoder on `g`; returns the latent node.
    pub fn encode_graph<'a>(&'a self, g: &mut Graph<'a>, x: &TokenSequence, emb: &'a EmbeddingTable) -> Result<NodeId> {
        self.check_inputs(x, emb)?;
        let b = self.bind(g);
        self.encode_in(g, &b, x, emb)
    }

    /// Records only the generator on `g`, conditioned on an existing latent
    /// node.
    pub fn generate_graph<'a>(
        &'a self,
        g: &mut Graph<'a>,
        x: &TokenSequence,
        latent: NodeId,
        emb: &'a EmbeddingTable,
    ) -> Result<Vec<NodeId>> {
        self.check_inputs(x, emb)?;
        let b = self.bind(g);
        self.generate_in(g, &b, x, latent, emb)
    }

    /// Latent vector `W_h [s_f; s_b]`.
    pub fn encode(&self, x: &TokenSequence, emb: &EmbeddingTable) -> Result<Vec<f64>> {
        self.check_inputs(x, emb)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let latent = self.encode_in(&mut g, &b, x, emb)?;
        Ok(g.value(latent).to_vec())
    }

    pub fn generator_distributions(
        &self,
        x: &TokenSequence,
        latent: &[f64],
        emb: &EmbeddingTable,
    ) -> Result<Vec<TokenDistribution>> {
        self.check_inputs(x, emb)?;
        if latent.len() != self.config.latent {
            return Err(Error::dims(format!(
                "latent of length {}, expected {}",
                latent.len(),
                self.config.latent
            )));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let z = g.constant_slice(latent);
        let nodes = self.generate_in(&mut g, &b, x, z, emb)?;
        Ok(nodes
            .into_iter()
            .map(|n| TokenDistribution(g.value(n).to_vec()))
            .collect())
    }

    /// Encode then generate, in one pass.
    pub fn distributions(&self, x: &TokenSequence, emb: &EmbeddingTable) -> Result<Vec<TokenDistribution>> {
        let mut g = Graph::new();
        let nodes = self.forward_graph(&mut g, x, emb)?;
        Ok(nodes
            .into_iter()
            .map(|n| TokenDistribution(g.value(n).to_vec()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(vocab: usize) -> (ModelParams, EmbeddingTable) {
        let cfg = ModelConfig {
            vocab_size: vocab,
            emb_dim: 3,
            hidden: 4,
            latent: 5,
            layers: 2,
            max_len: 10,
        };
        let rows = (0..vocab)
            .map(|i| (0..3).map(|j| ((i * 3 + j) as f64 * 0.37).sin()).collect())
            .collect();
        (ModelParams::new(cfg, 11).unwrap(), EmbeddingTable::from_rows(rows).unwrap())
    }

    fn seq(ids: &[u32], vocab: usize) -> TokenSequence {
        TokenSequence::new(ids.to_vec(), vocab).unwrap()
    }

    #[test]
    fn latent_shape_and_zero_projection() {
        let (mut p, emb) = tiny(8);
        for len in 1..5 {
            let x = seq(&vec![5; len], 8);
            assert_eq!(p.encode(&x, &emb).unwrap().len(), 5);
        }
        let w_h = p.w_h();
        p.store.get_mut(w_h).data.iter_mut().for_each(|v| *v = 0.0);
        assert!(p.encode(&seq(&[4, 6], 8), &emb).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_encoder_hand_value() {
        let cfg = ModelConfig {
            vocab_size: 5,
            emb_dim: 1,
            hidden: 1,
            latent: 1,
            layers: 1,
            max_len: 4,
        };
        let mut p = ModelParams::new(cfg, 0).unwrap();
        // same weights for both directions: w_z u_z b_z w_r u_r b_r w_n u_n b_n
        let vals = [0.5, -0.3, 0.1, 0.2, 0.4, -0.1, 0.9, 0.6, 0.05];
        for prefix in ["encoder.fwd.0", "encoder.bwd.0"] {
            for (name, v) in ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_n", "u_n", "b_n"].iter().zip(vals) {
                let id = p.store.find(&format!("{prefix}.{name}")).unwrap();
                p.store.get_mut(id).data = vec![v];
            }
        }
        let w_h = p.w_h();
        p.store.get_mut(w_h).data = vec![1.5, -2.0];
        let emb = EmbeddingTable::from_rows((0..5).map(|i| vec![i as f64 * 0.2]).collect()).unwrap();
        // one token, zero initial state: z = sig(0.5x + 0.1), r irrelevant, n = tanh(0.9x + 0.05)
        let x = 0.8;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sig(0.5 * x + 0.1);
        let n = (0.9 * x + 0.05f64).tanh();
        let s = (1.0 - z) * n;
        let expect = 1.5 * s - 2.0 * s;
        let got = p.encode(&seq(&[4], 5), &emb).unwrap();
        assert!((got[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn distributions_normalized_and_pure() {
        let (p, emb) = tiny(9);
        let x = seq(&[4, 7, 8, 5], 9);
        let d = p.distributions(&x, &emb).unwrap();
        assert_eq!(d.len(), 4);
        for dist in &d {
            assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            TokenDistribution::new(dist.probs().to_vec()).unwrap();
        }
        assert_eq!(d, p.distributions(&x, &emb).unwrap());
        let latent = p.encode(&x, &emb).unwrap();
        assert_eq!(d, p.generator_distributions(&x, &latent, &emb).unwrap());
        assert!(p.generator_distributions(&x, &latent[..2], &emb).is_err());
    }

    #[test]
    fn zero_output_projection_is_uniform() {
        let (mut p, emb) = tiny(7);
        let (w, b) = (p.w_out(), p.b_out());
        p.store.get_mut(w).data.iter_mut().for_each(|v| *v = 0.0);
        p.store.get_mut(b).data.iter_mut().for_each(|v| *v = 0.0);
        for d in p.distributions(&seq(&[4, 5, 6], 7), &emb).unwrap() {
            assert!(d.probs().iter().all(|q| (q - 1.0 / 7.0).abs() < 1e-15));
        }
    }

    #[test]
    fn rejects_out_of_range_and_bad_embeddings() {
        let (p, emb) = tiny(8);
        let x = TokenSequence::new(vec![4, 9], 20).unwrap();
        assert!(matches!(p.encode(&x, &emb), Err(Error::IdOutOfRange { .. })));
        let narrow = EmbeddingTable::from_rows(vec![vec![0.0; 2]; 8]).unwrap();
        assert!(p.encode(&seq(&[4], 8), &narrow).is_err());
    }

    #[test]
    fn record_round_trip() {
        let (p, emb) = tiny(8);
        let back = ModelParams::from_records(&p.to_records()).unwrap();
        assert_eq!(back.config, p.config);
        let x = seq(&[4, 5], 8);
        let a = p.distributions(&x, &emb).unwrap();
        let b = back.distributions(&x, &emb).unwrap();
        for (da, db) in a.iter().zip(&b) {
            for (u, v) in da.probs().iter().zip(db.probs()) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }
}
