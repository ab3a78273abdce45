//! Two-phase training: reconstruction only for `pretrain_epochs`, then the
//! weighted reconstruction + embedding-reward objective.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{embedding_reward_graph, reconstruction_graph, LossConfig};
use super::{ModelConfig, ModelParams};
use crate::corpus::{CorpusSplit, TokenSequence, PAD};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, Record};
use crate::nn::{AdamConfig, AdamState, Graph};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub seed: u64,
    /// Joint gradient-norm limit applied before each optimizer step.
    pub clip_norm: Option<f64>,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
            clip_norm: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Reward,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Pretrain => 1,
            Phase::Reward => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean per-sequence objective of the phase.
    pub train_loss: f64,
    /// Mean per-sequence reconstruction loss over the training set.
    pub train_recon: f64,
    pub dev_loss: f64,
    pub dev_token_acc: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,phase,train_loss,dev_loss,dev_token_acc\n");
    for e in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch,
            e.phase.number(),
            e.train_loss,
            e.dev_loss,
            e.dev_token_acc
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub log: Vec<EpochLog>,
}

const ADAM_STEP: &str = "adam.step";
const EPOCHS_DONE: &str = "train.epochs_done";

impl TrainState {
    pub fn fresh(model: ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        let params = ModelParams::new(model, cfg.seed)?;
        let adam = AdamState::new(cfg.adam, &params.store);
        Ok(Self {
            params,
            adam,
            epochs_done: 0,
            log: Vec::new(),
        })
    }

    pub fn log_csv(&self) -> String {
        log_csv(&self.log)
    }

    pub fn to_records(&self) -> Vec<Record> {
        let mut out = self.params.to_records();
        for (t, (m, v)) in self.params.store.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            out.push(Record::from_f64(format!("adam.m/{}", t.name), t.shape.clone(), m));
            out.push(Record::from_f64(format!("adam.v/{}", t.name), t.shape.clone(), v));
        }
        out.push(Record::from_f64(ADAM_STEP, vec![1], &[self.adam.step as f64]));
        out.push(Record::from_f64(EPOCHS_DONE, vec![1], &[self.epochs_done as f64]));
        out
    }

    /// Restores parameters, optimizer moments and the epoch counter. The
    /// training log is not part of a checkpoint.
    pub fn from_records(records: &[Record], adam: AdamConfig) -> Result<Self> {
        let params = ModelParams::from_records(records)?;
        let mut state = AdamState::new(adam, &params.store);
        let find = |name: &str| records.iter().find(|r| r.name == name);
        for (i, t) in params.store.iter().enumerate() {
            if let (Some(m), Some(v)) = (find(&format!("adam.m/{}", t.name)), find(&format!("adam.v/{}", t.name))) {
                if m.data.len() != t.numel() || v.data.len() != t.numel() {
                    return Err(Error::Checkpoint(format!("optimizer state for {} has wrong size", t.name)));
                }
                state.m[i] = m.to_f64();
                state.v[i] = v.to_f64();
            }
        }
        state.step = find(ADAM_STEP).and_then(|r| r.data.first()).map(|&x| x as u64).unwrap_or(0);
        let epochs_done = find(EPOCHS_DONE).and_then(|r| r.data.first()).map(|&x| x as usize).unwrap_or(0);
        Ok(Self {
            params,
            adam: state,
            epochs_done,
            log: Vec::new(),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.to_records())
    }

    pub fn load(path: &std::path::Path, adam: AdamConfig) -> Result<Self> {
        Self::from_records(&checkpoint::load(path)?, adam)
    }
}

struct SeqLoss {
    objective: f64,
    recon: f64,
}

/// Runs forward + backward for one sequence and adds `scale * grad` into the
/// parameter buffers.
fn accumulate_sequence(
    params: &mut ModelParams,
    x: &TokenSequence,
    emb: &EmbeddingTable,
    loss_cfg: &LossConfig,
    phase: Phase,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SeqLoss> {
    let (grads, out) = {
        let p: &ModelParams = params;
        let mut g = Graph::new();
        let dists = p.forward_graph(&mut g, x, emb)?;
        let recon = reconstruction_graph(&mut g, &dists, x)?;
        let recon_value = g.scalar(recon);
        let loss = match phase {
            Phase::Pretrain => recon,
            Phase::Reward => {
                let r = g.scale(recon, loss_cfg.lambda_recon);
                if loss_cfg.lambda_embed > 0.0 {
                    let e = embedding_reward_graph(&mut g, &dists, x, emb, loss_cfg, rng)?;
                    let e = g.scale(e, loss_cfg.lambda_embed);
                    g.add(r, e)?
                } else {
                    r
                }
            }
        };
        let objective = g.scalar(loss);
        if !objective.is_finite() {
            return Err(Error::Diverged(format!("loss is {objective}")));
        }
        (
            g.backward(loss)?,
            SeqLoss {
                objective,
                recon: recon_value,
            },
        )
    };
    params.store.accumulate(&grads, scale);
    Ok(out)
}

fn phase_for(epoch: usize, loss: &LossConfig) -> Phase {
    if epoch < loss.pretrain_epochs {
        Phase::Pretrain
    } else {
        Phase::Reward
    }
}

/// Fraction of non-PAD positions where the argmax equals the original token.
pub fn token_accuracy(params: &ModelParams, emb: &EmbeddingTable, seqs: &[TokenSequence]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for x in seqs {
        let dists = params.distributions(x, emb)?;
        for (d, &t) in dists.iter().zip(x.ids()) {
            if t == PAD {
                continue;
            }
            total += 1;
            hit += usize::from(d.argmax() == t);
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

fn dev_metrics(
    params: &ModelParams,
    emb: &EmbeddingTable,
    seqs: &[TokenSequence],
    loss_cfg: &LossConfig,
    phase: Phase,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut loss, mut hit, mut total) = (0.0, 0usize, 0usize);
    for x in seqs {
        let dists = params.distributions(x, emb)?;
        let recon = super::reconstruction_loss(&dists, x)?;
        loss += match phase {
            Phase::Pretrain => recon,
            Phase::Reward => {
                let e = super::embedding_reward_loss(&dists, x, emb, loss_cfg, &mut rng)?;
                super::total_loss(recon, e, loss_cfg)
            }
        };
        for (d, &t) in dists.iter().zip(x.ids()) {
            total += 1;
            hit += usize::from(d.argmax() == t);
        }
    }
    let n = seqs.len().max(1) as f64;
    Ok((loss / n, if total == 0 { 0.0 } else { hit as f64 / total as f64 }))
}

pub fn train(split: &CorpusSplit, emb: &EmbeddingTable, model: ModelConfig, cfg: &TrainConfig) -> Result<TrainState> {
    train_from(TrainState::fresh(model, cfg)?, split, emb, cfg)
}

/// Continues training until `cfg.epochs` epochs are done. Dev metrics use the
/// training split when the dev split is empty.
pub fn train_from(mut state: TrainState, split: &CorpusSplit, emb: &EmbeddingTable, cfg: &TrainConfig) -> Result<TrainState> {
    if split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    cfg.loss.validate()?;
    state.adam.config = cfg.adam;
    let dev = if split.dev.is_empty() { &split.train } else { &split.dev };
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    for epoch in state.epochs_done..cfg.epochs {
        let phase = phase_for(epoch, &cfg.loss);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let (mut objective, mut recon) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            state.params.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let l = accumulate_sequence(&mut state.params, &split.train[i], emb, &cfg.loss, phase, scale, &mut rng)?;
                objective += l.objective;
                recon += l.recon;
            }
            if let Some(max) = cfg.clip_norm {
                state.params.store.clip_grad_norm(max);
            }
            state.adam.update(&mut state.params.store)?;
            if !state.params.store.all_finite() {
                return Err(Error::Diverged(format!("non-finite parameters in epoch {epoch}")));
            }
        }
        state.params.store.zero_grads();
        let n = split.train.len() as f64;
        let (dev_loss, dev_token_acc) = dev_metrics(&state.params, emb, dev, &cfg.loss, phase, cfg.seed ^ 0x5eed)?;
        let entry = EpochLog {
            epoch: epoch + 1,
            phase,
            train_loss: objective / n,
            train_recon: recon / n,
            dev_loss,
            dev_token_acc,
        };
        log::info!(
            "epoch {} phase {} train {:.4} dev {:.4} acc {:.4}",
            entry.epoch,
            phase.number(),
            entry.train_loss,
            entry.dev_loss,
            entry.dev_token_acc
        );
        state.log.push(entry);
        state.epochs_done = epoch + 1;
        if let Some(path) = &cfg.checkpoint {
            state.save(path)?;
        }
    }
    Ok(state)
}
