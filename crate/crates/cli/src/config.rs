//! JSON run configuration with built-in defaults. See `resolve_config` for
//! how profiles, files and flags are layered.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use erae_core::anonymizer::Method;
use erae_core::corpus::{DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE, NUM_SPECIALS};
use erae_core::dp::{WithinSet, DEFAULT_K_SUBSET};
use erae_core::evaluation::AttackConfig;
use erae_core::model::{LossConfig, ModelConfig, TrainConfig};
use erae_core::nn::AdamConfig;

use crate::error::CliError;

/// Vocabulary cap applied by the desk profile.
pub const DESK_MAX_VOCAB: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// One record per line.
    pub corpus: Option<PathBuf>,
    /// One integer author id per corpus line; needed by evaluate and sweep.
    pub authors: Option<PathBuf>,
    /// Word-vector text file, `token v1 .. vd` per line.
    pub embeddings: Option<PathBuf>,
    /// Directory holding `er-ae.ckpt` and `ae-dp.ckpt`. Defaults to the
    /// output directory.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            authors: None,
            embeddings: None,
            checkpoint: None,
            output_dir: PathBuf::from("erae-out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// m1
    pub emb_dim: usize,
    /// m
    pub hidden: usize,
    /// h
    pub latent: usize,
    pub layers: usize,
    pub max_len: usize,
    pub max_vocab: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let full = ModelConfig::full(0);
        Self {
            emb_dim: full.emb_dim,
            hidden: full.hidden,
            latent: full.latent,
            layers: full.layers,
            max_len: DEFAULT_MAX_LEN,
            max_vocab: DEFAULT_VOCAB_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_recon: f64,
    pub lambda_embed: f64,
    pub k_reward: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let loss = LossConfig::default();
        Self {
            epochs: 20,
            pretrain_epochs: loss.pretrain_epochs,
            batch_size: 128,
            lr: AdamConfig::default().lr,
            lambda_recon: loss.lambda_recon,
            lambda_embed: loss.lambda_embed,
            k_reward: loss.k_reward,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WithinSetName {
    #[default]
    Distinct,
    Multiset,
}

impl From<WithinSetName> for WithinSet {
    fn from(w: WithinSetName) -> Self {
        match w {
            WithinSetName::Distinct => WithinSet::Distinct,
            WithinSetName::Multiset => WithinSet::Multiset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub epsilon: f64,
    pub k_subset: usize,
    pub within_set: WithinSetName,
}

impl Default for DpSection {
    fn default() -> Self {
        Self {
            epsilon: 3.0,
            k_subset: DEFAULT_K_SUBSET,
            within_set: WithinSetName::Distinct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub eps_grid: Vec<f64>,
    /// Method names: er-ae, ae-dp, random-r, syntf.
    pub methods: Vec<String>,
    pub attack: AttackConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            eps_grid: vec![0.1, 1.0, 3.0, 10.0],
            methods: Method::ALL.iter().map(|m| m.as_str().to_string()).collect(),
            attack: AttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub eps: Vec<f64>,
    pub s: Vec<usize>,
    pub k: Vec<usize>,
    pub pairs: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            eps: vec![0.5, 1.0, 3.0],
            s: vec![2, 4, 8],
            k: vec![1, 2, 3],
            pairs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub dp: DpSection,
    pub eval: EvalSection,
    pub audit: AuditSection,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Desk,
    Full,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Layers the fields present in a JSON document over `self`.
    pub fn merge_json(&self, text: &str) -> Result<Self, CliError> {
        let overlay: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        if !overlay.is_object() {
            return Err(CliError::Config("config must be a JSON object".into()));
        }
        let mut base = serde_json::to_value(self).expect("config serializes");
        merge(&mut base, overlay);
        serde_json::from_value(base).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Desk: 16-wide embeddings, one 32-cell GRU layer, vocabulary capped at
    /// 2000, and the single-CPU optimizer setting (batch 1, lr 0.002, 200
    /// epochs). Full: the large-scale dimensions.
    pub fn apply_profile(&mut self, profile: Profile) {
        self.apply_profile_dims(profile);
        if profile == Profile::Desk {
            self.training.epochs = 200;
            self.training.batch_size = 1;
            self.training.lr = 0.002;
        }
    }

    /// The model-dimension part of a profile.
    pub fn apply_profile_dims(&mut self, profile: Profile) {
        match profile {
            Profile::Desk => {
                let d = ModelConfig::desk(0);
                self.model.emb_dim = d.emb_dim;
                self.model.hidden = d.hidden;
                self.model.latent = d.latent;
                self.model.layers = d.layers;
                self.model.max_vocab = self.model.max_vocab.min(DESK_MAX_VOCAB);
            }
            Profile::Full => {
                let f = ModelSection::default();
                self.model.emb_dim = f.emb_dim;
                self.model.hidden = f.hidden;
                self.model.latent = f.latent;
                self.model.layers = f.layers;
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        let m = &self.model;
        if m.emb_dim == 0 || m.hidden == 0 || m.latent == 0 || m.layers == 0 || m.max_len == 0 {
            return bad("model dimensions, layers and max_len must be positive");
        }
        if m.max_vocab <= NUM_SPECIALS + 1 {
            return bad("max_vocab must leave room for at least two words");
        }
        let t = &self.training;
        if t.batch_size == 0 || t.k_reward == 0 {
            return bad("batch_size and k_reward must be positive");
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(t.lambda_recon >= 0.0 && t.lambda_embed >= 0.0 && t.lambda_recon.is_finite() && t.lambda_embed.is_finite()) {
            return bad("loss weights must be non-negative");
        }
        if t.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        if !(self.dp.epsilon > 0.0 && self.dp.epsilon.is_finite()) || self.dp.k_subset == 0 {
            return bad("dp.epsilon must be positive and dp.k_subset at least 1");
        }
        if self.eval.eps_grid.is_empty() || self.eval.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eval.eps_grid must be non-empty and positive");
        }
        self.methods()?;
        let a = &self.eval.attack;
        if a.batch_size == 0 || !(a.lr > 0.0) {
            return bad("attack batch_size and lr must be positive");
        }
        let au = &self.audit;
        if au.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) || au.s.iter().any(|&s| s < 2) || au.k.contains(&0) {
            return bad("audit grid needs eps > 0, s >= 2, k >= 1");
        }
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        if self.eval.methods.is_empty() {
            return Err(CliError::Config("eval.methods is empty".into()));
        }
        self.eval
            .methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            emb_dim: self.model.emb_dim,
            hidden: self.model.hidden,
            latent: self.model.latent,
            layers: self.model.layers,
            max_len: self.model.max_len,
        }
    }

    /// Training settings; `lambda_embed` is forced to 0 for the AE-DP variant.
    pub fn train_config(&self, variant: Method) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            },
            loss: LossConfig {
                lambda_recon: t.lambda_recon,
                lambda_embed: if variant == Method::AeDp { 0.0 } else { t.lambda_embed },
                k_reward: t.k_reward,
                pretrain_epochs: t.pretrain_epochs,
            },
            seed: self.seed,
            clip_norm: t.clip_norm,
            checkpoint: None,
        }
    }

    pub fn checkpoint_dir(&self) -> &Path {
        self.paths.checkpoint.as_deref().unwrap_or(&self.paths.output_dir)
    }

    pub fn checkpoint_path(&self, variant: Method) -> PathBuf {
        self.checkpoint_dir().join(format!("{}.ckpt", variant.as_str()))
    }
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_large_scale_values() {
        let c = RunConfig::default();
        assert_eq!((c.model.emb_dim, c.model.hidden, c.model.layers), (768, 512, 2));
        assert_eq!(c.model.max_len, 50);
        assert_eq!(c.model.max_vocab, 20000);
        assert_eq!(c.training.lr, 0.001);
        assert_eq!(c.training.batch_size, 128);
        assert_eq!((c.training.lambda_recon, c.training.lambda_embed), (1.0, 0.5));
        assert_eq!(c.training.k_reward, 5);
        assert_eq!(c.dp.k_subset, 5);
        assert_eq!(c.dp.epsilon, 3.0);
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        let p = RunConfig::from_json(r#"{"dp": {"epsilon": 1.5}, "seed": 9}"#).unwrap();
        assert_eq!(p.dp.epsilon, 1.5);
        assert_eq!(p.dp.k_subset, 5);
        assert_eq!(p.seed, 9);
        assert!(RunConfig::from_json(r#"{"dp": {"epsilon": 1.5, "bogus": 1}}"#).is_err());
    }

    #[test]
    fn desk_profile_overrides_dims() {
        let mut c = RunConfig::default();
        c.apply_profile(Profile::Desk);
        assert_eq!((c.model.emb_dim, c.model.hidden, c.model.latent), (16, 32, 32));
        assert_eq!(c.model.max_vocab, 2000);
        c.apply_profile(Profile::Full);
        assert_eq!((c.model.emb_dim, c.model.hidden), (768, 512));
    }

    #[test]
    fn file_overrides_profile_training_but_not_dims() {
        let mut c = RunConfig::default();
        c.apply_profile(Profile::Desk);
        let c = c
            .merge_json(r#"{"training": {"epochs": 6}, "model": {"hidden": 64}}"#)
            .unwrap();
        assert_eq!(c.training.epochs, 6);
        assert_eq!(c.training.batch_size, 1);
        let mut d = c.clone();
        d.apply_profile_dims(Profile::Desk);
        assert_eq!(d.model.hidden, 32);
        assert!(c.merge_json(r#"{"model": {"hiden": 1}}"#).is_err());
        assert!(c.merge_json("[1]").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = RunConfig::default();
        c.dp.epsilon = 0.0;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let mut c = RunConfig::default();
        c.eval.methods = vec!["nope".into()];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.eval.eps_grid.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn ae_dp_trains_without_reward() {
        let c = RunConfig::default();
        assert_eq!(c.train_config(Method::AeDp).loss.lambda_embed, 0.0);
        assert_eq!(c.train_config(Method::ErAe).loss.lambda_embed, 0.5);
    }
}
