use erae_core::corpus::{build_vocab, encode, split_indices, tokenize, CorpusSplit, TokenSequence, TokenizerRules};
use erae_core::embedding::{embeddings_from_text, EmbeddingTable};
use erae_core::evaluation::distribution_stats;
use erae_core::model::{train, train_from, ModelConfig, Phase, TrainConfig, TrainState};
use erae_core::synthetic::{generate, SyntheticConfig};
use erae_core::Error;

struct Toy {
    seqs: Vec<TokenSequence>,
    emb: EmbeddingTable,
    vocab_size: usize,
}

fn toy(per_author: usize) -> Toy {
    let c = generate(&SyntheticConfig {
        sentences_per_author: per_author,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let toks: Vec<Vec<String>> = c.lines.iter().map(|l| tokenize(l, TokenizerRules::default())).collect();
    let vocab = build_vocab(&toks, 2000).unwrap();
    let emb = embeddings_from_text(&c.embeddings, &vocab, 16, 0).unwrap();
    let seqs = toks.iter().map(|t| encode(t, &vocab, 50).unwrap()).collect();
    Toy {
        seqs,
        emb,
        vocab_size: vocab.size(),
    }
}

fn train_only(seqs: &[TokenSequence]) -> CorpusSplit {
    CorpusSplit {
        train: seqs.to_vec(),
        dev: vec![],
        test: vec![],
        assignment: split_indices(seqs.len().max(10), 0).unwrap(),
    }
}

fn desk_cfg(epochs: usize, lambda_embed: f64) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs,
        batch_size: 1,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 0.002;
    cfg.loss.lambda_embed = lambda_embed;
    cfg
}

#[test]
fn pretraining_loss_is_monotone() {
    let t = toy(2);
    assert_eq!(t.seqs.len(), 10);
    let split = train_only(&t.seqs);
    let state = train(&split, &t.emb, ModelConfig::desk(t.vocab_size), &desk_cfg(5, 0.5)).unwrap();
    assert_eq!(state.log.len(), 5);
    for w in state.log.windows(2) {
        assert_eq!(w[1].phase, Phase::Pretrain);
        assert!(
            w[1].train_recon <= w[0].train_recon * 1.01,
            "epoch {} recon {} after {}",
            w[1].epoch,
            w[1].train_recon,
            w[0].train_recon
        );
    }
}

#[test]
fn embedding_reward_raises_candidate_similarity() {
    let t = toy(6);
    let split = train_only(&t.seqs);
    let model = ModelConfig::desk(t.vocab_size);
    let er = train(&split, &t.emb, model, &desk_cfg(30, 0.5)).unwrap();
    let ae = train(&split, &t.emb, model, &desk_cfg(30, 0.0)).unwrap();
    assert_eq!(er.log.last().unwrap().phase, Phase::Reward);
    let s_er = distribution_stats(&er.params, &t.emb, &t.seqs).unwrap();
    let s_ae = distribution_stats(&ae.params, &t.emb, &t.seqs).unwrap();
    assert!(
        s_er.mean_top5_gamma > s_ae.mean_top5_gamma,
        "er {s_er:?} ae {s_ae:?}"
    );
}

#[test]
fn resume_continues_epoch_count() {
    let t = toy(2);
    let split = train_only(&t.seqs);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut cfg = desk_cfg(3, 0.5);
    cfg.checkpoint = Some(path.clone());
    let first = train(&split, &t.emb, ModelConfig::desk(t.vocab_size), &cfg).unwrap();
    assert_eq!(first.epochs_done, 3);
    let loaded = TrainState::load(&path, cfg.adam).unwrap();
    assert_eq!(loaded.epochs_done, 3);
    assert_eq!(loaded.adam.step, first.adam.step);
    cfg.epochs = 5;
    let resumed = train_from(loaded, &split, &t.emb, &cfg).unwrap();
    assert_eq!(resumed.epochs_done, 5);
    let epochs: Vec<usize> = resumed.log.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, vec![4, 5]);
    assert!(resumed.log_csv().starts_with("epoch,phase,train_loss,dev_loss,dev_token_acc\n"));
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let t = toy(2);
    let split = train_only(&t.seqs);
    let mut cfg = desk_cfg(3, 0.5);
    cfg.adam.lr = 1e300;
    match train(&split, &t.emb, ModelConfig::desk(t.vocab_size), &cfg) {
        Err(Error::Diverged(_)) => {}
        other => panic!("expected divergence, got {:?}", other.map(|s| s.epochs_done)),
    }
}
