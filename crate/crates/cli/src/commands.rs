//! Subcommand implementations. Every artifact lands in the output directory
//! unless a path flag says otherwise.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use erae_core::anonymizer::{anonymize_batch, BatchSetup, Method};
use erae_core::corpus::{
    build_vocab, encode, split_indices, apply_split, tokenize, SplitAssignment, SplitPart, TokenSequence,
    TokenizerRules, Vocabulary,
};
use erae_core::dp::{audit_csv, audit_exponential, audit_two_set, audit_two_set_control, AuditRow, DpParams};
use erae_core::embedding::{load_embeddings, EmbeddingTable};
use erae_core::evaluation::{
    evaluate_method, original_row, plot_data, report_csv, sweep, train_authorship_attack, AttackModel, EvalReport,
    SweepSetup,
};
use erae_core::model::{train, train_from, ModelParams, TrainState};
use erae_core::nn::checkpoint;
use erae_core::synthetic::{generate, SyntheticConfig};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::Command;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLIT_FILE: &str = "split.tsv";
pub const AUDIT_FILE: &str = "audit.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_PLOT_FILE: &str = "sweep.plot.txt";

pub fn dispatch(cfg: &RunConfig, cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::BuildVocab => cmd_build_vocab(cfg).map(|_| ()),
        Command::Train { variant } => cmd_train(cfg, parse_variant(variant)?).map(|_| ()),
        Command::Anonymize {
            method,
            eps,
            input,
            output,
        } => {
            let method: Method = method.parse().map_err(|e: erae_core::Error| CliError::Config(e.to_string()))?;
            cmd_anonymize(cfg, method, eps.unwrap_or(cfg.dp.epsilon), input.as_deref(), output.as_deref()).map(|_| ())
        }
        Command::Audit { pairs } => cmd_audit(cfg, pairs.unwrap_or(cfg.audit.pairs)).map(|_| ()),
        Command::Evaluate { eps } => cmd_evaluate(cfg, eps.unwrap_or(cfg.dp.epsilon)).map(|_| ()),
        Command::Sweep { eps_grid } => {
            let grid = eps_grid.clone().unwrap_or_else(|| cfg.eval.eps_grid.clone());
            if grid.is_empty() || grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(CliError::Config("eps grid must be non-empty and positive".into()));
            }
            cmd_sweep(cfg, &grid).map(|_| ())
        }
        Command::SynthCorpus {
            sentences_per_author,
            authors,
        } => cmd_synth_corpus(cfg, *authors, *sentences_per_author).map(|_| ()),
    }
}

fn parse_variant(s: &str) -> Result<Method, CliError> {
    match s.parse::<Method>() {
        Ok(m @ (Method::ErAe | Method::AeDp)) => Ok(m),
        _ => Err(CliError::Config(format!("--variant must be er-ae or ae-dp, got {s:?}"))),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.output_dir.join(name)
}

fn corpus_path(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.paths
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::Config("paths.corpus is not set".into()))
}

/// A non-empty corpus line: its 0-based line index and tokens.
#[derive(Debug, Clone)]
pub struct Record {
    pub line: usize,
    pub tokens: Vec<String>,
}

fn read_records(path: &Path) -> Result<(usize, Vec<Record>), CliError> {
    let text = read_file(path)?;
    let rules = TokenizerRules::default();
    let mut n_lines = 0;
    let mut records = Vec::new();
    for (line, raw) in text.lines().enumerate() {
        n_lines += 1;
        let tokens = tokenize(raw, rules);
        if !tokens.is_empty() {
            records.push(Record { line, tokens });
        }
    }
    Ok((n_lines, records))
}

fn load_corpus(cfg: &RunConfig) -> Result<(usize, Vec<Record>), CliError> {
    let (n, records) = read_records(corpus_path(cfg)?)?;
    if records.is_empty() {
        return Err(CliError::Core(erae_core::Error::EmptyCorpus));
    }
    Ok((n, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabStats {
    pub records: usize,
    pub tokens: usize,
    pub size: usize,
    /// Fraction of corpus tokens covered by the vocabulary.
    pub coverage: f64,
}

pub fn cmd_build_vocab(cfg: &RunConfig) -> Result<VocabStats, CliError> {
    let (_, records) = load_corpus(cfg)?;
    let toks: Vec<Vec<String>> = records.into_iter().map(|r| r.tokens).collect();
    let vocab = build_vocab(&toks, cfg.model.max_vocab)?;
    let path = out_path(cfg, VOCAB_FILE);
    write_file(&path, &vocab.to_file_string())?;
    let tokens: usize = toks.iter().map(Vec::len).sum();
    let known = toks.iter().flatten().filter(|t| vocab.id(t).is_some()).count();
    let stats = VocabStats {
        records: toks.len(),
        tokens,
        size: vocab.size(),
        coverage: known as f64 / tokens.max(1) as f64,
    };
    println!(
        "vocabulary: {} entries ({} records, {} tokens, coverage {:.4}) -> {}",
        stats.size,
        stats.records,
        stats.tokens,
        stats.coverage,
        path.display()
    );
    Ok(stats)
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary, CliError> {
    let path = out_path(cfg, VOCAB_FILE);
    if !path.exists() {
        return Err(CliError::Input(format!(
            "vocabulary not found at {}; run build-vocab first",
            path.display()
        )));
    }
    Ok(Vocabulary::parse(&read_file(&path)?)?)
}

fn load_emb(cfg: &RunConfig, vocab: &Vocabulary) -> Result<EmbeddingTable, CliError> {
    let path = cfg
        .paths
        .embeddings
        .as_deref()
        .ok_or_else(|| CliError::Config("paths.embeddings is not set".into()))?;
    if !path.exists() {
        return Err(CliError::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let emb = load_embeddings(path, vocab, cfg.model.emb_dim, cfg.seed)?;
    if emb.dim() != cfg.model.emb_dim {
        return Err(CliError::Config(format!(
            "embedding file has width {}, model.emb_dim is {}",
            emb.dim(),
            cfg.model.emb_dim
        )));
    }
    Ok(emb)
}

fn encode_all(records: &[Record], vocab: &Vocabulary, max_len: usize) -> Result<Vec<TokenSequence>, CliError> {
    records
        .iter()
        .map(|r| encode(&r.tokens, vocab, max_len).map_err(CliError::from))
        .collect()
}

/// The split written by the first command that needed it, or a fresh one
/// from the seed.
fn load_split(cfg: &RunConfig, n: usize) -> Result<SplitAssignment, CliError> {
    let path = out_path(cfg, SPLIT_FILE);
    if path.exists() {
        let s = SplitAssignment::parse_manifest(&read_file(&path)?)?;
        let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
        all.sort_unstable();
        if all.iter().copied().eq(0..n) {
            return Ok(s);
        }
        log::warn!("{} does not match the corpus; writing a new split", path.display());
    }
    let s = split_indices(n, cfg.seed)?;
    write_file(&path, &s.manifest())?;
    Ok(s)
}

pub fn cmd_train(cfg: &RunConfig, variant: Method) -> Result<TrainState, CliError> {
    let (_, records) = load_corpus(cfg)?;
    let vocab = load_vocab(cfg)?;
    let emb = load_emb(cfg, &vocab)?;
    let seqs = encode_all(&records, &vocab, cfg.model.max_len)?;
    let split = apply_split(&seqs, load_split(cfg, seqs.len())?);
    let model = cfg.model_config(vocab.size());
    let ckpt = cfg.checkpoint_path(variant);
    let mut tcfg = cfg.train_config(variant);
    tcfg.checkpoint = Some(ckpt.clone());
    if let Some(dir) = ckpt.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let log_path = out_path(cfg, &format!("train_log.{}.csv", variant.as_str()));

    let state = if ckpt.exists() {
        let state = TrainState::load(&ckpt, tcfg.adam)?;
        if state.params.config != model {
            return Err(CliError::Config(format!(
                "checkpoint {} was trained with {:?}, config asks for {:?}",
                ckpt.display(),
                state.params.config,
                model
            )));
        }
        log::info!("resuming {} from epoch {}", variant, state.epochs_done);
        let state = train_from(state, &split, &emb, &tcfg)?;
        // a loaded state only logs the epochs run now; append them
        let mut text = fs::read_to_string(&log_path).unwrap_or_default();
        if text.is_empty() {
            text = state.log_csv();
        } else {
            state.log_csv().lines().skip(1).for_each(|l| {
                let _ = writeln!(text, "{l}");
            });
        }
        write_file(&log_path, &text)?;
        state
    } else {
        let state = train(&split, &emb, model, &tcfg)?;
        write_file(&log_path, &state.log_csv())?;
        state
    };
    match state.log.last() {
        Some(e) => println!(
            "{}: epoch {} train_loss {:.4} dev_loss {:.4} dev_token_acc {:.4} -> {}",
            variant,
            e.epoch,
            e.train_loss,
            e.dev_loss,
            e.dev_token_acc,
            ckpt.display()
        ),
        None => println!("{}: already trained for {} epochs -> {}", variant, state.epochs_done, ckpt.display()),
    }
    Ok(state)
}

fn load_model(cfg: &RunConfig, variant: Method, vocab: &Vocabulary) -> Result<ModelParams, CliError> {
    let path = cfg.checkpoint_path(variant);
    if !path.exists() {
        return Err(CliError::Input(format!(
            "no {} checkpoint at {}; run `train --variant {}` first",
            variant,
            path.display(),
            variant
        )));
    }
    let params = ModelParams::from_records(&checkpoint::load(&path)?)?;
    if params.config.vocab_size != vocab.size() {
        return Err(CliError::Config(format!(
            "checkpoint {} has vocabulary {}, vocab file has {}",
            path.display(),
            params.config.vocab_size,
            vocab.size()
        )));
    }
    Ok(params)
}

/// Output file and ledger sidecar of an anonymize run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnonymizeOutput {
    pub output: PathBuf,
    pub ledger: PathBuf,
}

pub fn ledger_path(output: &Path) -> PathBuf {
    output.with_extension("ledger.csv")
}

pub fn cmd_anonymize(
    cfg: &RunConfig,
    method: Method,
    eps: f64,
    input: Option<&Path>,
    output: Option<&Path>,
) -> Result<AnonymizeOutput, CliError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::Config(format!("--eps must be positive, got {eps}")));
    }
    if method == Method::RandomR {
        log::warn!("random-r does not use a privacy budget; --eps is ignored");
    }
    let input = match input {
        Some(p) => p,
        None => corpus_path(cfg)?,
    };
    let (n_lines, records) = read_records(input)?;
    let vocab = load_vocab(cfg)?;
    let emb = load_emb(cfg, &vocab)?;
    let model = if method.needs_model() {
        Some(load_model(cfg, method, &vocab)?)
    } else {
        None
    };
    let seqs = encode_all(&records, &vocab, cfg.model.max_len)?;
    let setup = BatchSetup {
        vocab: &vocab,
        emb: &emb,
        model: model.as_ref(),
        k_subset: cfg.dp.k_subset,
        rule: cfg.dp.within_set.into(),
        seed: cfg.seed,
    };
    let generated = anonymize_batch(method, &seqs, eps, &setup)?;

    let mut lines = vec![String::new(); n_lines];
    let mut budgets: Vec<Option<f64>> = vec![Some(0.0); n_lines];
    if n_lines > records.len() {
        log::warn!("{} empty input lines are copied through unchanged", n_lines - records.len());
    }
    for (r, g) in records.iter().zip(&generated) {
        lines[r.line] = g.surface.clone();
        budgets[r.line] = g.ledger.map(|l| l.total);
    }
    let mut text = String::new();
    for l in &lines {
        let _ = writeln!(text, "{l}");
    }
    let mut ledger = String::from("line_no,method,eps,eps_effective_total\n");
    for (i, b) in budgets.iter().enumerate() {
        match (method.is_dp(), b) {
            (true, Some(total)) => {
                let _ = writeln!(ledger, "{},{},{},{}", i + 1, method, eps, total);
            }
            _ => {
                let _ = writeln!(ledger, "{},{},,", i + 1, method);
            }
        }
    }
    let output = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_path(cfg, &format!("anonymized.{}.txt", method.as_str())));
    let ledger_file = ledger_path(&output);
    write_file(&output, &text)?;
    write_file(&ledger_file, &ledger)?;
    println!(
        "{} lines rewritten with {} -> {} (ledger {})",
        n_lines,
        method,
        output.display(),
        ledger_file.display()
    );
    Ok(AnonymizeOutput {
        output,
        ledger: ledger_file,
    })
}

/// Two-set rows for every grid point with `k <= s`, exponential-mechanism
/// rows (k = 0) for every `(eps, s)`, then one identical-input control row.
pub fn cmd_audit(cfg: &RunConfig, pairs: usize) -> Result<Vec<AuditRow>, CliError> {
    let rule = cfg.dp.within_set.into();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for &eps in &cfg.audit.eps {
        for &s in &cfg.audit.s {
            for &k in &cfg.audit.k {
                if k > s {
                    log::info!("skipping audit point s={s}, k={k}: k_subset cannot exceed the vocabulary");
                    continue;
                }
                rows.push(audit_two_set(&DpParams::new(eps, k, s)?, rule, pairs, &mut rng)?);
            }
        }
    }
    for &eps in &cfg.audit.eps {
        for &s in &cfg.audit.s {
            rows.push(audit_exponential(eps, 1.0, s, pairs, &mut rng)?);
        }
    }
    let (eps, s, k) = (
        cfg.audit.eps.first().copied().unwrap_or(cfg.dp.epsilon),
        cfg.audit.s.first().copied().unwrap_or(2),
        cfg.audit.k.first().copied().unwrap_or(1),
    );
    rows.push(audit_two_set_control(&DpParams::new(eps, k, s)?, rule, pairs.clamp(1, 100), &mut rng)?);

    let path = out_path(cfg, AUDIT_FILE);
    write_file(&path, &audit_csv(&rows))?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("{} audit rows, {} violations -> {}", rows.len(), failed, path.display());
    if failed > 0 {
        return Err(CliError::Core(erae_core::Error::Diverged(format!(
            "{failed} audit rows exceed their bound"
        ))));
    }
    Ok(rows)
}

fn read_authors(path: &Path, n_lines: usize) -> Result<Vec<usize>, CliError> {
    let text = read_file(path)?;
    let authors: Vec<usize> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| {
                CliError::Input(format!("{}:{}: author id must be a non-negative integer", path.display(), i + 1))
            })
        })
        .collect::<Result<_, _>>()?;
    if authors.len() != n_lines {
        return Err(CliError::Input(format!(
            "{} has {} lines but the corpus has {}",
            path.display(),
            authors.len(),
            n_lines
        )));
    }
    Ok(authors)
}

/// Everything evaluate and sweep share: the attack is fitted on the
/// training part's originals, metrics use the test part.
struct EvalContext {
    vocab: Vocabulary,
    emb: EmbeddingTable,
    test: Vec<(TokenSequence, usize)>,
    attack: AttackModel,
    er_ae: Option<ModelParams>,
    ae_dp: Option<ModelParams>,
}

fn eval_context(cfg: &RunConfig) -> Result<EvalContext, CliError> {
    let methods = cfg.methods()?;
    let (n_lines, records) = load_corpus(cfg)?;
    let authors_path = cfg
        .paths
        .authors
        .as_deref()
        .ok_or_else(|| CliError::Config("paths.authors is not set".into()))?;
    let authors = read_authors(authors_path, n_lines)?;
    let vocab = load_vocab(cfg)?;
    let emb = load_emb(cfg, &vocab)?;
    let seqs = encode_all(&records, &vocab, cfg.model.max_len)?;
    let parts = load_split(cfg, seqs.len())?.part_of(seqs.len());
    let labeled = |part: SplitPart| -> Vec<(TokenSequence, usize)> {
        seqs.iter()
            .zip(&records)
            .zip(&parts)
            .filter(|(_, &p)| p == part)
            .map(|((x, r), _)| (x.clone(), authors[r.line]))
            .collect()
    };
    let train_part = labeled(SplitPart::Train);
    let test = labeled(SplitPart::Test);
    let attack_cfg = erae_core::evaluation::AttackConfig {
        seed: cfg.seed,
        ..cfg.eval.attack
    };
    let attack = train_authorship_attack(&train_part, &vocab, &attack_cfg)?;
    let er_ae = methods
        .contains(&Method::ErAe)
        .then(|| load_model(cfg, Method::ErAe, &vocab))
        .transpose()?;
    let ae_dp = methods
        .contains(&Method::AeDp)
        .then(|| load_model(cfg, Method::AeDp, &vocab))
        .transpose()?;
    Ok(EvalContext {
        vocab,
        emb,
        test,
        attack,
        er_ae,
        ae_dp,
    })
}

fn sweep_setup<'a>(cfg: &RunConfig, ctx: &'a EvalContext) -> Result<SweepSetup<'a>, CliError> {
    Ok(SweepSetup {
        records: &ctx.test,
        attack: &ctx.attack,
        er_ae: ctx.er_ae.as_ref(),
        ae_dp: ctx.ae_dp.as_ref(),
        methods: cfg.methods()?,
        vocab: &ctx.vocab,
        emb: &ctx.emb,
        k_subset: cfg.dp.k_subset,
        rule: cfg.dp.within_set.into(),
        seed: cfg.seed,
    })
}

/// Original row plus one row per configured method at `eps`.
pub fn cmd_evaluate(cfg: &RunConfig, eps: f64) -> Result<Vec<EvalReport>, CliError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::Config(format!("--eps must be positive, got {eps}")));
    }
    let ctx = eval_context(cfg)?;
    let setup = sweep_setup(cfg, &ctx)?;
    let mut rows = vec![original_row(&setup)?];
    for &m in &setup.methods {
        rows.push(evaluate_method(m, eps, &setup)?);
    }
    let path = out_path(cfg, REPORT_FILE);
    write_file(&path, &report_csv(&rows))?;
    println!("{} report rows on {} test records -> {}", rows.len(), ctx.test.len(), path.display());
    Ok(rows)
}

pub fn cmd_sweep(cfg: &RunConfig, grid: &[f64]) -> Result<Vec<EvalReport>, CliError> {
    let ctx = eval_context(cfg)?;
    let setup = sweep_setup(cfg, &ctx)?;
    let rows = sweep(grid, &setup)?;
    let csv_path = out_path(cfg, SWEEP_FILE);
    let plot_path = out_path(cfg, SWEEP_PLOT_FILE);
    write_file(&csv_path, &report_csv(&rows))?;
    write_file(&plot_path, &plot_data(&rows))?;
    println!("{} sweep rows -> {} and {}", rows.len(), csv_path.display(), plot_path.display());
    Ok(rows)
}

pub const SYNTH_CORPUS_FILE: &str = "corpus.txt";
pub const SYNTH_AUTHORS_FILE: &str = "authors.txt";
pub const SYNTH_EMBEDDINGS_FILE: &str = "embeddings.txt";

/// Writes the toy corpus, its author labels and embeddings sized to the
/// configured embedding width.
pub fn cmd_synth_corpus(cfg: &RunConfig, authors: usize, sentences_per_author: usize) -> Result<PathBuf, CliError> {
    let scfg = SyntheticConfig {
        authors,
        sentences_per_author,
        emb_dim: cfg.model.emb_dim,
        vector_scale: (cfg.model.emb_dim as f64).sqrt(),
        seed: cfg.seed,
        ..SyntheticConfig::default()
    };
    let corpus = generate(&scfg)?;
    let dir = &cfg.paths.output_dir;
    write_file(&dir.join(SYNTH_CORPUS_FILE), &corpus.corpus_text())?;
    write_file(&dir.join(SYNTH_AUTHORS_FILE), &corpus.authors_text())?;
    write_file(&dir.join(SYNTH_EMBEDDINGS_FILE), &corpus.embeddings)?;
    println!("{} lines by {} authors -> {}", corpus.lines.len(), authors, dir.display());
    Ok(dir.clone())
}
