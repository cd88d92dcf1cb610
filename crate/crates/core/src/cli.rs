//! `kgc` command line: prepare, tokenize, embed, whiten, train, eval.
//!
//! Usage errors exit with 2, failures inside the toolkit with 1 and a single
//! diagnostic line on stderr. Every output is written atomically and gets a
//! `manifest.json` (or `<file>.manifest.json`) recording the resolved settings.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{KgcError, Result};
use crate::evaluator;
use crate::fsutil::write_atomic;
use crate::kgdata::{format_triples, ColumnOrder, Dataset, Sampling};
use crate::scoring::{ModelKind, ModelParams, ScoreNorm};
use crate::semstore::{self, SemanticStore, DEFAULT_FALLBACK_DIM};
use crate::trainer::{self, named_stream, TrainConfig};
use crate::whitening::{self, WhiteningTransform};
use crate::wordpiece::{self, SubwordVocab};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const DEFAULT_VOCAB_SIZE: usize = 8000;

#[derive(Debug, Parser)]
#[command(name = "kgc", version, about = "Knowledge graph completion with translation models and semantic fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate the splits; write the vocabulary and filter statistics.
    Prepare(PrepareArgs),
    /// Train a WordPiece vocabulary on the entity and relation labels.
    Tokenize(TokenizeArgs),
    /// Build semantic vectors with the fallback embedder, or validate a SEMVEC file.
    Embed(EmbedArgs),
    /// Fit (or apply) a whitening-k transform to a SEMVEC file.
    Whiten(WhitenArgs),
    /// Train a translation model; writes a checkpoint, loss curve and manifest.
    Train(TrainArgs),
    /// Rank a split with a checkpoint; writes the JSON report.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Directory holding train.txt, valid.txt, test.txt and optionally labels.txt.
    #[arg(long)]
    dataset: PathBuf,
    /// Column order of the triple files, a permutation of "hrt".
    #[arg(long, default_value = "hrt")]
    columns: ColumnOrder,
}

#[derive(Debug, Args)]
struct PrepareArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TokenizeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Target vocabulary size, including the base characters.
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    /// Stop merging once the best likelihood gain is at or below this.
    #[arg(long, default_value_t = 0.0)]
    min_delta: f64,
    /// Output vocabulary file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Validate this SEMVEC file against the dataset instead of embedding.
    #[arg(long)]
    semvec: Option<PathBuf>,
    /// WordPiece vocabulary; trained on the labels when absent.
    #[arg(long)]
    wordpiece: Option<PathBuf>,
    /// Vocabulary size when the WordPiece vocabulary is trained here.
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    /// Dimension of the fallback vectors.
    #[arg(long, default_value_t = DEFAULT_FALLBACK_DIM)]
    sem_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output SEMVEC file (required unless validating).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WhitenArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Input SEMVEC file.
    #[arg(long)]
    semvec: PathBuf,
    /// Number of whitened directions to keep.
    #[arg(long, default_value_t = 128)]
    k: usize,
    /// Eigenvalue floor.
    #[arg(long, default_value_t = whitening::DEFAULT_EPS)]
    eps: f64,
    /// Apply this saved transform instead of fitting one.
    #[arg(long)]
    transform: Option<PathBuf>,
    /// Where to save the fitted transform.
    #[arg(long)]
    transform_out: Option<PathBuf>,
    /// Output SEMVEC file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Checkpoint directory; also receives loss.csv and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Whitened SEMVEC file for the aesi model; built in-process when absent.
    #[arg(long)]
    semvec: Option<PathBuf>,
    /// Model: transe | transh | aesi.
    #[arg(long, default_value_t = ModelKind::Aesi)]
    model: ModelKind,
    /// Learning rate.
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Margin γ.
    #[arg(long, default_value_t = 4.0)]
    margin: f64,
    /// Score norm p (1 or 2).
    #[arg(long, default_value_t = 1)]
    norm: u8,
    /// Soft-constraint weight.
    #[arg(long = "C", default_value_t = 0.001)]
    c: f64,
    /// Orthogonality tolerance ε.
    #[arg(long, default_value_t = 0.001)]
    epsilon: f64,
    /// NT-Xent temperature.
    #[arg(long, default_value_t = crate::semloss::DEFAULT_TAU)]
    tau: f64,
    /// Weight of the contrastive term inside the soft constraints.
    #[arg(long, default_value_t = 1.0)]
    lambda_sem: f64,
    /// Standard deviation of the view augmentation noise.
    #[arg(long, default_value_t = crate::semloss::DEFAULT_AUG_SIGMA)]
    aug_sigma: f64,
    /// Put negatives in the contrastive pool.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    include_negatives: bool,
    /// Embedding dimension.
    #[arg(long, default_value_t = 128)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
    /// Negative sampling: unif | bern.
    #[arg(long, default_value_t = Sampling::Unif)]
    sampling: Sampling,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (training itself is sequential).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// WordPiece vocabulary size for the in-process fallback.
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    /// Fallback vector dimension before whitening.
    #[arg(long, default_value_t = DEFAULT_FALLBACK_DIM)]
    sem_dim: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split to rank: test | valid.
    #[arg(long, default_value = "test")]
    split: String,
    /// 1 = sequential; 0 = all cores.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub command: String,
    pub dataset: String,
    pub dataset_dir: String,
    pub seed: Option<u64>,
    pub settings: BTreeMap<String, Value>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    fn new(command: &str, data: &DatasetArgs, dataset_name: &str) -> Self {
        Self {
            toolkit: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            dataset: dataset_name.to_owned(),
            dataset_dir: data.dataset.display().to_string(),
            seed: None,
            settings: BTreeMap::from([("columns".to_owned(), json!(data.columns.to_string()))]),
            outputs: BTreeMap::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    fn set(&mut self, key: &str, value: Value) {
        self.settings.insert(key.to_owned(), value);
    }

    fn output(&mut self, key: &str, path: &Path) {
        self.outputs.insert(key.to_owned(), path.display().to_string());
    }

    fn write(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n";
        write_atomic(path, text.as_bytes())
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("KGC_LOG", "warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("kgc: error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare(a) => prepare(a),
        Command::Tokenize(a) => tokenize(a),
        Command::Embed(a) => embed(a),
        Command::Whiten(a) => whiten(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
    }
}

fn load(data: &DatasetArgs) -> Result<Dataset> {
    let ds = Dataset::load_dir(&data.dataset, data.columns)?;
    log::info!(
        "{}: {} entities, {} relations, {}/{}/{} triples",
        ds.name,
        ds.vocab.n_entities(),
        ds.vocab.n_relations(),
        ds.train.len(),
        ds.valid.len(),
        ds.test.len()
    );
    Ok(ds)
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let index = ds.filter_index();
    let lines = |names: &[String]| names.iter().map(|n| format!("{n}\n")).collect::<String>();
    let entities = a.out.join("entities.txt");
    let relations = a.out.join("relations.txt");
    write_atomic(&entities, lines(ds.vocab.entity_names()).as_bytes())?;
    write_atomic(&relations, lines(ds.vocab.relation_names()).as_bytes())?;

    let per_relation: Vec<Value> = (0..ds.vocab.n_relations())
        .map(|r| {
            json!({
                "relation": ds.vocab.relation_name(r),
                "tph": index.tph(r),
                "hpt": index.hpt(r),
                "head_replace_prob": index.head_replace_prob(r),
            })
        })
        .collect();
    let stats = json!({
        "n_entities": ds.vocab.n_entities(),
        "n_relations": ds.vocab.n_relations(),
        "n_train": ds.train.len(),
        "n_valid": ds.valid.len(),
        "n_test": ds.test.len(),
        "n_known": index.len(),
        "labels": ds.labels_path.as_ref().map(|p| p.display().to_string()),
        "relations": per_relation,
    });
    let stats_path = a.out.join("filter_stats.json");
    write_atomic(&stats_path, (serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n").as_bytes())?;

    // Normalized copies of the splits, in canonical column order.
    for split in [&ds.train, &ds.valid, &ds.test] {
        write_atomic(
            &a.out.join(split.split.file_name()),
            format_triples(split, &ds.vocab, ColumnOrder::HRT).as_bytes(),
        )?;
    }

    let mut m = RunManifest::new("prepare", &a.data, &ds.name);
    m.output("entities", &entities);
    m.output("relations", &relations);
    m.output("filter_stats", &stats_path);
    m.write(&a.out.join(MANIFEST_FILE))
}

fn label_corpus(ds: &Dataset) -> Vec<&str> {
    ds.labels.all_texts().collect()
}

fn tokenize(a: TokenizeArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let vocab = wordpiece::train_vocab(&label_corpus(&ds), a.vocab_size, a.min_delta)?;
    log::info!("wordpiece: {} tokens, {} merges", vocab.len(), vocab.merge_log.len());
    log::debug!("{}", wordpiece::describe_merges(&vocab, 20));
    vocab.save(&a.out)?;
    let mut m = RunManifest::new("tokenize", &a.data, &ds.name);
    m.set("vocab_size", json!(a.vocab_size));
    m.set("min_delta", json!(a.min_delta));
    m.set("tokens", json!(vocab.len()));
    m.output("vocab", &a.out);
    m.write(&sidecar(&a.out))
}

fn embed(a: EmbedArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let mut m = RunManifest::new("embed", &a.data, &ds.name);
    if let Some(path) = &a.semvec {
        let store = semstore::load_semvec(path, &ds.vocab)?;
        println!(
            "{}: ok, {} entities, {} relations, dim {}",
            path.display(),
            store.n_entities(),
            store.n_relations(),
            store.dim()
        );
        return Ok(());
    }
    let out = a
        .out
        .as_ref()
        .ok_or_else(|| KgcError::domain("embed needs --out unless --semvec is given"))?;
    let vocab = match &a.wordpiece {
        Some(p) => SubwordVocab::load(p)?,
        None => wordpiece::train_vocab_at_least(&label_corpus(&ds), a.vocab_size, 0.0)?,
    };
    let store = semstore::fallback_embed(&ds.labels, &vocab, a.sem_dim, a.seed)?;
    store.save(out, &ds.vocab)?;
    m.seed = Some(a.seed);
    m.set("sem_dim", json!(a.sem_dim));
    m.set("vocab_size", json!(vocab.len()));
    m.set(
        "wordpiece",
        json!(a.wordpiece.as_ref().map(|p| p.display().to_string())),
    );
    m.output("semvec", out);
    m.write(&sidecar(out))
}

fn whiten_store(store: &SemanticStore, t: &WhiteningTransform) -> Result<SemanticStore> {
    let x = whitening::matrix_from_rows(store.rows(), store.dim());
    let y = whitening::apply_whitening(&x, t)?;
    store.with_rows(whitening::matrix_to_rows(&y), true)
}

fn whiten(a: WhitenArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let store = semstore::load_semvec(&a.semvec, &ds.vocab)?;
    let t = match &a.transform {
        Some(p) => WhiteningTransform::load(p)?,
        None => {
            let x = whitening::matrix_from_rows(store.rows(), store.dim());
            whitening::fit_whitening(&x, a.k, a.eps)?
        }
    };
    let out = whiten_store(&store, &t)?;
    out.save(&a.out, &ds.vocab)?;
    let mut m = RunManifest::new("whiten", &a.data, &ds.name);
    m.set("k", json!(t.target_dim()));
    m.set("eps", json!(a.eps));
    m.set("source_dim", json!(t.source_dim()));
    if let Some(p) = &a.transform {
        m.set("transform", json!(p.display().to_string()));
    }
    if let Some(p) = &a.transform_out {
        t.save(p)?;
        m.output("transform", p);
    }
    m.output("semvec", &a.out);
    m.write(&sidecar(&a.out))
}

fn named_seed(seed: u64, name: &str) -> u64 {
    semstore::token_hash(name, seed)
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let cfg = TrainConfig {
        lr: a.lr,
        margin: a.margin,
        c: a.c,
        epsilon: a.epsilon,
        tau: a.tau,
        lambda_sem: a.lambda_sem,
        aug_sigma: a.aug_sigma,
        include_negatives: a.include_negatives,
        score_norm: ScoreNorm::from_p(a.norm)?,
        dim: a.dim,
        epochs: a.epochs,
        batch_size: a.batch_size,
        sampling: a.sampling,
        model: a.model,
        seed: a.seed,
    };
    cfg.validate()?;
    let sem = if cfg.model == ModelKind::Aesi {
        Some(match &a.semvec {
            Some(p) => {
                let s = semstore::load_semvec(p, &ds.vocab)?;
                if !s.whitened {
                    log::warn!("{}: semantic vectors are not marked as whitened", p.display());
                }
                s
            }
            None => semstore::fallback_pipeline(&ds.labels, a.vocab_size, a.sem_dim, cfg.dim, named_seed(cfg.seed, "semantic"))?,
        })
    } else {
        None
    };
    let mut init_rng = named_stream(cfg.seed, "init");
    let params = ModelParams::init(
        ds.vocab.n_entities(),
        ds.vocab.n_relations(),
        cfg.dim,
        cfg.score_norm,
        cfg.model,
        &mut init_rng,
    )?;
    let index = ds.filter_index();
    let (params, history) = trainer::train(&ds.train, &ds.valid, params, sem.as_ref(), &index, &cfg)?;

    params.save(&a.out)?;
    let loss_path = a.out.join(LOSS_FILE);
    write_atomic(&loss_path, history.to_csv().as_bytes())?;

    let mut m = RunManifest::new("train", &a.data, &ds.name);
    m.seed = Some(cfg.seed);
    for (k, v) in train_settings(&cfg) {
        m.set(k, v);
    }
    m.set("threads", json!(a.threads));
    m.set(
        "semantic_source",
        json!(match (&sem, &a.semvec) {
            (None, _) => "none".to_owned(),
            (Some(_), Some(p)) => p.display().to_string(),
            (Some(_), None) => "fallback".to_owned(),
        }),
    );
    if sem.is_some() && a.semvec.is_none() {
        m.set("vocab_size", json!(a.vocab_size));
        m.set("sem_dim", json!(a.sem_dim));
    }
    if let Some(last) = history.epochs.last() {
        m.set("final_train_loss", json!(last.train_loss));
        m.set("final_valid_loss", json!(last.valid_loss));
    }
    m.output("checkpoint", &a.out);
    m.output("loss", &loss_path);
    m.write(&a.out.join(MANIFEST_FILE))
}

fn train_settings(cfg: &TrainConfig) -> Vec<(&'static str, Value)> {
    vec![
        ("model", json!(cfg.model.to_string())),
        ("lr", json!(cfg.lr)),
        ("margin", json!(cfg.margin)),
        ("norm", json!(cfg.score_norm.p())),
        ("C", json!(cfg.c)),
        ("epsilon", json!(cfg.epsilon)),
        ("tau", json!(cfg.tau)),
        ("lambda_sem", json!(cfg.lambda_sem)),
        ("aug_sigma", json!(cfg.aug_sigma)),
        ("include_negatives", json!(cfg.include_negatives)),
        ("dim", json!(cfg.dim)),
        ("epochs", json!(cfg.epochs)),
        ("batch_size", json!(cfg.batch_size)),
        ("sampling", json!(cfg.sampling.to_string())),
    ]
}

fn eval(a: EvalArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let params = ModelParams::load(&a.checkpoint)?;
    if params.n_entities() != ds.vocab.n_entities() || params.n_relations() != ds.vocab.n_relations() {
        return Err(KgcError::domain(format!(
            "checkpoint has {} entities / {} relations, dataset has {} / {}",
            params.n_entities(),
            params.n_relations(),
            ds.vocab.n_entities(),
            ds.vocab.n_relations()
        )));
    }
    let split = match a.split.as_str() {
        "test" => &ds.test,
        "valid" => &ds.valid,
        other => return Err(KgcError::domain(format!("unknown split {other:?} (expected test|valid)"))),
    };
    let report = evaluator::evaluate(split, &params, &ds.filter_index(), a.threads)?;
    log::info!(
        "MR raw {:.1} filt {:.1}, Hits@10 raw {:.1} filt {:.1}",
        report.mr_raw,
        report.mr_filt,
        report.hits10_raw,
        report.hits10_filt
    );
    let text = report.to_json() + "\n";
    match &a.out {
        Some(out) => {
            write_atomic(out, text.as_bytes())?;
            let mut m = RunManifest::new("eval", &a.data, &ds.name);
            m.set("split", json!(a.split));
            m.set("threads", json!(a.threads));
            m.output("checkpoint", &a.checkpoint);
            m.output("report", out);
            m.write(&sidecar(out))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
