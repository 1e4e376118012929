//! Command-line front end: argument definitions, config-file handling and
//! the subcommand implementations behind the `vqaret` binary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::info;

use vqaret::eval::{evaluate, paired_t_test, DEFAULT_CUTOFF};
use vqaret::ranking::write_run;
use vqaret::training::{
    dense_run, load_instances, save_instances, train, write_metrics_csv, Validation,
};
use vqaret::{
    build_index, build_store, build_training_data, build_validation_collection, load_passages,
    load_queries, load_run, save_run, synth_gen, tune_params, Bm25Params, Checkpoint, Collection,
    ExpansionMode, FusionMethod, InvertedIndex, NegativeSamplingStrategy, RankedList, TrainConfig,
    VectorStore,
};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "vqaret",
    version,
    about = "Passage retrieval for visual questions"
)]
pub struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,

    /// Flat `key = value` file supplying defaults for any flag
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More logging (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a BM25 index from a passage file
    IndexBuild(IndexBuildArgs),
    /// Search an index with expanded queries and write a run
    SearchSparse(SearchSparseArgs),
    /// Grid-search BM25 k1 and b on validation queries
    TuneSparse(TuneSparseArgs),
    /// Fuse run files per query
    Fuse(FuseArgs),
    /// Build training instances (and a validation collection) from runs
    MkTrain(MkTrainArgs),
    /// Encode passages into a vector store
    Encode(EncodeArgs),
    /// Exact inner-product search over a vector store
    SearchDense(SearchDenseArgs),
    /// Train the dual encoder
    Train(TrainArgs),
    /// Score a run with MRR@k and P@k
    Eval(EvalArgs),
    /// Paired t-test between two runs
    Significance(SignificanceArgs),
    /// Generate a synthetic collection
    SynthGen(SynthGenArgs),
}

#[derive(Debug, Args)]
pub struct IndexBuildArgs {
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Bm25Flags {
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SearchSparseArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// orig, obj, cap or all [default: cap]
    #[arg(long, value_parser = parse_core::<ExpansionMode>)]
    pub mode: Option<ExpansionMode>,
    /// combmax, combsum or rrf [default: combsum]
    #[arg(long, value_parser = parse_core::<FusionMethod>)]
    pub fusion: Option<FusionMethod>,
    /// RRF constant [default: 60]
    #[arg(long = "const")]
    pub constant: Option<f64>,
    /// Results per query [default: 100]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[command(flatten)]
    pub bm25: Bm25Flags,
    #[arg(long)]
    pub tag: Option<String>,
    /// Output run file (default: stdout)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneSparseArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Validation queries
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(long, value_parser = parse_core::<ExpansionMode>)]
    pub mode: Option<ExpansionMode>,
    #[arg(long, value_parser = parse_core::<FusionMethod>)]
    pub fusion: Option<FusionMethod>,
    #[arg(long = "const")]
    pub constant: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// combmax, combsum or rrf
    #[arg(long, value_parser = parse_core::<FusionMethod>)]
    pub method: Option<FusionMethod>,
    #[arg(long = "const")]
    pub constant: Option<f64>,
    /// Keep the top k fused results per query
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MkTrainArgs {
    /// Retrieval run over the training queries
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    /// Positives kept per query [default: 5]
    #[arg(long)]
    pub top_pos: Option<usize>,
    /// Negatives sampled per positive [default: 5]
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Run over the validation queries
    #[arg(long, requires = "val_out")]
    pub val_run: Option<PathBuf>,
    /// Passages kept per validation query [default: 20]
    #[arg(long)]
    pub val_top: Option<usize>,
    /// Where to write the validation passage ids, one per line
    #[arg(long, requires = "val_run")]
    pub val_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchDenseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Add region features to the query [default: as trained]
    #[arg(long)]
    pub use_visual: Option<bool>,
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub instances: PathBuf,
    /// Training queries
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(long)]
    pub val_queries: PathBuf,
    /// Validation passage ids, one per line
    #[arg(long)]
    pub val_collection: PathBuf,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// rneg, rneg-ibneg, rneg-ibpos or rneg-iball
    #[arg(long, value_parser = parse_core::<NegativeSamplingStrategy>)]
    pub strategy: Option<NegativeSamplingStrategy>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub projection_size: Option<usize>,
    #[arg(long)]
    pub use_visual: Option<bool>,
    /// Checkpoint path
    #[arg(short, long)]
    pub out: PathBuf,
    /// Metrics CSV path
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    /// Metric cutoff [default: 5]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub cutoff: Option<u64>,
    /// Per-query CSV path
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SignificanceArgs {
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub cutoff: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub num_passages: Option<usize>,
    #[arg(long)]
    pub num_queries: Option<usize>,
    /// Output directory
    #[arg(short, long)]
    pub out: PathBuf,
}

fn parse_core<T>(s: &str) -> Result<T, String>
where
    T: FromStr<Err = vqaret::Error>,
{
    s.parse().map_err(|e: vqaret::Error| e.to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(vqaret::Error),
    Io(PathBuf, io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(vqaret::Error::InvalidArgument(_)) => EXIT_USAGE,
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<vqaret::Error> for CliError {
    fn from(e: vqaret::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

const CONFIG_KEYS: &[&str] = &[
    "threads",
    "mode",
    "fusion",
    "method",
    "const",
    "k",
    "k1",
    "b",
    "tag",
    "top-pos",
    "repeats",
    "seed",
    "val-top",
    "batch-size",
    "lr",
    "epochs",
    "strategy",
    "eval-every",
    "embedding-dim",
    "projection-size",
    "use-visual",
    "cutoff",
    "num-passages",
    "num-queries",
];

/// Values from a flat `key = value` config file. Keys are flag names
/// without the leading dashes; `#` starts a comment.
#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("config line {}: expected key = value", i + 1))
            })?;
            let key = key.trim().replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key `{key}`",
                    i + 1
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        Self::parse(&text)
    }

    /// Flag value if given, else the config value, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config `{key}`: {e}"))),
        }
    }
}

/// Combines a fusion name with an optional `--const`.
fn fusion_with_constant(method: FusionMethod, constant: Option<f64>) -> CliResult<FusionMethod> {
    match (method, constant) {
        (m, None) => Ok(m),
        (FusionMethod::Rrf { .. }, Some(c)) if c > 0.0 && c.is_finite() => {
            Ok(FusionMethod::Rrf { constant: c })
        }
        (FusionMethod::Rrf { .. }, Some(c)) => Err(CliError::Usage(format!(
            "RRF constant must be positive, got {c}"
        ))),
        (m, Some(_)) => Err(CliError::Usage(format!(
            "--const only applies to rrf, not {m}"
        ))),
    }
}

fn resolve_fusion(
    cfg: &Config,
    flag: Option<FusionMethod>,
    key: &str,
    constant: Option<f64>,
) -> CliResult<FusionMethod> {
    let method = cfg.pick(flag, key, FusionMethod::CombSum)?;
    // a config-file constant only matters when the method is rrf
    let constant = match (constant, method) {
        (Some(c), _) => Some(c),
        (None, FusionMethod::Rrf { .. }) => cfg.pick_opt(None, "const")?,
        _ => None,
    };
    fusion_with_constant(method, constant)
}

fn bm25(cfg: &Config, flags: &Bm25Flags) -> CliResult<Bm25Params> {
    let d = Bm25Params::default();
    let k1 = cfg.pick(flags.k1, "k1", d.k1)?;
    let b = cfg.pick(flags.b, "b", d.b)?;
    Ok(Bm25Params::new(k1, b)?)
}

fn emit_run(out: Option<&Path>, lists: &[RankedList], tag: &str) -> CliResult<()> {
    match out {
        Some(path) => Ok(save_run(path, lists, tag)?),
        None => {
            let stdout = io::stdout();
            write_run(BufWriter::new(stdout.lock()), lists, tag)
                .map_err(|e| CliError::Io("<stdout>".into(), e))
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Loads only the passages whose ids appear in the top `depth` of `runs`.
fn passages_for_runs(path: &Path, runs: &[&[RankedList]], depth: usize) -> CliResult<Collection> {
    let ids: BTreeSet<&str> = runs
        .iter()
        .flat_map(|r| r.iter())
        .flat_map(|l| l.entries.iter().take(depth).map(|e| e.passage_id.as_str()))
        .collect();
    Ok(Collection::load_filtered(path, |id| ids.contains(id))?)
}

fn read_id_list(path: &Path) -> CliResult<Vec<String>> {
    let file = File::open(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let mut ids = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        let id = line.trim();
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

/// Fuses lists query by query; a query missing from some runs is fused
/// from the runs that have it. Queries keep their first-seen order.
pub fn fuse_runs(
    runs: &[Vec<RankedList>],
    method: FusionMethod,
    k: Option<usize>,
) -> CliResult<Vec<RankedList>> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_query: HashMap<&str, Vec<RankedList>> = HashMap::new();
    for run in runs {
        for list in run {
            let slot = by_query.entry(list.query_id.as_str()).or_insert_with(|| {
                order.push(list.query_id.as_str());
                Vec::new()
            });
            slot.push(list.clone());
        }
    }
    order
        .iter()
        .map(|q| {
            let mut fused = method.fuse(&by_query[q])?;
            if let Some(k) = k {
                fused.truncate(k);
            }
            Ok(fused)
        })
        .collect()
}

pub fn init_threads(threads: Option<u32>) -> CliResult<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    init_threads(cfg.pick_opt(cli.threads, "threads")?)?;
    match cli.command {
        Command::IndexBuild(a) => index_build(a),
        Command::SearchSparse(a) => search_sparse(&cfg, a),
        Command::TuneSparse(a) => tune_sparse(&cfg, a),
        Command::Fuse(a) => fuse(&cfg, a),
        Command::MkTrain(a) => mk_train(&cfg, a),
        Command::Encode(a) => encode(a),
        Command::SearchDense(a) => search_dense(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Significance(a) => significance(&cfg, a),
        Command::SynthGen(a) => synth(&cfg, a),
    }
}

fn index_build(a: IndexBuildArgs) -> CliResult<()> {
    let index = build_index(load_passages(&a.passages)?)?;
    info!(
        "indexed {} passages, {} terms",
        index.num_docs(),
        index.num_terms()
    );
    index.save(&a.out)?;
    Ok(())
}

fn search_sparse(cfg: &Config, a: SearchSparseArgs) -> CliResult<()> {
    let mode = cfg.pick(a.mode, "mode", ExpansionMode::Cap)?;
    let fusion = resolve_fusion(cfg, a.fusion, "fusion", a.constant)?;
    let k = cfg.pick(a.k, "k", 100)? as usize;
    let params = bm25(cfg, &a.bm25)?;
    let tag = cfg.pick(a.tag, "tag", format!("bm25-{mode}-{fusion}"))?;
    let index = InvertedIndex::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let run = index.retrieve_all(params, &queries, mode, fusion, k)?;
    emit_run(a.out.as_deref(), &run, &tag)
}

fn tune_sparse(cfg: &Config, a: TuneSparseArgs) -> CliResult<()> {
    let mode = cfg.pick(a.mode, "mode", ExpansionMode::Cap)?;
    let fusion = resolve_fusion(cfg, a.fusion, "fusion", a.constant)?;
    let k = cfg.pick(a.k, "k", 100)? as usize;
    let index = InvertedIndex::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let passages = Collection::load(&a.passages)?;
    let report = tune_params(&index, &queries, &passages, mode, fusion, k)?;
    let mut out = io::stdout().lock();
    let w = |out: &mut io::StdoutLock, line: String| {
        writeln!(out, "{line}").map_err(|e| CliError::Io("<stdout>".into(), e))
    };
    for (p, mrr) in &report.grid {
        w(
            &mut out,
            format!("k1={:.1} b={:.1} MRR@5={mrr:.4}", p.k1, p.b),
        )?;
    }
    w(
        &mut out,
        format!(
            "best k1={:.1} b={:.1} MRR@5={:.4}",
            report.best.k1, report.best.b, report.best_mrr
        ),
    )
}

fn fuse(cfg: &Config, a: FuseArgs) -> CliResult<()> {
    let method = resolve_fusion(cfg, a.method, "method", a.constant)?;
    let k = cfg.pick_opt(a.k, "k")?.map(|k| k as usize);
    let tag = cfg.pick(a.tag, "tag", format!("fused-{method}"))?;
    let runs = a.runs.iter().map(load_run).collect::<Result<Vec<_>, _>>()?;
    let fused = fuse_runs(&runs, method, k)?;
    emit_run(a.out.as_deref(), &fused, &tag)
}

fn mk_train(cfg: &Config, a: MkTrainArgs) -> CliResult<()> {
    let top_pos = cfg.pick(a.top_pos, "top-pos", 5)?;
    let repeats = cfg.pick(a.repeats, "repeats", 5)?;
    let seed = cfg.pick(a.seed, "seed", 0)?;
    let val_top = cfg.pick(a.val_top, "val-top", 20)?;
    let run = load_run(&a.run)?;
    let queries = load_queries(&a.queries)?;
    let passages = passages_for_runs(&a.passages, &[&run], usize::MAX)?;
    let data = build_training_data(&run, &passages, &queries, top_pos, repeats, seed)?;
    info!(
        "{} instances, {} queries without usable positives or negatives",
        data.instances.len(),
        data.skipped_queries
    );
    save_instances(&a.out, &data.instances)?;
    if let (Some(val_run), Some(val_out)) = (a.val_run, a.val_out) {
        let ids = build_validation_collection(&load_run(&val_run)?, val_top);
        let mut w = create(&val_out)?;
        for id in &ids {
            writeln!(w, "{id}").map_err(|e| CliError::Io(val_out.clone(), e))?;
        }
        w.flush().map_err(|e| CliError::Io(val_out.clone(), e))?;
        info!("{} validation passages", ids.len());
    }
    Ok(())
}

fn encode(a: EncodeArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let passages = Collection::load(&a.passages)?;
    let store = build_store(&ckpt.params, passages.iter())?;
    store.save(&a.out)?;
    Ok(())
}

fn search_dense(cfg: &Config, a: SearchDenseArgs) -> CliResult<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let k = cfg.pick(a.k, "k", 100)? as usize;
    let use_visual = cfg.pick(a.use_visual, "use-visual", ckpt.config.use_visual)?;
    let tag = cfg.pick(a.tag, "tag", "dense".to_string())?;
    let store = VectorStore::load(&a.store)?;
    let queries = load_queries(&a.queries)?;
    let run = dense_run(&ckpt.params, &store, &queries, use_visual, k)?;
    emit_run(a.out.as_deref(), &run, &tag)
}

pub fn train_config(cfg: &Config, a: &TrainArgs) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        batch_size: cfg.pick(a.batch_size, "batch-size", d.batch_size)?,
        learning_rate: cfg.pick(a.lr, "lr", d.learning_rate)?,
        epochs: cfg.pick(a.epochs, "epochs", d.epochs)?,
        strategy: cfg.pick(a.strategy, "strategy", d.strategy)?,
        seed: cfg.pick(a.seed, "seed", d.seed)?,
        eval_every_steps: cfg.pick(a.eval_every, "eval-every", d.eval_every_steps)?,
        embedding_dim: cfg.pick(a.embedding_dim, "embedding-dim", d.embedding_dim)?,
        projection_size: cfg.pick(a.projection_size, "projection-size", d.projection_size)?,
        use_visual: cfg.pick(a.use_visual, "use-visual", d.use_visual)?,
    })
}

fn train_cmd(cfg: &Config, a: TrainArgs) -> CliResult<()> {
    let config = train_config(cfg, &a)?;
    let instances = load_instances(&a.instances)?;
    let queries = load_queries(&a.queries)?;
    let val_queries = load_queries(&a.val_queries)?;
    let val_ids = read_id_list(&a.val_collection)?;
    let needed: BTreeSet<&str> = instances
        .iter()
        .flat_map(|i| [i.positive_id.as_str(), i.negative_id.as_str()])
        .chain(val_ids.iter().map(String::as_str))
        .collect();
    let passages = Collection::load_filtered(&a.passages, |id| needed.contains(id))?;
    let validation = Validation {
        queries: &val_queries,
        collection: &val_ids,
    };
    let outcome = train(&config, &instances, &queries, &passages, &validation)?;
    info!(
        "best validation MRR@5 {:.4} at step {} of {}",
        outcome.best_val_mrr, outcome.best_step, outcome.total_steps
    );
    if let Some(path) = &a.metrics {
        let mut w = create(path)?;
        write_metrics_csv(&mut w, &outcome.log)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::Io(path.clone(), e))?;
    }
    Checkpoint {
        params: outcome.params,
        config,
        step: outcome.best_step,
    }
    .save(&a.out)?;
    Ok(())
}

fn eval_cmd(cfg: &Config, a: EvalArgs) -> CliResult<()> {
    let cutoff = cfg.pick(a.cutoff, "cutoff", DEFAULT_CUTOFF as u64)? as usize;
    let run = load_run(&a.run)?;
    let queries = load_queries(&a.queries)?;
    let passages = passages_for_runs(&a.passages, &[&run], cutoff)?;
    let result = evaluate(&run, &queries, &passages, cutoff)?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        result
            .write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| CliError::Io(path.clone(), e))?;
    }
    println!("{}", result.summary_line());
    Ok(())
}

fn significance(cfg: &Config, a: SignificanceArgs) -> CliResult<()> {
    let cutoff = cfg.pick(a.cutoff, "cutoff", DEFAULT_CUTOFF as u64)? as usize;
    let run_a = load_run(&a.run_a)?;
    let run_b = load_run(&a.run_b)?;
    let queries = load_queries(&a.queries)?;
    let passages = passages_for_runs(&a.passages, &[&run_a, &run_b], cutoff)?;
    let ra = evaluate(&run_a, &queries, &passages, cutoff)?;
    let rb = evaluate(&run_b, &queries, &passages, cutoff)?;
    let mrr = paired_t_test(&ra.mrr_values(), &rb.mrr_values())?;
    let prec = paired_t_test(&ra.precision_values(), &rb.precision_values())?;
    println!("MRR@{cutoff} t={:.4} p={:.4e}", mrr.t, mrr.p);
    println!("P@{cutoff} t={:.4} p={:.4e}", prec.t, prec.p);
    Ok(())
}

fn synth(cfg: &Config, a: SynthGenArgs) -> CliResult<()> {
    let seed = cfg.pick(a.seed, "seed", 0)?;
    let np = cfg.pick(a.num_passages, "num-passages", 2000)?;
    let nq = cfg.pick(a.num_queries, "num-queries", 1000)?;
    let data = synth_gen(seed, np, nq)?;
    data.write(&a.out)?;
    Ok(())
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
