//! Command-line surface: `gen`, `train`, `eval`, `jacobian`, `replay`.
//!
//! Every command writes a run manifest before producing any other output.
//! Exit codes: 0 success, 1 runtime or data failure, 2 usage error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{read_sequences, split_by_user, write_sequences, write_trials_csv, Organization, SelectionSequence};
use crate::error::Error;
use crate::eval::{
    block_curves, jacobian_recency_profile, jacobian_spot_check, menu_level_r2, sequence_level_r2, summary_line,
    target_level_r2, write_block_csv, write_level_csv, write_profile_csv, write_r2_summary_csv, write_sequence_csv,
    EvalReport,
};
use crate::features::{load_embeddings, synth_embeddings, EmbeddingSource, EmbeddingTable, FeatureContext};
use crate::model::{init_params, load_checkpoint, predict_times, save_checkpoint, MenuInputs, ModelDims, ModelParams};
use crate::oracle::{generate_corpus, mixed_designs, noiseless_times, OracleParams};
use crate::training::{train, write_log_csv, OptimizerKind, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "menunet", version, about = "Menu selection time prediction")]
pub struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus from the oracle user model.
    Gen(GenArgs),
    /// Split a corpus by user and train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Jacobian recency profile of a checkpoint.
    Jacobian(JacobianArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0.15)]
    pub a_f: f64,
    #[arg(long, default_value_t = 0.12)]
    pub b_f: f64,
    #[arg(long, default_value_t = 0.25)]
    pub c_u: f64,
    #[arg(long, default_value_t = 0.10)]
    pub a_h: f64,
    #[arg(long, default_value_t = 0.15)]
    pub b_h: f64,
    #[arg(long, default_value_t = 0.6)]
    pub sem_factor: f64,
    #[arg(long, default_value_t = 0.92)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0.2)]
    pub t_recall: f64,
    #[arg(long, default_value_t = 0.15)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub item_height: f64,
}

impl From<&OracleArgs> for OracleParams {
    fn from(a: &OracleArgs) -> Self {
        OracleParams {
            a_f: a.a_f,
            b_f: a.b_f,
            c_u: a.c_u,
            a_h: a.a_h,
            b_h: a.b_h,
            sem_factor: a.sem_factor,
            rho: a.rho,
            kappa: a.kappa,
            t_recall: a.t_recall,
            sigma: a.sigma,
            item_height: a.item_height,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10)]
    pub users: usize,
    /// Menu lengths; users are dealt round-robin over (n, org) pairs.
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub n: Vec<usize>,
    /// Organizations (U, A, S).
    #[arg(long, value_delimiter = ',', default_value = "U")]
    pub org: Vec<Organization>,
    #[arg(long, default_value_t = 12)]
    pub blocks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reject menu lengths other than 8, 12 and 16.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Corpus output (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional flat per-trial CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmbeddingArgs {
    /// Pretrained embedding table (`token v1 … v50` per line).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Seed of the synthetic embeddings used when no table is given.
    #[arg(long, default_value_t = 0)]
    pub embedding_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 40)]
    pub unroll: usize,
    #[arg(long, default_value_t = 0.10)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 20_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1_000)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub min_variance: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adagrad)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 16)]
    pub enc_cells: usize,
    #[arg(long, default_value_t = 32)]
    pub pred_cells: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden_dim: usize,
    /// Train on every sequence instead of splitting by user.
    #[arg(long)]
    pub no_split: bool,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            unroll: self.unroll,
            dropout: self.dropout,
            batch_size: self.batch_size,
            iterations: self.iterations,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            min_variance: self.min_variance,
            optimizer: match self.optimizer {
                OptimizerArg::Adagrad => OptimizerKind::Adagrad,
                OptimizerArg::Adam => OptimizerKind::Adam,
            },
        }
    }

    fn dims(&self) -> ModelDims {
        ModelDims {
            enc_cells: self.enc_cells,
            pred_cells: self.pred_cells,
            hidden_dim: self.hidden_dim,
            ..ModelDims::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Target,
    Menu,
    Sequence,
    All,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "use_noiseless")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Level::All)]
    pub level: Level,
    /// Score the oracle's noiseless times instead of a model.
    #[arg(long)]
    pub use_noiseless: bool,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct JacobianArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub max_lag: usize,
    /// Number of derivatives checked against finite differences.
    #[arg(long, default_value_t = 10)]
    pub spot_checks: usize,
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    /// Profile CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: serde_json::Map<String, serde_json::Value>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub version: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn sha256_file(path: &Path) -> crate::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn digest(path: &Path) -> crate::Result<InputDigest> {
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

fn write_manifest(path: &Path, m: &RunManifest) -> crate::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, m)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn seeds(pairs: &[(&str, u64)]) -> serde_json::Map<String, serde_json::Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), (*v).into())).collect()
}

fn create(path: &Path) -> crate::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn read_corpus(path: &Path) -> crate::Result<Vec<SelectionSequence>> {
    read_sequences(BufReader::new(File::open(path)?))
}

fn all_names(seqs: &[SelectionSequence]) -> Vec<&str> {
    seqs.iter().flat_map(|s| s.menu.items.iter().map(String::as_str)).collect()
}

/// Loads or synthesizes the embedding table and names its source.
fn embedding_table(args: &EmbeddingArgs, seqs: &[SelectionSequence]) -> crate::Result<(EmbeddingTable, EmbeddingSource)> {
    match &args.embeddings {
        Some(path) => {
            let table = load_embeddings(BufReader::new(File::open(path)?))?;
            Ok((table, EmbeddingSource::Table { sha256: sha256_file(path)? }))
        }
        None => Ok((
            synth_embeddings(&all_names(seqs), args.embedding_seed),
            EmbeddingSource::Synthetic { seed: args.embedding_seed },
        )),
    }
}

/// Rebuilds the feature context a checkpoint was trained with.
fn checkpoint_context(params: &ModelParams, args: &EmbeddingArgs, seqs: &[SelectionSequence]) -> crate::Result<FeatureContext> {
    let table = match (&params.embedding, &args.embeddings) {
        (EmbeddingSource::Synthetic { seed }, None) => synth_embeddings(&all_names(seqs), *seed),
        (EmbeddingSource::Table { sha256 }, Some(path)) => {
            let found = sha256_file(path)?;
            if &found != sha256 {
                return Err(Error::Checkpoint(format!(
                    "embedding table {} has sha256 {found}, checkpoint expects {sha256}",
                    path.display()
                )));
            }
            load_embeddings(BufReader::new(File::open(path)?))?
        }
        (EmbeddingSource::Table { sha256 }, None) => {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with an embedding table (sha256 {sha256}); pass --embeddings"
            )))
        }
        (EmbeddingSource::Synthetic { .. }, Some(_)) => {
            return Err(Error::Checkpoint("checkpoint uses synthetic embeddings; drop --embeddings".into()))
        }
    };
    Ok(params.feature_context(table))
}

fn load_model(path: &Path) -> crate::Result<ModelParams> {
    load_checkpoint(BufReader::new(File::open(path)?), None)
}

fn argv_strings(argv: &[OsString]) -> Vec<String> {
    argv.iter().map(|a| a.to_string_lossy().into_owned()).collect()
}

fn cmd_gen(args: &GenArgs, argv: Vec<String>) -> CliResult<()> {
    let p = OracleParams::from(&args.oracle);
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.users == 0 || args.blocks == 0 || args.n.is_empty() || args.org.is_empty() {
        return Err(CliError::Usage("--users, --blocks, --n and --org must be non-empty/positive".into()));
    }
    let pairs = args.n.len() * args.org.len();
    if args.users < pairs {
        log::warn!("{} users over {pairs} (n, org) designs leaves some designs empty", args.users);
    }
    for &n in &args.n {
        if n == 0 || n > crate::dataset::MAX_MENU_LEN {
            return Err(CliError::Usage(format!("--n {n} not in 1..=64")));
        }
        if !matches!(n, 8 | 12 | 16) {
            if args.strict {
                return Err(CliError::Usage(format!("--n {n} is not a standard length (8, 12, 16) under --strict")));
            }
            log::warn!("non-standard menu length {n}; generating with the generalized design");
        }
    }
    let mut outputs = vec![args.out.display().to_string()];
    if let Some(c) = &args.csv {
        outputs.push(c.display().to_string());
    }
    write_manifest(
        &sidecar(&args.out),
        &RunManifest {
            command: "gen".into(),
            argv,
            config: serde_json::to_value(args).map_err(Error::from)?,
            seeds: seeds(&[("seed", args.seed)]),
            inputs: vec![],
            outputs,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )?;
    let designs = mixed_designs(&args.n, &args.org, args.users, args.blocks, args.seed);
    let designs: Vec<_> = designs.into_iter().filter(|d| d.users > 0).collect();
    let seqs = generate_corpus(&designs, &p)?;
    let mut w = create(&args.out)?;
    write_sequences(&seqs, &mut w)?;
    w.flush()?;
    if let Some(c) = &args.csv {
        write_trials_csv(&seqs, create(c)?)?;
    }
    log::info!("wrote {} sequences to {}", seqs.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs, argv: Vec<String>) -> CliResult<()> {
    let config = args.config();
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let dims = args.dims();
    dims.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if !args.no_split && !(args.train_frac > 0.0 && args.train_frac < 1.0) {
        return Err(CliError::Usage(format!("--train-frac {} not in (0, 1)", args.train_frac)));
    }
    let out = &args.out;
    let files = ["model.ckpt", "train_log.csv", "train.jsonl", "test.jsonl"];
    let mut inputs = vec![digest(&args.data)?];
    if let Some(e) = &args.embedding.embeddings {
        inputs.push(digest(e)?);
    }
    write_manifest(
        &out.join("manifest.json"),
        &RunManifest {
            command: "train".into(),
            argv,
            config: serde_json::to_value(args).map_err(Error::from)?,
            seeds: seeds(&[
                ("seed", args.seed),
                ("split_seed", args.split_seed),
                ("embedding_seed", args.embedding.embedding_seed),
            ]),
            inputs,
            outputs: files.iter().map(|f| out.join(f).display().to_string()).collect(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )?;
    let seqs = read_corpus(&args.data)?;
    let (train_set, test_set) = if args.no_split {
        (seqs.clone(), Vec::new())
    } else {
        split_by_user(&seqs, args.train_frac, args.split_seed)?
    };
    for (name, part) in [("train.jsonl", &train_set), ("test.jsonl", &test_set)] {
        let mut w = create(&out.join(name))?;
        write_sequences(part, &mut w)?;
        w.flush()?;
    }
    let (table, source) = embedding_table(&args.embedding, &seqs)?;
    let ctx = FeatureContext::fit(table, train_set.iter().map(|s| &s.menu))?;
    let init = init_params(dims, args.seed, ctx.projection.clone(), source)?;
    let ckpt_path = out.join("model.ckpt");
    let save = |params: &ModelParams| -> crate::Result<()> {
        let mut w = create(&ckpt_path)?;
        save_checkpoint(params, &mut w)?;
        w.flush()?;
        Ok(())
    };
    let (params, log) = train(&train_set, &test_set, &config, init, &ctx, |_, p| save(p))?;
    save(&params)?;
    write_log_csv(&log, create(&out.join("train_log.csv"))?, true)?;
    log::info!(
        "trained {} iterations ({} clipped, {} degenerate sequences skipped)",
        log.updates,
        log.clipped,
        log.skipped_sequences
    );
    Ok(())
}

fn predictions(params: &ModelParams, seqs: &[SelectionSequence], ctx: &FeatureContext) -> crate::Result<Vec<Vec<f64>>> {
    seqs.iter()
        .map(|s| predict_times(params, &MenuInputs::new(&s.menu, ctx)?, &s.targets()))
        .collect()
}

fn cmd_eval(args: &EvalArgs, argv: Vec<String>) -> CliResult<()> {
    let dir = &args.out_dir;
    let mut files = Vec::new();
    if matches!(args.level, Level::Target | Level::All) {
        files.push("target_level.csv");
    }
    if matches!(args.level, Level::Menu | Level::All) {
        files.push("menu_level.csv");
    }
    if matches!(args.level, Level::Sequence | Level::All) {
        files.push("sequence_level.csv");
    }
    if args.level == Level::All {
        files.push("block_curves.csv");
    }
    files.extend(["r2_summary.csv", "summary.json"]);
    let mut inputs = vec![digest(&args.data)?];
    if let Some(m) = &args.model {
        inputs.push(digest(m)?);
    }
    if let Some(e) = &args.embedding.embeddings {
        inputs.push(digest(e)?);
    }
    write_manifest(
        &dir.join("manifest.json"),
        &RunManifest {
            command: "eval".into(),
            argv,
            config: serde_json::to_value(args).map_err(Error::from)?,
            seeds: seeds(&[("embedding_seed", args.embedding.embedding_seed)]),
            inputs,
            outputs: files.iter().map(|f| dir.join(f).display().to_string()).collect(),
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )?;
    let seqs = read_corpus(&args.data)?;
    let preds = if args.use_noiseless {
        seqs.iter().map(noiseless_times).collect::<crate::Result<Vec<_>>>()?
    } else {
        let params = load_model(args.model.as_ref().expect("required by clap"))?;
        let ctx = checkpoint_context(&params, &args.embedding, &seqs)?;
        predictions(&params, &seqs, &ctx)?
    };
    let lvl = |l: Level| args.level == l || args.level == Level::All;
    let report = EvalReport {
        sequence: lvl(Level::Sequence).then(|| sequence_level_r2(&seqs, &preds)).transpose()?,
        target: lvl(Level::Target).then(|| target_level_r2(&seqs, &preds)).transpose()?,
        menu: lvl(Level::Menu).then(|| menu_level_r2(&seqs, &preds)).transpose()?,
        blocks: (args.level == Level::All).then(|| block_curves(&seqs, &preds)).transpose()?,
        jacobian: None,
    };
    if let Some(t) = &report.target {
        write_level_csv(t, create(&dir.join("target_level.csv"))?)?;
    }
    if let Some(m) = &report.menu {
        write_level_csv(m, create(&dir.join("menu_level.csv"))?)?;
    }
    if let Some(s) = &report.sequence {
        write_sequence_csv(s, create(&dir.join("sequence_level.csv"))?)?;
    }
    if let Some(b) = &report.blocks {
        write_block_csv(b, create(&dir.join("block_curves.csv"))?)?;
    }
    write_r2_summary_csv(&report, create(&dir.join("r2_summary.csv"))?)?;
    let line = summary_line(&report);
    let mut w = create(&dir.join("summary.json"))?;
    writeln!(w, "{line}")?;
    w.flush()?;
    println!("{line}");
    Ok(())
}

fn cmd_jacobian(args: &JacobianArgs, argv: Vec<String>) -> CliResult<()> {
    if args.max_lag == 0 {
        return Err(CliError::Usage("--max-lag must be >= 1".into()));
    }
    let mut inputs = vec![digest(&args.model)?, digest(&args.data)?];
    if let Some(e) = &args.embedding.embeddings {
        inputs.push(digest(e)?);
    }
    write_manifest(
        &sidecar(&args.out),
        &RunManifest {
            command: "jacobian".into(),
            argv,
            config: serde_json::to_value(args).map_err(Error::from)?,
            seeds: seeds(&[("embedding_seed", args.embedding.embedding_seed)]),
            inputs,
            outputs: vec![args.out.display().to_string()],
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )?;
    let seqs = read_corpus(&args.data)?;
    let params = load_model(&args.model)?;
    let ctx = checkpoint_context(&params, &args.embedding, &seqs)?;
    let rows = jacobian_recency_profile(&params, &seqs, &ctx, args.max_lag)?;
    let checks = jacobian_spot_check(&params, &seqs, &ctx, args.max_lag, args.spot_checks, 1e-5)?;
    let worst = checks.iter().map(|c| c.rel_error()).fold(0.0, f64::max);
    log::info!("finite-difference spot check: {} derivatives, max relative error {worst:.2e}", checks.len());
    if worst > 1e-3 {
        log::warn!("jacobian spot check relative error {worst:.2e} exceeds 1e-3");
    }
    let mut w = create(&args.out)?;
    write_profile_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_replay(args: &ReplayArgs) -> CliResult<i32> {
    let text = fs::read_to_string(&args.manifest)?;
    let m: RunManifest = serde_json::from_str(&text).map_err(Error::from)?;
    if m.argv.is_empty() {
        return Err(CliError::Usage("manifest has an empty argv".into()));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        log::warn!("manifest was written by version {}, running {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    for input in &m.inputs {
        let found = sha256_file(Path::new(&input.path))?;
        if found != input.sha256 {
            return Err(CliError::Runtime(Error::Validation(format!(
                "input {} changed since the manifest was written",
                input.path
            ))));
        }
    }
    Ok(run(m.argv.iter().map(OsString::from)))
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    let strs = argv_strings(&argv);
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a, strs).map(|_| EXIT_OK),
        Command::Train(a) => cmd_train(a, strs).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(a, strs).map(|_| EXIT_OK),
        Command::Jacobian(a) => cmd_jacobian(a, strs).map(|_| EXIT_OK),
        Command::Replay(a) => cmd_replay(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
