//! Command-line front end: training runs with on-disk histories and
//! checkpoints, checkpoint evaluation, context inspection, a gradient
//! self-check, and synthetic dataset generation.
//!
//! Exit codes: 0 on success, 1 for configuration problems, 2 for data
//! problems, 3 when training diverges.

mod fixture;
mod runs;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use hinormer_core::sampler::PAD;
use hinormer_core::{
    build_batch, default_self_loops, encode_relations, encode_structure, evaluate, grad_check,
    load_checkpoint, load_graph, project_features, sample_all, sample_context, save_checkpoint,
    stack_forward_with_attention, synthesize, train, write_dataset, AttentionMap,
    AttentionMechanism, BatchTargets, Checkpoint, CheckpointError, ContextSequence, Dataset,
    DatasetPaths, EncoderError, EpochRecord, GraphError, GraphOperators, HeteroGraph, LayerError,
    Metrics, ModelConfig, ModelError, ModelParams, StructureKind, SynthConfig, SynthError,
    Tensor, TrainConfig, TrainError, Var,
};
use runs::RunManifest;

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Debug)]
enum CliError {
    Config(String),
    Data(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Diverged(m) => m,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::ZeroValue { .. }
            | TrainError::BadLearningRate { .. }
            | TrainError::BadDropout { .. }
            | TrainError::PatienceBudget { .. }
            | TrainError::UnknownKey { .. }
            | TrainError::BadValue { .. }
            | TrainError::LabelMode { .. } => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Graph(g) => CliError::Data(g.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LayerError> for CliError {
    fn from(e: LayerError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_data(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(
    name = "hinormer",
    version,
    about = "Train, evaluate, and inspect graph-transformer models on heterogeneous graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes history, metrics, and a checkpoint per run.
    Train(TrainArgs),
    /// Score a checkpoint, or freshly initialized models, on one split.
    Eval(EvalArgs),
    /// Print the sampled context sequence for one node.
    Sample(SampleArgs),
    /// Check tape gradients against finite differences on a small fixture.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic benchmark dataset.
    Synth(SynthArgs),
}

/// Hyperparameter flags shared by the model-running commands. Values
/// resolve as flag over config file over built-in default; everything else
/// (learning rate, epochs, dropout, ...) is set through the config file.
#[derive(Args)]
struct ConfigFlags {
    /// key=value config file applied over the defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Attention mechanism: gatv2, gat, or dot.
    #[arg(long, value_name = "NAME")]
    mechanism: Option<String>,
    /// Disable the local structure encoder.
    #[arg(long)]
    no_lse: bool,
    /// Disable the heterogeneous relation encoder.
    #[arg(long)]
    no_hre: bool,
    /// Relational bias strength.
    #[arg(long)]
    beta: Option<f64>,
    /// Transformer layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width.
    #[arg(long)]
    dim: Option<usize>,
    /// Attention heads per layer.
    #[arg(long)]
    heads: Option<usize>,
    /// Context sequence length.
    #[arg(long)]
    seq_len: Option<usize>,
    /// Context sampling depth.
    #[arg(long)]
    hops: Option<usize>,
    /// Structure encoder aggregation steps.
    #[arg(long)]
    ks: Option<usize>,
    /// Relation encoder aggregation steps.
    #[arg(long)]
    kh: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ConfigFlags,
    /// Dataset directory holding manifest.txt, nodes.tsv, edges.tsv,
    /// labels.tsv, and split.tsv.
    #[arg(long, value_name = "DIR")]
    dataset_dir: PathBuf,
    /// Parent for per-run output directories; defaults to $HINORMER_OUT_DIR
    /// or ./runs.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Train this many consecutive seeds and aggregate their metrics.
    #[arg(long, value_name = "N")]
    seeds: Option<usize>,
    /// Write per-layer attention weights for one test node.
    #[arg(long)]
    dump_attention: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ConfigFlags,
    /// Checkpoint to score; without it a fresh model is initialized from
    /// the resolved config and seed.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    dataset_dir: PathBuf,
    /// Split to score: train, val, or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Score this many consecutive seeds (fresh models only).
    #[arg(long, value_name = "N")]
    seeds: Option<usize>,
    /// Write per-layer attention weights for the first scored node.
    #[arg(long)]
    dump_attention: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ConfigFlags,
    #[arg(long, value_name = "DIR")]
    dataset_dir: PathBuf,
    /// Node to sample, by its id in nodes.tsv.
    #[arg(long, allow_hyphen_values = true)]
    node: i64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    model: ConfigFlags,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    nodes: usize,
    #[arg(long, default_value_t = 3)]
    types: usize,
    /// Random extra edges per node beyond the spanning attachment.
    #[arg(long, default_value_t = 4)]
    extra_edges: usize,
    /// Probability that a new edge stays within the node's preferred type.
    #[arg(long, default_value_t = 0.8)]
    homophily: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    // Rust ignores SIGPIPE by default, turning `hinormer sample ... | head`
    // into a panic on the closed pipe. Restore the conventional behavior.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let informational = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            e.print().expect("usage output");
            return if informational {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CONFIG)
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Apply the config file and then the individual flags on top of `base`.
fn resolve_config(flags: &ConfigFlags, base: TrainConfig) -> Result<TrainConfig, CliError> {
    let mut cfg = base;
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        cfg.apply_kv_text(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(name) = &flags.mechanism {
        cfg.mechanism = AttentionMechanism::parse(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown mechanism '{name}'; expected gatv2, gat, or dot"
            ))
        })?;
    }
    if flags.no_lse {
        cfg.no_lse = true;
    }
    if flags.no_hre {
        cfg.no_hre = true;
    }
    if let Some(v) = flags.beta {
        cfg.beta = v;
    }
    if let Some(v) = flags.layers {
        cfg.num_layers = v;
    }
    if let Some(v) = flags.dim {
        cfg.d = v;
    }
    if let Some(v) = flags.heads {
        cfg.n_h = v;
    }
    if let Some(v) = flags.seq_len {
        cfg.seq_len = v;
    }
    if let Some(v) = flags.hops {
        cfg.depth = v;
    }
    if let Some(v) = flags.ks {
        cfg.k_s = v;
    }
    if let Some(v) = flags.kh {
        cfg.k_h = v;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    load_graph(&DatasetPaths::in_dir(dir)).map_err(CliError::from)
}

fn resolve_out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("HINORMER_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn check_label_mode(cfg: &TrainConfig, data: &Dataset) -> Result<(), CliError> {
    if cfg.multilabel != data.manifest.multilabel {
        return Err(CliError::Config(format!(
            "config says multilabel={} but the dataset manifest says {}",
            cfg.multilabel, data.manifest.multilabel
        )));
    }
    Ok(())
}

fn metrics_line(split: &str, m: &Metrics) -> String {
    format!(
        "{split}: loss={} micro_f1={} macro_f1={}",
        m.loss, m.micro_f1, m.macro_f1
    )
}

fn print_split_aggregate(split: &str, ms: &[Metrics]) {
    let (micro_m, micro_s) = runs::mean_std(ms.iter().map(|m| m.micro_f1));
    let (macro_m, macro_s) = runs::mean_std(ms.iter().map(|m| m.macro_f1));
    let (loss_m, loss_s) = runs::mean_std(ms.iter().map(|m| m.loss));
    println!(
        "{split} over {} seeds: micro_f1 {micro_m:.4} ± {micro_s:.4}, \
         macro_f1 {macro_m:.4} ± {macro_s:.4}, loss {loss_m:.4} ± {loss_s:.4}",
        ms.len()
    );
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.model, TrainConfig::default())?;
    let seeds = args.seeds.unwrap_or(1);
    if seeds == 0 {
        return Err(CliError::Config("--seeds must be positive".to_string()));
    }
    let data = load_dataset(&args.dataset_dir)?;
    let dataset_sha256 = runs::dataset_sha256(&args.dataset_dir)
        .map_err(|e| io_data(&args.dataset_dir, e))?;

    let out_dir = resolve_out_dir(&args.out_dir);
    let started = Utc::now();
    let run_dir = runs::create_run_dir(&out_dir, &runs::run_name("train", started, cfg.seed, seeds))
        .map_err(|e| io_data(&out_dir, e))?;
    fs::write(run_dir.join("config.txt"), cfg.to_kv()).map_err(|e| io_data(&run_dir, e))?;

    let outcome = train_seeds(&args, &cfg, seeds, &data, &run_dir);
    let manifest = RunManifest {
        command: runs::command_line(),
        version: env!("CARGO_PKG_VERSION"),
        config: args.model.config.as_deref(),
        dataset_dir: Some(&args.dataset_dir),
        dataset_sha256: &dataset_sha256,
        seed: cfg.seed,
        seeds,
        started,
        finished: Utc::now(),
        status: match &outcome {
            Ok(_) => "ok",
            Err(CliError::Diverged(_)) => "diverged",
            Err(_) => "failed",
        },
    };
    runs::write_manifest(&run_dir, &manifest).map_err(|e| io_data(&run_dir, e))?;
    let summaries = outcome?;

    println!("run dir: {}", run_dir.display());
    if let [only] = summaries.as_slice() {
        println!("best epoch {} of {}", only.best_epoch, only.epochs_run);
        println!("{}", metrics_line("val", &only.val));
        println!("{}", metrics_line("test", &only.test));
    } else {
        for s in &summaries {
            println!("seed {}: {}", s.seed, metrics_line("test", &s.test));
        }
        runs::write_aggregate(&run_dir, &summaries).map_err(|e| io_data(&run_dir, e))?;
        let vals: Vec<Metrics> = summaries.iter().map(|s| s.val).collect();
        let tests: Vec<Metrics> = summaries.iter().map(|s| s.test).collect();
        print_split_aggregate("val", &vals);
        print_split_aggregate("test", &tests);
    }
    Ok(())
}

fn train_seeds(
    args: &TrainArgs,
    cfg: &TrainConfig,
    seeds: usize,
    data: &Dataset,
    run_dir: &Path,
) -> Result<Vec<runs::SeedSummary>, CliError> {
    let mut summaries = Vec::with_capacity(seeds);
    for k in 0..seeds {
        let mut cfg_k = cfg.clone();
        cfg_k.seed = cfg.seed + k as u64;
        let seed_dir = if seeds == 1 {
            run_dir.to_path_buf()
        } else {
            let dir = run_dir.join(format!("seed{}", cfg_k.seed));
            fs::create_dir(&dir).map_err(|e| io_data(&dir, e))?;
            dir
        };
        summaries.push(train_one(data, &cfg_k, &seed_dir, args.dump_attention)?);
    }
    Ok(summaries)
}

fn train_one(
    data: &Dataset,
    cfg: &TrainConfig,
    dir: &Path,
    dump_attention: bool,
) -> Result<runs::SeedSummary, CliError> {
    let seed = cfg.seed;
    let mut progress = |r: &EpochRecord| {
        log::info!(
            "seed {seed} epoch {}: train loss {:.6}, val loss {:.6}, val micro-F1 {:.4}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_micro
        );
    };
    let outcome = train(data, cfg, Some(&mut progress))?;
    runs::write_history(dir, &outcome.history).map_err(|e| io_data(dir, e))?;

    let test = evaluate(data, &outcome.params, cfg, "test")?;
    runs::write_metrics(dir, &[("val", outcome.val), ("test", test)])
        .map_err(|e| io_data(dir, e))?;

    let ck = Checkpoint::from_state(
        cfg.to_kv(),
        &outcome.params.param_set(),
        &outcome.adam,
        outcome.epochs_run as u64,
        outcome.best_epoch as u64,
        outcome.val.micro_f1,
        data.graph.structure_checksum(),
    );
    save_checkpoint(&dir.join("checkpoint.bin"), &ck)?;

    if dump_attention {
        let node = dump_node(data)?;
        write_attention(&dir.join("attention.txt"), data, &outcome.params, cfg, node)?;
    }

    Ok(runs::SeedSummary {
        seed: cfg.seed,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.epochs_run,
        val: outcome.val,
        test,
    })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let split = args.split.as_str();
    if !matches!(split, "train" | "val" | "test") {
        return Err(CliError::Config(format!(
            "unknown split '{split}'; expected train, val, or test"
        )));
    }
    let seeds = args.seeds.unwrap_or(1);
    if seeds == 0 {
        return Err(CliError::Config("--seeds must be positive".to_string()));
    }
    let data = load_dataset(&args.dataset_dir)?;
    let dataset_sha256 = runs::dataset_sha256(&args.dataset_dir)
        .map_err(|e| io_data(&args.dataset_dir, e))?;
    let started = Utc::now();

    let mut rows: Vec<(u64, Metrics)> = Vec::new();
    let mut dump: Option<(TrainConfig, ModelParams<Tensor>)> = None;
    let base_seed;
    if let Some(ck_path) = &args.checkpoint {
        if seeds > 1 {
            return Err(CliError::Config(
                "--seeds needs freshly initialized models; drop it when scoring a checkpoint"
                    .to_string(),
            ));
        }
        let ck = load_checkpoint(ck_path)?;
        if ck.dataset_checksum != data.graph.structure_checksum() {
            return Err(CliError::Data(format!(
                "checkpoint {}: graph structure checksum does not match the dataset",
                ck_path.display()
            )));
        }
        let mut base = TrainConfig::default();
        base.apply_kv_text(&ck.config_kv)
            .map_err(|e| CliError::Data(format!("checkpoint {}: {e}", ck_path.display())))?;
        let cfg = resolve_config(&args.model, base)?;
        check_label_mode(&cfg, &data)?;
        base_seed = cfg.seed;
        let params = params_from_checkpoint(&data, &cfg, &ck, ck_path)?;
        rows.push((cfg.seed, evaluate(&data, &params, &cfg, split)?));
        dump = Some((cfg, params));
    } else {
        let cfg = resolve_config(&args.model, TrainConfig::default())?;
        check_label_mode(&cfg, &data)?;
        base_seed = cfg.seed;
        for k in 0..seeds {
            let mut cfg_k = cfg.clone();
            cfg_k.seed = cfg.seed + k as u64;
            let model_cfg = cfg_k.model(&data.manifest);
            let params = ModelParams::init(cfg_k.seed, &data.graph, &model_cfg)
                .map_err(|e| CliError::Config(e.to_string()))?;
            rows.push((cfg_k.seed, evaluate(&data, &params, &cfg_k, split)?));
            if k == 0 && args.dump_attention {
                dump = Some((cfg_k, params));
            }
        }
    }

    for (seed, m) in &rows {
        if seeds > 1 {
            println!("seed {seed}: {}", metrics_line(split, m));
        } else {
            println!("{}", metrics_line(split, m));
        }
    }
    if seeds > 1 {
        let ms: Vec<Metrics> = rows.iter().map(|(_, m)| *m).collect();
        print_split_aggregate(split, &ms);
    }

    let out_dir = resolve_out_dir(&args.out_dir);
    let run_dir = runs::create_run_dir(
        &out_dir,
        &runs::run_name("eval", started, base_seed, seeds),
    )
    .map_err(|e| io_data(&out_dir, e))?;
    runs::write_eval_metrics(&run_dir, split, &rows).map_err(|e| io_data(&run_dir, e))?;
    if args.dump_attention {
        let (cfg, params) = dump.as_ref().expect("first seed was scored");
        let node = first_node(&data, split)?;
        write_attention(&run_dir.join("attention.txt"), &data, params, cfg, node)?;
    }
    let manifest = RunManifest {
        command: runs::command_line(),
        version: env!("CARGO_PKG_VERSION"),
        config: args.model.config.as_deref(),
        dataset_dir: Some(&args.dataset_dir),
        dataset_sha256: &dataset_sha256,
        seed: base_seed,
        seeds,
        started,
        finished: Utc::now(),
        status: "ok",
    };
    runs::write_manifest(&run_dir, &manifest).map_err(|e| io_data(&run_dir, e))?;
    println!("run dir: {}", run_dir.display());
    Ok(())
}

fn params_from_checkpoint(
    data: &Dataset,
    cfg: &TrainConfig,
    ck: &Checkpoint,
    path: &Path,
) -> Result<ModelParams<Tensor>, CliError> {
    let model_cfg = cfg.model(&data.manifest);
    let template = ModelParams::init(cfg.seed, &data.graph, &model_cfg)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut ps = template.param_set();
    if ps.len() != ck.params.len() {
        return Err(CliError::Data(format!(
            "checkpoint {}: holds {} parameters but the model expects {}",
            path.display(),
            ck.params.len(),
            ps.len()
        )));
    }
    for i in 0..ps.len() {
        let name = ps.get(i).name.clone();
        let Some((_, stored)) = ck.params.iter().find(|(n, _)| n == &name) else {
            return Err(CliError::Data(format!(
                "checkpoint {}: missing parameter '{name}'",
                path.display()
            )));
        };
        if stored.shape() != ps.get(i).value.shape() {
            return Err(CliError::Data(format!(
                "checkpoint {}: parameter '{name}' has shape {:?} but the model expects {:?}",
                path.display(),
                stored.shape(),
                ps.get(i).value.shape()
            )));
        }
        ps.get_mut(i).value = stored.clone();
    }
    Ok(template.with_values_from(&ps))
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn cmd_sample(args: SampleArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.model, TrainConfig::default())?;
    let data = load_dataset(&args.dataset_dir)?;
    let dense = data
        .original_ids
        .binary_search(&args.node)
        .map_err(|_| CliError::Data(format!("node id {} is not in the dataset", args.node)))?;
    let seq = sample_context(&data.graph, dense, &cfg.sampler())?;
    println!(
        "node {} (dense index {}): {} of {} positions valid, depth {}, policy {}, seed {}",
        args.node,
        dense,
        seq.valid_len(),
        seq.nodes.len(),
        cfg.depth,
        cfg.sample_policy.as_str(),
        cfg.seed
    );
    println!("pos\tnode\thop\tvalid");
    for (i, &v) in seq.nodes.iter().enumerate() {
        if seq.mask[i] {
            println!("{i}\t{}\t{}\tyes", data.original_ids[v], seq.hop[i]);
        } else {
            println!("{i}\t-\t-\tno");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// Small enough defaults that probing every parameter entry stays fast;
/// flags and config files can still override any of them.
fn gradcheck_base() -> TrainConfig {
    TrainConfig {
        d: 8,
        num_layers: 2,
        n_h: 2,
        seq_len: 6,
        depth: 2,
        k_s: 2,
        k_h: 2,
        beta: 0.5,
        seed: 42,
        structure_kind: StructureKind::Gcn,
        ..TrainConfig::default()
    }
}

fn bind_template(template: &ModelParams<Tensor>, vars: &[Var]) -> ModelParams<Var> {
    let mut i = 0;
    let bound = template.map(&mut |_| {
        let v = vars[i];
        i += 1;
        v
    });
    debug_assert_eq!(i, vars.len());
    bound
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.model, gradcheck_base())?;
    let g = fixture::graph();
    let model_cfg = fixture::model_config(&cfg);
    let template = ModelParams::init(cfg.seed, &g, &model_cfg)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut params = template.param_set();
    let graph_ops = GraphOperators::new(&g, &model_cfg);
    let seqs = sample_all(&g, fixture::TARGETS, &cfg.sampler())?;
    let refs: Vec<&ContextSequence> = seqs.iter().collect();
    let targets = BatchTargets::Classes(fixture::LABELS.to_vec());

    let report = grad_check(
        |tape, vars| -> Result<Var, ModelError> {
            let bound = bind_template(&template, vars);
            let built = build_batch(
                tape,
                &g,
                &graph_ops,
                &bound,
                &model_cfg,
                &refs,
                &targets,
                1.0 / refs.len() as f64,
                None,
            )?;
            Ok(built.loss)
        },
        &mut params,
        1e-5,
        1e-4,
        1e-7,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;

    println!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Config(
            "tape gradients disagree with finite differences".to_string(),
        ))
    }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        num_nodes: args.nodes,
        num_node_types: args.types,
        extra_edges_per_node: args.extra_edges,
        homophily: args.homophily,
        seed: args.seed,
    };
    let data = synthesize(&cfg)?;
    let out_dir = resolve_out_dir(&args.out_dir);
    let started = Utc::now();
    let dir = runs::create_run_dir(&out_dir, &runs::run_name("synth", started, args.seed, 1))
        .map_err(|e| io_data(&out_dir, e))?;
    write_dataset(&data, &dir)?;
    let dataset_sha256 = runs::dataset_sha256(&dir).map_err(|e| io_data(&dir, e))?;
    let manifest = RunManifest {
        command: runs::command_line(),
        version: env!("CARGO_PKG_VERSION"),
        config: None,
        dataset_dir: Some(&dir),
        dataset_sha256: &dataset_sha256,
        seed: args.seed,
        seeds: 1,
        started,
        finished: Utc::now(),
        status: "ok",
    };
    runs::write_manifest(&dir, &manifest).map_err(|e| io_data(&dir, e))?;
    println!(
        "wrote {} nodes, {} edges, {} node types, {} classes to {}",
        data.graph.num_nodes,
        data.graph.num_edges,
        data.graph.num_node_types,
        data.manifest.num_classes,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// attention dump
// ---------------------------------------------------------------------------

fn dump_node(data: &Dataset) -> Result<usize, CliError> {
    for part in ["test", "val", "train"] {
        if let Some(&v) = data.split.part(part).and_then(|ids| ids.first()) {
            return Ok(v);
        }
    }
    Err(CliError::Data("dataset has no split entries".to_string()))
}

fn first_node(data: &Dataset, part: &str) -> Result<usize, CliError> {
    data.split
        .part(part)
        .and_then(|ids| ids.first().copied())
        .ok_or_else(|| CliError::Data(format!("split '{part}' is empty")))
}

fn gather_rows(m: &Tensor, nodes: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&v| {
            if v == PAD {
                vec![0.0; m.cols()]
            } else {
                m.row(v).to_vec()
            }
        })
        .collect();
    Tensor::from_rows(&rows)
}

/// Post-softmax attention for one context, computed from the trained
/// parameters with dropout off.
fn attention_maps(
    g: &HeteroGraph,
    params: &ModelParams<Tensor>,
    cfg: &ModelConfig,
    seq: &ContextSequence,
) -> Result<Vec<AttentionMap>, CliError> {
    let mut h = project_features(g, &params.projection, cfg.d)?;
    if let Some(sp) = &params.structure {
        if sp.k_s > 0 {
            h = encode_structure(&h, g, sp, default_self_loops(cfg.structure_kind))?;
        }
    }
    let relations = match &params.relation {
        Some(rp) => Some(encode_relations(g, rp, cfg.relation_norm)?),
        None => None,
    };
    let h_seq = gather_rows(&h, &seq.nodes);
    let r_seq = match &relations {
        Some(r) => gather_rows(r, &seq.nodes),
        None => Tensor::zeros(&[seq.nodes.len(), g.num_node_types]),
    };
    let (_, maps) =
        stack_forward_with_attention(&h_seq, &r_seq, &seq.mask, &cfg.attention(), &params.stack)?;
    Ok(maps)
}

fn write_attention(
    path: &Path,
    data: &Dataset,
    params: &ModelParams<Tensor>,
    cfg: &TrainConfig,
    node: usize,
) -> Result<(), CliError> {
    let model_cfg = cfg.model(&data.manifest);
    let seq = sample_context(&data.graph, node, &cfg.sampler())?;
    let maps = attention_maps(&data.graph, params, &model_cfg, &seq)?;
    let mut out = format!(
        "target node {} (dense index {}), {} of {} positions valid\n",
        data.original_ids[node],
        node,
        seq.valid_len(),
        seq.nodes.len()
    );
    for (l, map) in maps.iter().enumerate() {
        for (head, w) in map.weights.iter().enumerate() {
            out.push_str(&format!("layer {l} head {head}\n"));
            for i in 0..w.rows() {
                let row: Vec<String> = w.row(i).iter().map(|v| format!("{v:.6}")).collect();
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        }
    }
    fs::write(path, out).map_err(|e| io_data(path, e))
}
