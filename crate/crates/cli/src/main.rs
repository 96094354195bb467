//! Command-line surface of the MBLFE engine.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mblfe_core::config::RunConfig;
use mblfe_core::dataset::{
    apply_held_out, leave_one_out_split, load_interactions, read_split, sample_from_set,
    write_split, Dataset,
};
use mblfe_core::eval::{
    evaluate, export_factors, selection_stats, write_gate_dump, write_epoch_line,
    write_metrics_json, write_rank_file, write_selection_histogram, EvalModel,
};
use mblfe_core::numerics::grad_check;
use mblfe_core::recommender::model::{build_step_graph, step_entities, StepBatches};
use mblfe_core::recommender::params::{expected_shapes, initialize_store, normal_matrix};
use mblfe_core::recommender::{load_snapshot, ModelSnapshot, Trainer};

#[derive(Parser)]
#[command(name = "mblfe", version, about = "Multi-behavior recommender with latent factor experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate an interaction log, then persist the leave-one-out split.
    Ingest(CommonArgs),
    /// Train a model; writes the split, per-epoch loss log, and checkpoint.
    Train(TrainArgs),
    /// Rank every held-out item under full ranking and report HR/NDCG.
    Evaluate(EvaluateArgs),
    /// Report the expert-selection histogram and per-user gate decisions.
    Stats(SnapshotArgs),
    /// Export sampled user latent factors (all experts, pre-gating).
    ExportFactors(ExportArgs),
    /// Verify analytic gradients of the full objective against finite differences.
    GradCheck(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint destination (default: `<output_dir>/model.ckpt`).
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Args)]
struct SnapshotArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to load (default: `<output_dir>/model.ckpt`).
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    snapshot: SnapshotArgs,
    /// Ranking cutoffs, e.g. `--cutoffs 10,20` (default: from the config).
    #[arg(long, value_delimiter = ',')]
    cutoffs: Option<Vec<usize>>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    snapshot: SnapshotArgs,
    /// Number of users to sample.
    #[arg(long, default_value_t = 500)]
    sample: usize,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Stats(args) => stats(args),
        Command::ExportFactors(args) => run_export(args),
        Command::GradCheck(args) => run_grad_check(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

/// Loads the config, applies a seed override, and prints the resolved values.
fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut config = RunConfig::from_file(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.training.seed = seed;
    }
    println!("# resolved configuration");
    println!("{config}");
    println!("# seed = {}", config.training.seed);
    Ok(config)
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let dataset = load_interactions(&config.interactions, &config.behaviors, &config.target)
        .with_context(|| format!("loading {}", config.interactions.display()))?;
    println!(
        "dataset: {} users, {} items, target behavior `{}`",
        dataset.num_users, dataset.num_items, config.target
    );
    for behavior in &dataset.behaviors {
        println!(
            "  {}: {} interactions",
            dataset.behavior_names[behavior.behavior_id],
            behavior.len()
        );
    }
    Ok(dataset)
}

/// Train split plus held-out pairs: reuses the persisted split when present,
/// otherwise samples one from the given seed and persists it.
fn obtain_split(
    config: &RunConfig,
    dataset: &Dataset,
    split_seed: u64,
) -> Result<(Dataset, Vec<(usize, usize)>)> {
    let path = config.split_path();
    if path.exists() {
        let test = read_split(&path)?;
        let train = apply_held_out(dataset, &test)
            .with_context(|| format!("applying split {}", path.display()))?;
        println!("split: reusing {} ({} held-out pairs)", path.display(), test.len());
        Ok((train, test))
    } else {
        let (train, test) = leave_one_out_split(dataset, split_seed);
        std::fs::create_dir_all(&config.output_dir)?;
        write_split(&path, &test)?;
        println!("split: sampled {} held-out pairs -> {}", test.len(), path.display());
        Ok((train, test))
    }
}

fn ingest(args: CommonArgs) -> Result<ExitCode> {
    let config = load_config(&args)?;
    let dataset = load_dataset(&config)?;
    let (_, test) = obtain_split(&config, &dataset, config.training.seed)?;
    println!("ingest complete: {} test users", test.len());
    Ok(ExitCode::SUCCESS)
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let config = load_config(&args.common)?;
    let dataset = load_dataset(&config)?;
    let (train, _) = obtain_split(&config, &dataset, config.training.seed)?;
    std::fs::create_dir_all(&config.output_dir)?;

    let trainer = Trainer::<f32>::new(&train, &config.training)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.training.seed);
    let mut store =
        initialize_store::<f32, _>(&config.training, train.num_users, train.num_items, &mut rng);

    let epoch_log_path = config.epoch_log_path();
    let mut epoch_log = BufWriter::new(File::create(&epoch_log_path)?);
    let run = trainer.fit(&mut store, |epoch, metrics| {
        write_epoch_line(&mut epoch_log, epoch, metrics).expect("epoch log write");
        println!(
            "epoch {epoch}: enh {:.4} net {:.4} rec {:.4} total {:.4}",
            metrics.enhancement, metrics.net, metrics.rec, metrics.total
        );
    })?;
    epoch_log.flush()?;

    let snapshot_path = args.snapshot.unwrap_or_else(|| config.snapshot_path());
    let epochs_done = run.metrics.len();
    ModelSnapshot::new(store, config.training.clone(), epochs_done, config.training.seed)
        .save(&snapshot_path)?;
    println!("checkpoint -> {}", snapshot_path.display());
    println!("epoch log  -> {}", epoch_log_path.display());

    if let Some(epoch) = run.aborted_at {
        eprintln!(
            "training aborted at epoch {epoch} on a non-finite loss; checkpoint holds the last good state"
        );
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

type LoadedModel = (EvalModel<f32>, Dataset, Vec<(usize, usize)>);

fn load_model(args: &SnapshotArgs, config: &RunConfig) -> Result<LoadedModel> {
    let dataset = load_dataset(config)?;
    let path = args.snapshot.clone().unwrap_or_else(|| config.snapshot_path());
    let snapshot = load_snapshot::<f32>(&path)
        .with_context(|| format!("loading snapshot {}", path.display()))?;
    println!(
        "snapshot: {} (epoch {}, split seed {})",
        path.display(),
        snapshot.epoch,
        snapshot.split_seed
    );
    let (train, test) = obtain_split(config, &dataset, snapshot.split_seed)?;
    let model = EvalModel::new(snapshot, &train)?;
    Ok((model, train, test))
}

fn run_evaluate(args: EvaluateArgs) -> Result<ExitCode> {
    let config = load_config(&args.snapshot.common)?;
    let (model, train, test) = load_model(&args.snapshot, &config)?;
    let cutoffs = args
        .cutoffs
        .unwrap_or_else(|| model.snapshot().config.eval_cutoffs.clone());
    let result = evaluate(&model, &train.target().interactions, &test, &cutoffs)?;

    std::fs::create_dir_all(&config.output_dir)?;
    let metrics_path = config.metrics_path();
    let mut metrics_file = BufWriter::new(File::create(&metrics_path)?);
    write_metrics_json(&mut metrics_file, &result)?;
    metrics_file.flush()?;
    let ranks_path = config.ranks_path();
    let mut ranks_file = BufWriter::new(File::create(&ranks_path)?);
    write_rank_file(&mut ranks_file, &result)?;
    ranks_file.flush()?;

    let mut stdout = std::io::stdout().lock();
    write_metrics_json(&mut stdout, &result)?;
    drop(stdout);
    println!("metrics -> {}", metrics_path.display());
    println!("ranks   -> {}", ranks_path.display());
    Ok(ExitCode::SUCCESS)
}

fn stats(args: SnapshotArgs) -> Result<ExitCode> {
    let config = load_config(&args.common)?;
    let (model, _, _) = load_model(&args, &config)?;
    let stats = selection_stats(&model);

    std::fs::create_dir_all(&config.output_dir)?;
    let histogram_path = config.histogram_path();
    let mut histogram_file = BufWriter::new(File::create(&histogram_path)?);
    write_selection_histogram(&mut histogram_file, &stats)?;
    histogram_file.flush()?;
    let gates_path = config.gates_path();
    let mut gates_file = BufWriter::new(File::create(&gates_path)?);
    write_gate_dump(&mut gates_file, &model)?;
    gates_file.flush()?;

    let mut stdout = std::io::stdout().lock();
    write_selection_histogram(&mut stdout, &stats)?;
    drop(stdout);
    println!("selection mode: {} experts", stats.mode());
    println!("histogram -> {}", histogram_path.display());
    println!("gate dump -> {}", gates_path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_export(args: ExportArgs) -> Result<ExitCode> {
    let config = load_config(&args.snapshot.common)?;
    let (model, _, _) = load_model(&args.snapshot, &config)?;
    let sample_seed = args.snapshot.common.seed.unwrap_or(config.training.seed);

    std::fs::create_dir_all(&config.output_dir)?;
    let factors_path = config.factors_path();
    let mut file = BufWriter::new(File::create(&factors_path)?);
    let rows = export_factors(&model, args.sample, sample_seed, &mut file)?;
    file.flush()?;
    println!(
        "exported {rows} factor rows ({} users x {} experts) -> {}",
        rows / model.num_experts(),
        model.num_experts(),
        factors_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

fn run_grad_check(args: CommonArgs) -> Result<ExitCode> {
    let config = load_config(&args)?;
    let dataset = load_dataset(&config)?;
    let training = &config.training;

    let adjacencies: Vec<_> = dataset
        .behaviors
        .iter()
        .map(mblfe_core::propagation::build_adjacency)
        .collect();
    let weights = mblfe_core::propagation::behavior_weights::<f64>(&dataset);
    // Healthy-scale parameters keep gradients well above the finite-difference
    // noise floor and gate probabilities away from the selection threshold.
    let mut store = mblfe_core::numerics::ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(training.seed);
    for (name, rows, cols) in expected_shapes(training, dataset.num_users, dataset.num_items) {
        store.insert(name, normal_matrix::<f64, _>(rows, cols, 0.25, &mut rng));
    }

    let per_source = 8usize;
    let behavior_triples: Vec<Vec<_>> = dataset
        .behaviors
        .iter()
        .map(|b| sample_from_set(&b.interactions, per_source, &mut rng))
        .collect();
    let merged_set = dataset.merged_interactions();
    let mut merged = mblfe_core::dataset::sample_merged(&merged_set, &mut rng);
    merged.truncate(2 * per_source);
    let rec_triples = sample_from_set(&dataset.target().interactions, per_source, &mut rng);
    let batches = StepBatches {
        behavior_triples: behavior_triples.iter().map(|t| t.as_slice()).collect(),
        merged: &merged,
        rec_triples: &rec_triples,
    };
    let (step_users, _) = step_entities(&batches);
    if step_users.is_empty() {
        bail!("dataset produced no training samples to check");
    }
    // Expert selection is piecewise constant, so the comparison is only
    // well-posed when every gate probability sits clear of the threshold.
    // Deterministically search the frozen noise draws for one with margin.
    let threshold = 1.0 / training.num_experts as f64;
    let mut noise = normal_matrix::<f64, _>(step_users.len(), training.num_experts, 1.0, &mut rng);
    let mut best_margin = f64::NEG_INFINITY;
    for _ in 0..50 {
        let candidate =
            normal_matrix::<f64, _>(step_users.len(), training.num_experts, 1.0, &mut rng);
        let probe = build_step_graph(&store, &adjacencies, &weights, &batches, Some(&candidate), training);
        let margin = probe
            .gate_decisions
            .iter()
            .flat_map(|d| d.probabilities.iter())
            .map(|&p| (p - threshold).abs())
            .fold(f64::INFINITY, f64::min);
        if margin > best_margin {
            best_margin = margin;
            noise = candidate;
        }
        if best_margin > 1e-3 {
            break;
        }
    }
    if best_margin <= 1e-3 {
        eprintln!(
            "warning: gate probabilities sit within {best_margin:.1e} of the selection threshold; \
             the finite-difference comparison may cross a selection boundary"
        );
    }

    let report = grad_check(&store, 1e-3, |s| {
        let graph = build_step_graph(s, &adjacencies, &weights, &batches, Some(&noise), training);
        (graph.tape, graph.total)
    })?;
    println!(
        "gradient check: max relative error {:.3e} at {}[{}] over {} coordinates",
        report.max_rel_error,
        report.worst_param,
        report.worst_coordinate,
        report.coordinates_checked
    );
    if report.max_rel_error < GRAD_CHECK_TOLERANCE {
        println!("gradient check: PASS (tolerance {GRAD_CHECK_TOLERANCE:.0e})");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check: FAIL (tolerance {GRAD_CHECK_TOLERANCE:.0e})");
        Ok(ExitCode::FAILURE)
    }
}
