use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bgn::experiment::{
    aggregate_table, build_network, format_table, read_run_records, run_id, sweep, train,
    write_run_records, BnBgnOrder, InitScheme, LrGrid, NetworkConfig, RunRecord, SweepPlan,
    TrainOptions,
};
use bgn::mnist::{load_mnist, Dataset};
use bgn::nn::{ActivationKind, KappaPolicy};
use bgn::telemetry::{
    snapshot_gradient_norms, weight_change, write_gradient_csv, write_weight_change_csv, Phase,
};

/// Train deep dense networks on MNIST with and without backward gradient
/// normalization.
#[derive(Debug, Parser)]
#[command(name = "bgn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network and report its test accuracy.
    Train(TrainArgs),
    /// Learning-rate grid search with repeated seeds.
    Sweep(SweepArgs),
    /// Per-layer gradient norms on a fixed batch, optionally before and after training.
    Gradients(GradientArgs),
    /// Mean ± std accuracy table from stored run records.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args)]
struct NetArgs {
    /// Number of hidden layers.
    #[arg(long, default_value_t = 30)]
    depth: usize,
    /// Units per hidden layer.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// relu, sigmoid, tanh or identity.
    #[arg(long, default_value = "relu")]
    activation: ActivationKind,
    /// Batch normalization after every hidden dense layer.
    #[arg(long)]
    bn: bool,
    /// A BGN node before every hidden activation.
    #[arg(long)]
    bgn: bool,
    /// Target gradient norm: "sqrt-d" or a positive number.
    #[arg(long, default_value = "sqrt-d")]
    kappa: KappaPolicy,
    /// bn-then-bgn or bgn-then-bn.
    #[arg(long, default_value = "bn-then-bgn")]
    bn_bgn_order: BnBgnOrder,
    /// glorot-uniform or he-uniform; defaults by activation.
    #[arg(long)]
    init: Option<InitScheme>,
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl NetArgs {
    /// Network for data with `features` inputs per example.
    fn config(&self, features: usize) -> NetworkConfig {
        NetworkConfig {
            depth: self.depth,
            width: self.width,
            activation: self.activation,
            use_bn: self.bn,
            use_bgn: self.bgn,
            kappa: self.kappa,
            order: self.bn_bgn_order,
            init: self.init,
            seed: self.seed,
            input_dim: features,
            ..NetworkConfig::default()
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory with the four MNIST IDX files (optionally gzipped).
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Use only the first N training examples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test examples.
    #[arg(long)]
    test_limit: Option<usize>,
}

impl DataArgs {
    fn load(&self) -> Result<(Dataset, Dataset)> {
        let (mut train, mut test) = load_mnist(&self.data_dir)
            .with_context(|| format!("loading MNIST from {}", self.data_dir.display()))?;
        if let Some(n) = self.train_limit {
            train = train.take(n)?;
        }
        if let Some(n) = self.test_limit {
            test = test.take(n)?;
        }
        log::info!("{} training and {} test examples", train.len(), test.len());
        Ok((train, test))
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Run-record CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-layer weight-change CSV.
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Log-spaced grid as lo:hi:count.
    #[arg(long, default_value = "1e-4:1e-2:19")]
    lr_grid: LrGrid,
    /// Seeds per learning rate, then extra seeds at the best one.
    #[arg(long, default_value = "5,10", value_parser = parse_repeats)]
    repeats: (usize, usize),
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Concurrent training runs.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Run-record CSV with every run of the sweep.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradientArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Size of the fixed snapshot batch; also the training batch size.
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Train this many epochs and snapshot again afterwards.
    #[arg(long, default_value_t = 0)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Gradient-norm CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-layer weight-change CSV (needs --epochs > 0).
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Run-record CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_repeats(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected EXPLORE,CONFIRM, got {s:?}"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    let explore = parse(a)?;
    if explore == 0 {
        return Err("need at least one exploration repeat".into());
    }
    Ok((explore, parse(b)?))
}

fn print_record(r: &RunRecord) {
    println!(
        "{}  status={:?}  test_accuracy={:.4}  train_loss={:.5}  time={:.1}s",
        r.run_id, r.status, r.test_accuracy, r.train_loss, r.wall_time_s
    );
}

fn save_records(path: Option<&Path>, records: &[RunRecord]) -> Result<()> {
    if let Some(p) = path {
        write_run_records(p, records)?;
        log::info!("wrote {} run records to {}", records.len(), p.display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let (train_set, test_set) = args.data.load()?;
    let mut net = build_network(&args.net.config(train_set.features()))?;
    let before = net.hidden_weights();
    let opts = TrainOptions::new(args.lr, args.epochs, args.batch_size, args.net.seed);
    let record = train(&mut net, &train_set, &test_set, &opts)?;
    print_record(&record);
    save_records(args.out.as_deref(), std::slice::from_ref(&record))?;
    if let Some(p) = &args.weights_out {
        write_weight_change_csv(p, &weight_change(&before, &net.hidden_weights(), &record.run_id)?)?;
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (train_set, test_set) = args.data.load()?;
    let plan = SweepPlan {
        lrs: args.lr_grid.points()?,
        explore_repeats: args.repeats.0,
        confirm_repeats: args.repeats.1,
        epochs: args.epochs,
        batch_size: args.batch_size,
        base_seed: args.net.seed,
        workers: args.workers,
    };
    let config = args.net.config(train_set.features());
    let result = sweep(&config, &plan, &train_set, &test_set)?;
    save_records(args.out.as_deref(), &result.records)?;
    for (lr, mean) in &result.lr_means {
        println!("lr {lr:.3e}  mean test accuracy {mean:.4}");
    }
    match (result.winner, result.summary) {
        (Some(lr), Some(s)) => {
            let std = s.std.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!(
                "{}: best lr {lr:.3e}, accuracy {:.4} ± {std} over {} runs",
                config.label(),
                s.mean,
                s.n
            );
        }
        _ => println!("{}: degenerate sweep, every run diverged", config.label()),
    }
    Ok(())
}

fn cmd_gradients(args: GradientArgs) -> Result<()> {
    if args.weights_out.is_some() && args.epochs == 0 {
        bail!("--weights-out needs --epochs > 0");
    }
    let (train_set, test_set) = args.data.load()?;
    let mut net = build_network(&args.net.config(train_set.features()))?;
    let opts = TrainOptions::new(args.lr, args.epochs, args.batch_size, args.net.seed);
    let id = run_id(&net, &opts);
    let batch = train_set.fixed_batch(args.batch_size, args.net.seed)?;

    let mut records = snapshot_gradient_norms(&net, &batch.x, &batch.y, Phase::AtInit, &id)?;
    if args.epochs > 0 {
        let before = net.hidden_weights();
        let record = train(&mut net, &train_set, &test_set, &opts)?;
        print_record(&record);
        records.extend(snapshot_gradient_norms(
            &net,
            &batch.x,
            &batch.y,
            Phase::PostTraining,
            &id,
        )?);
        if let Some(p) = &args.weights_out {
            write_weight_change_csv(p, &weight_change(&before, &net.hidden_weights(), &id)?)?;
        }
    }
    match &args.out {
        Some(p) => write_gradient_csv(p, &records)?,
        None => {
            for r in &records {
                let factor = r.bgn_factor.map_or(String::new(), |f| format!("{f:e}"));
                println!(
                    "{:?} layer {:>3}  delta {:e}  weight grad {:e}  factor {factor}",
                    r.phase, r.layer_index, r.delta_norm, r.weight_grad_norm
                );
            }
        }
    }
    Ok(())
}

fn cmd_aggregate(args: AggregateArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &args.inputs {
        records.extend(read_run_records(p).with_context(|| format!("reading {}", p.display()))?);
    }
    let text = format_table(&aggregate_table(&records));
    match &args.out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Gradients(a) => cmd_gradients(a),
        Command::Aggregate(a) => cmd_aggregate(a),
    }
}
