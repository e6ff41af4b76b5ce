//! `mpq-forge`: train importance indicators, search bit-widths under a
//! budget, fine-tune and evaluate the quantized network.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mpq_core::config::RunConfig;
use mpq_core::cost::Budget;
use mpq_core::error::Error;
use mpq_core::pipeline::{self, FinetuneConfig};
use mpq_core::report::{self, PolicyFile};

#[derive(Parser)]
#[command(name = "mpq-forge", version, about = "Mixed-precision quantization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the per-layer, per-bit scale indicators; writes indicators.txt
    /// and stats.txt into the output directory.
    TrainIndicators(ConfigArgs),
    /// Solve the bit allocation from an indicator report and layer stats.
    /// Needs no config file and no dataset.
    Search(SearchArgs),
    /// Fine-tune the model at the bit-widths of a policy file.
    Finetune(FinetuneArgs),
    /// Evaluate a weight dump on the validation split.
    Eval(EvalArgs),
    /// Full pipeline: indicators, search, fine-tune, record.
    Run(ConfigArgs),
    /// Routine vs reversed bit assignment, sharing one indicator report.
    AblateReverse(ConfigArgs),
}

#[derive(Args)]
struct Overrides {
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the importance mixing coefficient.
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the bit-width options, e.g. --bits 2,4,8.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u32>>,
    /// Absolute BitOps budget.
    #[arg(long)]
    budget_bitops: Option<u64>,
    /// Absolute weight-payload budget in bits.
    #[arg(long)]
    budget_size_bits: Option<u64>,
    /// Maximize summed importance instead of minimizing it.
    #[arg(long)]
    reversed: bool,
    /// Redo the run even if a matching record exists.
    #[arg(long)]
    force: bool,
    /// Override the output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SearchArgs {
    /// Indicator report written by train-indicators or run.
    #[arg(long)]
    indicators: PathBuf,
    /// Layer stats file; defaults to stats.txt next to the indicators.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    budget_bitops: Option<u64>,
    #[arg(long)]
    budget_size_bits: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long)]
    reversed: bool,
    /// Output policy path; defaults to policy.txt next to the indicators.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    config: PathBuf,
    /// Policy file from search.
    #[arg(long)]
    policy: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    /// Weight dump from finetune or run.
    #[arg(long)]
    weights: PathBuf,
    /// Policy the dump was trained under; omit for full precision.
    #[arg(long)]
    policy: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<RunConfig, Error> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        config.run.seed = seed;
    }
    if let Some(alpha) = overrides.alpha {
        config.run.alpha = alpha;
    }
    if let Some(bits) = &overrides.bits {
        config.run.bits = bits.clone();
    }
    if let Some(bitops) = overrides.budget_bitops {
        config.budget.bitops = Some(bitops);
        config.budget.bitops_level = None;
    }
    if let Some(size) = overrides.budget_size_bits {
        config.budget.size_bits = Some(size);
        config.budget.size_level = None;
    }
    if overrides.reversed {
        config.flags.reversed = true;
    }
    if let Some(dir) = &overrides.out_dir {
        config.run.out_dir = dir.clone();
    }
    Ok(config)
}

fn print_record(label: &str, record: &report::RunRecord) {
    let metric = |name: &str| record.metric(name).map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    println!(
        "{label}: top1_quant {} top1_fp {} (artifacts in record {})",
        metric("top1_quant"),
        metric("top1_fp"),
        record.config_digest.get(..12).unwrap_or(&record.config_digest),
    );
}

fn print_policy(policy: &PolicyFile) {
    println!(
        "policy ({}): objective {} bitops {} size_bits {} nodes {}",
        policy.sense, policy.objective, policy.total_bitops, policy.total_size_bits, policy.nodes_explored
    );
    for layer in &policy.layers {
        println!("  layer {} {}: {}w{}a", layer.layer, layer.name, layer.b_w, layer.b_a);
    }
}

fn real_main() -> Result<(), Error> {
    match Cli::parse().command {
        Command::TrainIndicators(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            std::fs::create_dir_all(&config.run.out_dir)?;
            let dataset = pipeline::load_dataset(&config).map_err(|e| e.in_stage("dataset"))?;
            let network = pipeline::build_network(&config, &dataset)?;
            let stage = pipeline::indicator_stage(&config, &network, &dataset).map_err(|e| e.in_stage("indicators"))?;
            let indicators = config.run.out_dir.join(pipeline::INDICATORS_FILE);
            let stats = config.run.out_dir.join(pipeline::STATS_FILE);
            report::write_indicator_report(&stage.report, &indicators)?;
            report::write_layer_stats(&stage.stats, &stats)?;
            let last_loss = stage.report.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!(
                "indicators: {} steps, final loss {last_loss:.4}, wrote {} and {}",
                stage.report.steps,
                indicators.display(),
                stats.display()
            );
        }
        Command::Search(args) => {
            let indicators = report::read_indicator_report(&args.indicators)?;
            let stats_path = args
                .stats
                .unwrap_or_else(|| args.indicators.with_file_name(pipeline::STATS_FILE));
            let stats = report::read_layer_stats(&stats_path)?;
            let budget = Budget::new(args.budget_bitops, args.budget_size_bits)?;
            let policy = pipeline::search_stage(&indicators, &stats, args.alpha, budget, args.reversed)
                .map_err(|e| e.in_stage("search"))?;
            let out = args
                .out
                .unwrap_or_else(|| args.indicators.with_file_name(pipeline::POLICY_FILE));
            let file = PolicyFile::from_policy(&policy, &indicators.layer_names);
            report::write_policy(&file, &out)?;
            print_policy(&file);
            println!("search: solved in {} ms, wrote {}", policy.wall_time.as_millis(), out.display());
        }
        Command::Finetune(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            std::fs::create_dir_all(&config.run.out_dir)?;
            let dataset = pipeline::load_dataset(&config).map_err(|e| e.in_stage("dataset"))?;
            let network = pipeline::build_network(&config, &dataset)?;
            let policy = report::read_policy(&args.policy)?;
            let bits = pipeline::policy_bits(&policy, &network)?;
            let outcome = pipeline::finetune_with_policy(&network, &bits, &dataset, &FinetuneConfig::from_run(&config))
                .map_err(|e| e.in_stage("finetune"))?;
            println!("finetune: top-1 {:.4}, final loss {:.4}", outcome.top1, outcome.final_loss);
        }
        Command::Eval(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            let top1 = pipeline::eval_weights(&config, &args.weights, args.policy.as_deref())?;
            println!("eval: top-1 {top1:.4}");
        }
        Command::Run(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            let record = pipeline::run_pipeline(&config, args.overrides.force)?;
            print_record("run", &record);
        }
        Command::AblateReverse(args) => {
            let config = load_config(&args.config, &args.overrides)?;
            let (routine, reversed) = pipeline::ablate_reverse(&config, args.overrides.force)?;
            print_record("routine", &routine);
            print_record("reversed", &reversed);
        }
    }
    Ok(())
}

/// 0 success, 2 infeasible budget, 3 config error, 4 divergence, 1 other.
fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Stage { source, .. } => exit_code(source),
        Error::InfeasibleBudget { .. } => 2,
        Error::Config(_) | Error::EmptyBudget => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            let mut source = std::error::Error::source(&error);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(exit_code(&error))
        }
    }
}
