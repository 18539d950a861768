use std::path::PathBuf;
use std::process::ExitCode;

use afabench::datasets::DatasetId;
use afabench::harness::{BudgetPreset, ClassifierMode, MethodId, Scale};
use afabench_cli::commands::{self, CsvOptions};
use afabench_cli::sweep::SweepConfig;
use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afabench", version, about = "Active feature acquisition benchmark")]
struct Cli {
    /// Directory all relative paths resolve against.
    #[arg(long, global = true, env = "AFABENCH_WORKDIR", default_value = ".")]
    workdir: PathBuf,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/val/test splits and a manifest for one dataset.
    Generate {
        #[arg(value_parser = parse_dataset)]
        dataset: DatasetId,
        /// Generation seed; also the split index.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default: data/<dataset>/split-<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Source CSV for non-synthetic datasets.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long)]
        num_classes: Option<usize>,
    },
    /// Pretrain the shared predictor for each dataset split.
    Pretrain(SweepArgs),
    /// Train and checkpoint policies.
    Train(SweepArgs),
    /// Evaluate policies and write per-cell results plus aggregates.
    Evaluate {
        #[command(flatten)]
        sweep: SweepArgs,
        /// Fail cells whose checkpoints are missing instead of training them.
        #[arg(long)]
        no_train: bool,
    },
    /// Render one SVG per dataset, classifier mode and budget.
    Plot {
        #[arg(long, default_value = "results/curves.csv")]
        results: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Print a markdown summary of all result cells.
    Report {
        #[arg(long, default_value = "results")]
        results: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Datasets (comma separated).
    #[arg(value_delimiter = ',', value_parser = parse_dataset)]
    datasets: Vec<DatasetId>,
    /// JSON sweep configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Methods (default: all; the oracle only on afacontext).
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<MethodId>,
    /// Explicit budgets.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    /// Named budgets: small, medium, large.
    #[arg(long, value_delimiter = ',', value_parser = parse_preset)]
    budget_presets: Vec<BudgetPreset>,
    /// Classifier modes: shared, builtin.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Vec<ClassifierMode>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    splits: Vec<u64>,
    /// Training effort: full or desk.
    #[arg(long, value_parser = parse_scale)]
    scale: Option<Scale>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_dataset(s: &str) -> Result<DatasetId, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_method(s: &str) -> Result<MethodId, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_mode(s: &str) -> Result<ClassifierMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_scale(s: &str) -> Result<Scale, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_preset(s: &str) -> Result<BudgetPreset, String> {
    match s {
        "small" => Ok(BudgetPreset::Small),
        "medium" => Ok(BudgetPreset::Medium),
        "large" => Ok(BudgetPreset::Large),
        other => Err(format!("unknown budget preset '{other}'")),
    }
}

impl SweepArgs {
    fn resolve(self, workdir: &std::path::Path) -> Result<SweepConfig> {
        let base = match &self.config {
            Some(p) => SweepConfig::load(&commands::under(workdir, p))?,
            None => SweepConfig::default(),
        };
        let flags = SweepConfig {
            datasets: self.datasets,
            methods: self.methods,
            budgets: self.budgets,
            budget_presets: self.budget_presets,
            classifier_modes: self.modes,
            seeds: self.seeds,
            splits: self.splits,
            scale: self.scale,
            jobs: self.jobs,
            ..SweepConfig::default()
        };
        base.merge(flags).resolve()
    }
}

fn run(cli: Cli) -> Result<bool> {
    let workdir = cli.workdir;
    match cli.command {
        Command::Generate {
            dataset,
            seed,
            out,
            csv,
            label_column,
            num_classes,
        } => {
            let opts = CsvOptions {
                path: csv,
                label_column,
                num_classes,
            };
            let dir = commands::generate(&workdir, dataset, seed, out.as_deref(), &opts)?;
            println!("{}", dir.display());
            Ok(true)
        }
        Command::Pretrain(args) => {
            let s = commands::pretrain(&workdir, &args.resolve(&workdir)?)?;
            println!("pretrained {}/{} predictors", s.total - s.failed, s.total);
            Ok(s.success())
        }
        Command::Train(args) => {
            let s = commands::train(&workdir, &args.resolve(&workdir)?)?;
            println!("trained {}/{} policies", s.total - s.failed, s.total);
            Ok(s.success())
        }
        Command::Evaluate { sweep, no_train } => {
            let s = commands::evaluate(&workdir, &sweep.resolve(&workdir)?, !no_train)?;
            println!("evaluated {}/{} cells", s.total - s.failed, s.total);
            Ok(s.success())
        }
        Command::Plot { results, out } => {
            for p in commands::plot(&workdir, &results, &out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Report { results, out } => {
            let md = commands::report(&workdir, &results)?;
            if let Some(out) = out {
                std::fs::write(commands::under(&workdir, &out), &md)?;
            }
            print!("{md}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
