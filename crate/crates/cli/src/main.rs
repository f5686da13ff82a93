use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fairrisk::cohort::{self, SplitPlan, SyntheticSpec};
use fairrisk::experiment::{self, ExperimentConfig, ReportFormat};
use fairrisk::features::{self, IntervalSpec};
use fairrisk::metrics::{self, ReportMeta};
use fairrisk::model::{self, Checkpoint, Hyperparameters, SparseMatrix};
use fairrisk::penalty::{Bandwidth, Criterion, Distance, PenaltyConfig, PenaltyInput};
use fairrisk::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fairrisk", version, about = "Fairness-regularized clinical risk models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort
    Generate {
        /// Canonical two-group cohort of this size
        #[arg(long, conflicts_with = "spec")]
        canonical: Option<usize>,
        /// JSON generator spec
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the seed of the spec
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build a cohort from a timelines file
    Extract {
        #[arg(long)]
        timelines: PathBuf,
        #[arg(long, value_enum, default_value = "daily")]
        intervals: Intervals,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for cohort.tsv, vocabulary.json and split.json
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Split a cohort into a test set and folds
    Split {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one model on one fold
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value = "synthetic_small")]
        preset: String,
        #[arg(long, default_value = "demographic_parity")]
        criterion: Criterion,
        #[arg(long, default_value = "mmd")]
        distance: Distance,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value = "median")]
        bandwidth: Bandwidth,
        /// Penalize both log-probabilities instead of the positive one
        #[arg(long)]
        both_log_probs: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint path
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run a lambda sweep from a TOML config
    Sweep {
        config: PathBuf,
    },
    /// Evaluate a checkpoint on the test set of a split
    Evaluate {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report path; printed to stdout when omitted
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Rebuild reports from a sweep directory
    Report {
        run: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Defaults to the sweep directory
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Intervals {
    Daily,
    Hourly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

enum Failure {
    Config(String),
    Data(String),
    Partial(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

fn config_error(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn write_report(path: &Path, value: &metrics::FairnessReport) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate {
            canonical,
            spec,
            seed,
            out,
        } => {
            let mut spec = match (canonical, spec) {
                (Some(n), None) => SyntheticSpec::canonical(n, seed.unwrap_or(0)),
                (None, Some(path)) => {
                    let text = fs::read_to_string(&path).map_err(|e| config_error(Error::io(&path, e)))?;
                    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
                }
                _ => return Err(Failure::Config("give --canonical or --spec".into())),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            spec.validate().map_err(config_error)?;
            let cohort = cohort::generate_synthetic(&spec)?;
            cohort.save(&out)?;
            for row in cohort::incidence_table(&cohort)? {
                log::info!("{}: {} records, {} positives", row.group, row.count, row.positives);
            }
        }
        Command::Extract {
            timelines,
            intervals,
            test_fraction,
            folds,
            seed,
            out,
        } => {
            let (attribute, subjects) = features::load_timelines(&timelines)?;
            let intervals = match intervals {
                Intervals::Daily => IntervalSpec::daily(),
                Intervals::Hourly => IntervalSpec::hourly(),
            };
            let extraction =
                features::extract_cohort(&attribute, &subjects, &intervals, None, test_fraction, folds, seed)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            extraction.cohort.save(out.join("cohort.tsv"))?;
            extraction.vocabulary.save(out.join("vocabulary.json"))?;
            extraction.split.save(out.join("split.json"))?;
            log::info!(
                "{} records, {} features",
                extraction.cohort.len(),
                extraction.vocabulary.len()
            );
        }
        Command::Split {
            cohort,
            test_fraction,
            folds,
            seed,
            out,
        } => {
            let cohort = cohort::load_cohort_self_described(&cohort)?;
            cohort::make_split(&cohort, test_fraction, folds, seed)?.save(&out)?;
        }
        Command::Train {
            cohort,
            split,
            fold,
            preset,
            criterion,
            distance,
            lambda,
            bandwidth,
            both_log_probs,
            seed,
            out,
        } => {
            let hp = Hyperparameters::preset(&preset)
                .ok_or_else(|| Failure::Config(format!("unknown preset '{preset}'")))?;
            let penalty = PenaltyConfig {
                criterion,
                distance,
                lambda,
                bandwidth,
                input: if both_log_probs {
                    PenaltyInput::BothLogProbs
                } else {
                    PenaltyInput::PositiveLogProb
                },
            };
            penalty.validate().map_err(config_error)?;
            let cohort = cohort::load_cohort_self_described(&cohort)?;
            let split = SplitPlan::load(&split)?;
            let (params, log) = model::train(&cohort, &split, fold, &hp, &penalty, seed)?;
            if let Some(best) = log.best() {
                log::info!(
                    "best iteration {}: validation objective {:.6}",
                    log.best_iteration,
                    best.validation.total
                );
            }
            Checkpoint::new(hp, penalty, params, log).save(&out)?;
        }
        Command::Sweep { config } => {
            let config = ExperimentConfig::load(&config).map_err(config_error)?;
            let result = experiment::run_sweep(&config)?;
            println!("{}", config.output_dir().display());
            if !result.is_complete() {
                return Err(Failure::Partial(format!(
                    "{} of {} cells failed",
                    result.failures.len(),
                    result.failures.len() + result.cells.len()
                )));
            }
        }
        Command::Evaluate {
            cohort,
            split,
            checkpoint,
            out,
        } => {
            let cohort = cohort::load_cohort_self_described(&cohort)?;
            let split = SplitPlan::load(&split)?;
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let partition = split.partition(&cohort, 0)?;
            let x = SparseMatrix::from_cohort(&cohort);
            let predictions = model::predict(&checkpoint.params, &x, &partition.test)?;
            let meta = ReportMeta {
                lambda: checkpoint.penalty.lambda,
                penalty: Some(checkpoint.penalty),
                fold: None,
                seed: Some(checkpoint.log.seed),
            };
            let report = metrics::evaluate(&cohort, &partition.test, &predictions, meta)?;
            match out {
                Some(path) => write_report(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
            }
        }
        Command::Report { run, format, out } => {
            let result = experiment::load_sweep(&run)?;
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            for path in experiment::emit_report(&result, format, out.as_ref().unwrap_or(&run))? {
                println!("{}", path.display());
            }
            if !result.is_complete() {
                return Err(Failure::Partial(format!("{} cells missing", result.failures.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Data(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Partial(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
