use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orderbook_forecast::cli::{self, RunManifest};
use orderbook_forecast::data::{load_calendars, CALENDARS_FILE};
use orderbook_forecast::Calendars;

#[derive(Parser)]
#[command(name = "obf", version, about = "Order-book based day-ahead price forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = cli::DEFAULT_TEST_FRACTION)]
    test_fraction: f64,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a price-class scheme on the training part of a dataset.
    Partition {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = cli::DEFAULT_V_STAR)]
        vstar: f64,
        #[arg(long, default_value_t = cli::DEFAULT_TEST_FRACTION)]
        test_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the feature matrix CSV.
    Features {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scheme: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search and fit the final models.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare trained models with the naive benchmark.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        models: PathBuf,
        /// Data directory whose calendar file is used.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = cli::DEFAULT_TEST_FRACTION)]
        test_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage; `--manifest` replays a previous run.
    Pipeline {
        #[arg(long, conflicts_with_all = ["data", "spec", "vstar", "grid"])]
        manifest: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        vstar: Option<f64>,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> orderbook_forecast::Result<bool> {
    match command {
        Command::Generate { spec, seed, out } => {
            let bundle = cli::cmd_generate(spec.as_deref(), seed, &out)?;
            println!("wrote {} auction hours to {}", bundle.books.len(), out.display());
        }
        Command::Partition { data, vstar, test_fraction, out } => {
            let scheme = cli::cmd_partition(&data, vstar, test_fraction, &out)?;
            println!("{} price classes written to {}", scheme.n_classes(), out.display());
        }
        Command::Features { data, scheme, out } => {
            let m = cli::cmd_features(&data, &scheme, &out)?;
            println!("{} rows x {} features written to {}", m.len(), m.n_features(), out.display());
        }
        Command::Train { features, grid, common, out } => {
            let report = cli::with_workers(common.workers, || {
                cli::cmd_train(&features, grid.as_deref(), common.seed, common.test_fraction, &out)
            })??;
            for g in &report.groups {
                match &g.model {
                    Ok(m) => println!("{}: {} (train RMSE {:.2})", g.name, m.config, m.meta.train_rmse),
                    Err(e) => println!("{}: FAILED ({e})", g.name),
                }
            }
            return Ok(report.failed_models().is_empty());
        }
        Command::Evaluate { features, models, data, test_fraction, out } => {
            let calendars = match data {
                Some(dir) => load_calendars(&dir.join(CALENDARS_FILE))?,
                None => Calendars::default(),
            };
            let table = cli::cmd_evaluate(&features, &models, &calendars, test_fraction, &out)?;
            print!("{}", table.render());
        }
        Command::Pipeline { manifest, data, spec, vstar, grid, common, out } => {
            let mut m = match manifest {
                Some(path) => RunManifest::load(&path)?,
                None => {
                    let mut m = RunManifest::new(out.clone());
                    m.data = data;
                    m.spec = spec;
                    m.grid = grid;
                    m.v_star = vstar.unwrap_or(cli::DEFAULT_V_STAR);
                    m.seed = common.seed;
                    m.test_fraction = common.test_fraction;
                    m.workers = common.workers;
                    m
                }
            };
            m.out = out;
            let summary = cli::run_pipeline(&m)?;
            println!(
                "{} classes, {} feature rows; outputs in {}",
                summary.scheme_classes,
                summary.n_rows,
                m.out.display()
            );
            print!("{}", summary.comparison.render());
            let failed = summary.failed_models();
            if !failed.is_empty() {
                eprintln!("failed models: {}", failed.join(", "));
            }
            return Ok(failed.is_empty());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

