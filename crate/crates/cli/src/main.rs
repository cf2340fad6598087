use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ecobasket::dataset::{PriceEstimator, SynthConfig};
use ecobasket::experiments::{BootstrapConfig, CounterfactualConfig};
use ecobasket::methods::Method;
use ecobasket_cli::commands::{self, DatasetSource, EvalSource, IngestPaths, ReportOptions};
use ecobasket_cli::config::Config;
use ecobasket_cli::server::{self, AppState};

#[derive(Parser)]
#[command(name = "ecobasket", version, about = "Sustainable grocery basket recommendations")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a catalog and weekly corpus from raw tables or the synthetic generator.
    BuildDataset(BuildArgs),
    /// Recommend baskets for one intended basket and print them as CSV.
    Optimize(OptimizeArgs),
    /// Run one evaluation suite and print its table as CSV.
    Evaluate(EvaluateArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Run every suite and write tables, figure data and a JSON summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Generate synthetic data instead of ingesting tables.
    #[arg(long, conflicts_with_all = ["transactions", "env", "nutrition"])]
    synth: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    households: usize,
    #[arg(long, default_value_t = 85)]
    weeks: usize,
    #[arg(long, default_value_t = 132)]
    products: usize,
    #[arg(long, requires_all = ["env", "nutrition"])]
    transactions: Option<PathBuf>,
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    nutrition: Option<PathBuf>,
    /// Estimate unit prices by median instead of mean.
    #[arg(long)]
    median_price: bool,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    method: Option<Method>,
    /// `product_id,quantity` CSV of the intended basket.
    #[arg(long)]
    basket: PathBuf,
    /// Catalog CSV; defaults to the configured one, then the synthetic catalog.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Eleven comma-separated positive objective weights.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    generations: Option<usize>,
    /// Only print recommendations that pass the acceptability filter.
    #[arg(long)]
    filtered: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, requires = "corpus")]
    catalog: Option<PathBuf>,
    #[arg(long, requires = "catalog")]
    corpus: Option<PathBuf>,
    /// Synthetic corpus size when no corpus is given.
    #[arg(long, default_value_t = 50)]
    households: usize,
    #[arg(long, default_value_t = 10)]
    weeks: usize,
    #[arg(long, default_value_t = 1)]
    data_seed: u64,
    /// Restrict to the households with the largest GHG totals.
    #[arg(long)]
    top_emitters: Option<usize>,
    /// Use only the first N intended baskets.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value = "g3a,mones,rnsga2")]
    methods: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    weights: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Dominance,
    Ratios,
    Counterfactual,
    Timing,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.25)]
    acceptance_rate: f64,
    #[arg(long, default_value_t = 5000)]
    trajectories: usize,
    #[arg(long, default_value_t = 100)]
    timing_sample: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Serve the synthetic catalog when none is configured.
    #[arg(long)]
    synthetic_catalog: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.25)]
    acceptance_rate: f64,
    #[arg(long, default_value_t = 5000)]
    trajectories: usize,
    #[arg(long, default_value_t = 100)]
    timing_sample: usize,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn build_dataset(args: &BuildArgs) -> Result<()> {
    let source = match (&args.transactions, &args.env, &args.nutrition) {
        (Some(t), Some(e), Some(n)) => DatasetSource::Ingest(
            IngestPaths {
                transactions: t.clone(),
                env: e.clone(),
                nutrition: n.clone(),
            },
            if args.median_price { PriceEstimator::Median } else { PriceEstimator::Mean },
        ),
        _ if args.synth => DatasetSource::Synthetic(SynthConfig {
            seed: args.seed,
            n_households: args.households,
            n_weeks: args.weeks,
            n_products: args.products,
            ..Default::default()
        }),
        _ => bail!("give --synth or all of --transactions, --env and --nutrition"),
    };
    let data = commands::build_dataset(&source)?;
    commands::write_dataset(&args.out, &data)?;
    let baskets = data.corpus.intended_baskets(&data.catalog)?.len();
    println!(
        "wrote {} products and {baskets} intended baskets to {}",
        data.catalog.len(),
        args.out.display()
    );
    if let Some(r) = &data.report {
        for d in &r.dropped_products {
            eprintln!("dropped {}: {}", d.label, d.reason);
        }
    }
    Ok(())
}

fn optimize(args: &OptimizeArgs, config: &Config) -> Result<()> {
    let catalog = commands::load_catalog(args.catalog.as_deref().or(config.catalog.as_deref()))?;
    let file = std::fs::File::open(&args.basket).with_context(|| format!("opening {}", args.basket.display()))?;
    let basket = commands::read_basket_csv(file, &catalog)?;
    let weights = args.weights.as_deref().map(commands::parse_weights).transpose()?;
    let configs = commands::method_configs(&config.methods, weights, args.generations);
    let method = args.method.unwrap_or(config.default_method);
    let mut recs = commands::optimize_basket(method, &catalog, &basket, &configs, args.seed.unwrap_or(config.seed))?;
    if args.filtered {
        recs.retain(|r| r.passed_filter);
    }
    commands::write_recommendations(output(&args.out)?, &catalog, &recs)
}

fn eval_inputs(d: &DataArgs, config: &Config) -> Result<(commands::EvalData, Vec<Method>, ecobasket::methods::MethodConfigs)> {
    let data = commands::load_eval_data(&EvalSource {
        catalog: d.catalog.clone(),
        corpus: d.corpus.clone(),
        synth: SynthConfig {
            seed: d.data_seed,
            n_households: d.households,
            n_weeks: d.weeks,
            ..Default::default()
        },
        top_emitters: d.top_emitters,
        limit: d.limit,
    })?;
    let methods = commands::parse_methods(&d.methods)?;
    let weights = d.weights.as_deref().map(commands::parse_weights).transpose()?;
    Ok((data, methods, commands::method_configs(&config.methods, weights, d.generations)))
}

fn evaluate(args: &EvaluateArgs, config: &Config) -> Result<()> {
    let (data, methods, configs) = eval_inputs(&args.data, config)?;
    let out = output(&args.out)?;
    match args.suite {
        Suite::Timing => commands::write_timing(out, &commands::timing_table(&data, &methods, &configs, args.data.seed, args.timing_sample)?),
        suite => {
            let sets = commands::recommend_all(&data, &methods, &configs, args.data.seed)?;
            match suite {
                Suite::Dominance => {
                    if sets.len() < 2 {
                        bail!("the dominance suite needs at least two methods");
                    }
                    let bootstrap = BootstrapConfig {
                        resamples: args.resamples,
                        seed: args.data.seed,
                        ..Default::default()
                    };
                    commands::write_dominance(out, &commands::dominance_table(&sets, &bootstrap)?)
                }
                Suite::Ratios => commands::write_ratios(out, &commands::ratio_table(&sets)),
                _ => {
                    let cf = CounterfactualConfig {
                        acceptance_rate: args.acceptance_rate,
                        trajectories: args.trajectories,
                        seed: args.data.seed,
                    };
                    commands::write_impact(out, &commands::impact_table(&data, &sets, &cf)?)
                }
            }
        }
    }
}

fn report(args: &ReportArgs, config: &Config) -> Result<()> {
    let (data, methods, configs) = eval_inputs(&args.data, config)?;
    let opts = ReportOptions {
        bootstrap: BootstrapConfig {
            resamples: args.resamples,
            seed: args.data.seed,
            ..Default::default()
        },
        counterfactual: CounterfactualConfig {
            acceptance_rate: args.acceptance_rate,
            trajectories: args.trajectories,
            seed: args.data.seed,
        },
        timing_sample: args.timing_sample,
        seed: args.data.seed,
    };
    commands::write_report(&args.out, &data, &methods, &configs, &opts)?;
    println!("wrote report to {}", args.out.display());
    Ok(())
}

fn serve(args: &ServeArgs, mut config: Config) -> Result<()> {
    if let Some(p) = args.port {
        config.port = p;
    }
    let catalog = match &config.catalog {
        Some(p) => Some(commands::load_catalog(Some(p))?),
        None if args.synthetic_catalog => Some(commands::default_catalog()?),
        None => {
            log::warn!("no catalog configured; /optimize will answer 409");
            None
        }
    };
    let state = AppState::new(catalog, &config)?;
    let addr = SocketAddr::new(args.host, config.port);
    tokio::runtime::Runtime::new()?.block_on(server::serve(state, addr))
}

fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::BuildDataset(a) => build_dataset(a),
        Command::Optimize(a) => optimize(a, &config),
        Command::Evaluate(a) => evaluate(a, &config),
        Command::Serve(a) => serve(a, config),
        Command::Report(a) => report(a, &config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
