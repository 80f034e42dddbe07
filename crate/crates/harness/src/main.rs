use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use twosided::io;
use twosided::realization::{monte_carlo, simulate_day, LoginMode};
use twosided::synth::{dataset_config, recipe_distribution, sample_market, BetaRecipe};
use twosided::{birkhoff_decompose, MarketInstance, RecommendationMatrix};
use twosided_harness::artifacts::{short_id, ArtifactDir};
use twosided_harness::config::{default_out_root, MarketSource};
use twosided_harness::pipeline::load_synth_spec;
use twosided_harness::report::spike_count;
use twosided_harness::{distribution_report, load_market, run, sweep, ConfigMap, HarnessError, RunConfig, SweepSpec};

#[derive(Parser)]
#[command(name = "twosided", version, about = "Two-sided recommendation integrators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a market and print its size.
    Validate(MarketArgs),
    /// Run one integrator configuration.
    Run(RunArgs),
    /// Run a capacity sweep and write a frontier CSV.
    Sweep(SweepArgs),
    /// Sample synthetic market datasets to pair CSVs.
    Synth(SynthArgs),
    /// Monte Carlo realization of a matrix.
    Realize(RealizeArgs),
    /// Split a matrix into deterministic menus.
    Decompose(MatrixArgs),
    /// Per-receiver load distribution and histograms.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
struct MarketArgs {
    /// Pair CSV `proposer_id,receiver_id,lambda_p,alpha,lambda_r,beta`.
    #[arg(long)]
    market: Option<String>,
    /// Optional `proposer_id,capacity` CSV.
    #[arg(long)]
    capacities: Option<String>,
    /// Synthetic market spec (JSON).
    #[arg(long)]
    synth: Option<String>,
    /// Which synthetic dataset, 1-based.
    #[arg(long)]
    dataset: Option<String>,
    /// Cognitive capacity for proposers missing from the capacities CSV.
    #[arg(long)]
    default_capacity: Option<String>,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    market: MarketArgs,
    /// one_sided, da or ecda.
    #[arg(long)]
    integrator: Option<String>,
    /// like or date.
    #[arg(long)]
    sort: Option<String>,
    /// headcount, like or date (ecda only).
    #[arg(long)]
    exposure: Option<String>,
    /// Receiver capacity: a number or a `receiver_id,q` CSV.
    #[arg(long)]
    q: Option<String>,
    /// Write the expected-metrics report (true/false).
    #[arg(long)]
    expected: Option<String>,
    /// Days of Monte Carlo realization.
    #[arg(long)]
    monte_carlo: Option<String>,
    /// Login draws: user or pair.
    #[arg(long)]
    login: Option<String>,
    /// Also write the per-day event log.
    #[arg(long)]
    events: bool,
    /// Compare against the exact effective-rate oracle.
    #[arg(long)]
    oracle: bool,
    /// Write a menu decomposition of the matrix.
    #[arg(long)]
    decompose: bool,
    #[arg(long)]
    seed: Option<String>,
    /// Output root; defaults to $TWOSIDED_OUT_DIR or ./runs.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: RunFlags,
    /// Comma-separated, strictly increasing capacities.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Comma-separated: one_sided[:like|:date], da, ecda:<exposure>.
    #[arg(long, value_delimiter = ',', default_value = "one_sided,da,ecda:date")]
    integrators: Vec<String>,
    /// Points evaluated at once.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic market spec (JSON).
    #[arg(long, required_unless_present = "example_distribution")]
    spec: Option<PathBuf>,
    /// Output directory for `dataset_<k>/pairs.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the built-in example distribution to this path and exit.
    #[arg(long)]
    example_distribution: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    #[command(flatten)]
    market: MarketArgs,
    /// Matrix CSV `proposer_id,receiver_id,m`.
    #[arg(long)]
    matrix: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RealizeArgs {
    #[command(flatten)]
    inner: MatrixArgs,
    #[arg(long, default_value_t = 1)]
    days: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// user or pair.
    #[arg(long, default_value = "user")]
    login: String,
    /// Also write the event log.
    #[arg(long)]
    events: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    inner: MatrixArgs,
    /// Histogram bins.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Date cap to look for a spike at.
    #[arg(long)]
    q: Option<f64>,
}

impl MarketArgs {
    fn apply(&self, map: &mut ConfigMap) {
        for (k, v) in [
            ("market", &self.market),
            ("capacities", &self.capacities),
            ("synth", &self.synth),
            ("dataset", &self.dataset),
            ("default_capacity", &self.default_capacity),
        ] {
            if let Some(v) = v {
                map.set(k, v.clone());
            }
        }
    }

    fn source(&self) -> Result<MarketSource, HarnessError> {
        let mut map = ConfigMap::default();
        self.apply(&mut map);
        map.set("integrator", "one_sided");
        Ok(RunConfig::from_map(&map)?.market)
    }
}

impl RunFlags {
    fn to_map(&self) -> Result<ConfigMap, HarnessError> {
        let mut map = match &self.config {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        let mut cli = ConfigMap::default();
        self.market.apply(&mut cli);
        for (k, v) in [
            ("integrator", &self.integrator),
            ("sort", &self.sort),
            ("exposure", &self.exposure),
            ("q", &self.q),
            ("expected", &self.expected),
            ("monte_carlo", &self.monte_carlo),
            ("login", &self.login),
            ("seed", &self.seed),
            ("out", &self.out),
        ] {
            if let Some(v) = v {
                cli.set(k, v.clone());
            }
        }
        for (k, on) in [("events", self.events), ("oracle", self.oracle), ("decompose", self.decompose)] {
            if on {
                cli.set(k, "true");
            }
        }
        map.merge(&cli);
        Ok(map)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, HarnessError> {
    File::open(path).map(BufReader::new).map_err(|e| HarnessError::Input(format!("{}: {e}", path.display())))
}

fn load_with_matrix(args: &MatrixArgs) -> Result<(MarketInstance, RecommendationMatrix), HarnessError> {
    let market = load_market(&args.market.source()?)?;
    let m = io::read_matrix_csv(open(&args.matrix)?, market.n_proposers(), market.n_receivers())?;
    m.check_feasible(&market, 1e-9)?;
    Ok((market, m))
}

fn out_dir(args: &MatrixArgs, verb: &str, extra: &str) -> PathBuf {
    args.out.clone().unwrap_or_else(|| {
        let key = format!("{verb}\n{}\n{extra}", args.matrix.display());
        default_out_root().join(format!("{verb}-{}", short_id(&key)))
    })
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Validate(args) => {
            let market = load_market(&args.source()?)?;
            println!(
                "ok: {} proposers, {} receivers, {} eligible pairs",
                market.n_proposers(),
                market.n_receivers(),
                market.n_pairs()
            );
        }
        Command::Run(args) => {
            let cfg = RunConfig::from_map(&args.flags.to_map()?)?;
            let s = run(&cfg)?;
            println!("run {} -> {}", s.run_id, s.dir.display());
            for (name, v) in io::METRIC_COLUMNS.iter().zip(io::metric_values(&s.metrics)) {
                println!("  {name:<22} {v:.6}");
            }
        }
        Command::Sweep(args) => {
            let spec = SweepSpec {
                base: args.flags.to_map()?,
                grid: args.grid,
                integrators: args.integrators.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
                jobs: args.jobs,
            };
            let (dir, rows) = sweep(&spec)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!("sweep -> {} ({} points, {failed} failed)", dir.join("frontier.csv").display(), rows.len());
        }
        Command::Synth(args) => {
            if let Some(path) = &args.example_distribution {
                let dist = recipe_distribution(&BetaRecipe::default())?;
                io::write_distribution(std::io::BufWriter::new(File::create(path)?), &dist)?;
                println!("example distribution -> {}", path.display());
                if args.spec.is_none() {
                    return Ok(());
                }
            }
            let spec_path = args.spec.expect("required by clap");
            let spec = load_synth_spec(&spec_path)?;
            let root = args.out.unwrap_or_else(|| default_out_root().join("synth"));
            let mut dir = ArtifactDir::create(root)?;
            for k in 1..=spec.config.n_datasets {
                let market = sample_market(&spec.distribution, &dataset_config(&spec.config, k))?;
                dir.write(&format!("dataset_{k}/pairs.csv"), |w| Ok(io::write_pair_csv(w, &market)?))?;
            }
            println!("{} datasets -> {}", spec.config.n_datasets, dir.finish()?.display());
        }
        Command::Realize(args) => {
            let (market, m) = load_with_matrix(&args.inner)?;
            let login = match args.login.as_str() {
                "user" => LoginMode::UserLevel,
                "pair" => LoginMode::PerPair,
                other => return Err(HarnessError::Config(format!("login = {other:?}: expected user or pair"))),
            };
            let extra = format!("{} {} {}", args.days, args.seed, args.login);
            let mut dir = ArtifactDir::create(out_dir(&args.inner, "realize", &extra))?;
            let mc = monte_carlo(&m, &market, args.days, args.seed, login)?;
            dir.write("realized.csv", |w| Ok(io::write_realized_csv(w, "realize", &mc)?))?;
            if args.events {
                let logs = (0..args.days)
                    .map(|d| simulate_day(&m, &market, args.seed, d, login))
                    .collect::<Result<Vec<_>, _>>()?;
                dir.write("events.csv", |w| Ok(io::write_event_log_csv(w, &logs)?))?;
            }
            println!("realized {} days -> {}", args.days, dir.finish()?.display());
        }
        Command::Decompose(args) => {
            let (market, m) = load_with_matrix(&args)?;
            let d = birkhoff_decompose(&m, &market)?;
            let mut dir = ArtifactDir::create(out_dir(&args, "decompose", ""))?;
            dir.write("components.csv", |w| Ok(io::write_components_csv(w, &d)?))?;
            for (k, c) in d.components.iter().enumerate() {
                dir.write(&format!("component_{k}.csv"), |w| Ok(io::write_menu_csv(w, c)?))?;
            }
            println!("{} components -> {}", d.len(), dir.finish()?.display());
        }
        Command::Report(args) => {
            let (market, m) = load_with_matrix(&args.inner)?;
            let report = distribution_report(&m, &market)?;
            let extra = format!("{} {:?}", args.bins, args.q);
            let mut dir = ArtifactDir::create(out_dir(&args.inner, "report", &extra))?;
            report.write(&mut dir, args.bins.max(1))?;
            println!("mu variance {:.6}, like-load variance {:.6}", report.mu_variance(), report.like_variance());
            if let Some(q) = args.q {
                let caps = vec![q; report.mu.len()];
                println!("receivers at the date cap: {}", spike_count(&report.mu, &caps));
            }
            println!("report -> {}", dir.finish()?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
