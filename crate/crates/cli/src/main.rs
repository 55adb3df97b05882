//! `jetsmc` command-line front end.
//!
//! ```text
//! jetsmc generate --config run.toml --out jets.jsonl
//! jetsmc infer jets.jsonl --method ncsmc --K 256 --out results.csv
//! jetsmc fit jets.jsonl --config run.toml --out trace.csv
//! jetsmc bench --out bench.csv
//! ```

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::{Config, ConfigError, FitMode, Method, ProposalName, SmcName};

#[derive(Parser, Debug)]
#[command(name = "jetsmc", version, about = "Hierarchical clustering of toy jets with sequential Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file. Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "JETSMC_JOBS")]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset of jets and write it as JSON lines.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_jets: Option<usize>,
    },
    /// Run one inference method on every jet of a dataset.
    Infer {
        /// JSONL dataset written by `generate`.
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Number of particles.
        #[arg(long = "K")]
        k: Option<usize>,
        /// Subsamples per particle; only 1 is supported.
        #[arg(long = "M")]
        m: Option<usize>,
        /// Beam width.
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_enum)]
        proposal: Option<ProposalName>,
    },
    /// Fit the splitting rates to a dataset.
    Fit {
        dataset: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<FitMode>,
        #[arg(long, value_enum)]
        algorithm: Option<SmcName>,
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Time every method against the number of leaves.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        beam: Option<usize>,
        /// Leaf counts to time, comma separated.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
    },
}

fn load(common: &Common) -> Result<Config> {
    let mut cfg = Config::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (common, cfg) = match cli.command {
        Command::Generate { common, n_jets } => {
            let mut cfg = load(&common)?;
            if let Some(n) = n_jets {
                cfg.dataset.n_jets = n;
            }
            return with_pool(&common, || commands::generate(&cfg, common.out.as_deref()));
        }
        Command::Infer { dataset, common, method, k, m, beam, proposal } => {
            let mut cfg = load(&common)?;
            let i = &mut cfg.infer;
            i.method = method.unwrap_or(i.method);
            i.k = k.unwrap_or(i.k);
            i.m = m.unwrap_or(i.m);
            i.beam = beam.unwrap_or(i.beam);
            i.proposal = proposal.unwrap_or(i.proposal);
            cfg.check()?;
            return with_pool(&common, || commands::infer(&cfg, &dataset, common.out.as_deref()));
        }
        Command::Fit { dataset, common, mode, algorithm, k, steps, learning_rate } => {
            let mut cfg = load(&common)?;
            let f = &mut cfg.fit;
            f.mode = mode.unwrap_or(f.mode);
            f.algorithm = algorithm.unwrap_or(f.algorithm);
            f.k = k.unwrap_or(f.k);
            f.steps = steps.unwrap_or(f.steps);
            f.learning_rate = learning_rate.unwrap_or(f.learning_rate);
            cfg.check()?;
            return with_pool(&common, || commands::fit(&cfg, &dataset, common.out.as_deref()));
        }
        Command::Bench { common, k, beam, ns } => {
            let mut cfg = load(&common)?;
            let b = &mut cfg.bench;
            b.k = k.unwrap_or(b.k);
            b.beam = beam.unwrap_or(b.beam);
            if let Some(ns) = ns {
                b.ns = ns;
            }
            (common, cfg)
        }
    };
    cfg.check()?;
    with_pool(&common, || commands::bench(&cfg, common.out.as_deref()))
}

fn with_pool<T: Send>(common: &Common, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs.unwrap_or(0))
        .build()?;
    pool.install(f)
}

/// Exit status for an error: 2 configuration, 3 size guard, 4 dead end or
/// total particle death, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<jetsmc::Error>() {
            return match e {
                jetsmc::Error::Config(_) => 2,
                jetsmc::Error::SizeGuard { .. } => 3,
                jetsmc::Error::DeadEnd { .. } | jetsmc::Error::TotalDeath { .. } => 4,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
