use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use panelstate::config::{load_config, load_scenario, RunConfig};
use panelstate::reports::PartitionLoss;
use panelstate::run::{self, FitOptions};
use panelstate::simulate::ScenarioConfig;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "panelstate",
    version,
    about = "Pattern-based clustering of binary longitudinal series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-cluster cohort.
    Simulate {
        /// Scenario JSON; defaults apply to absent fields.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate prior pattern probabilities and write g_probs.csv.
    PriorProbs {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the sampler and write a run directory.
    Fit(FitArgs),
    /// Posterior summary tables of a run.
    Summarize {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "binder")]
        loss: PartitionLoss,
        /// Defaults to <run>/summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-entropy of the pattern posterior against simulation truth.
    Score {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-treatment slice summaries from stored trajectories.
    TreatmentEffects {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "binder")]
        loss: PartitionLoss,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    /// Generate each proposal right before its update.
    #[arg(long)]
    sequential: bool,
    /// Keep trajectories for every retained draw.
    #[arg(long)]
    full_theta: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
}

fn config_or_default(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn fit_options(a: FitArgs) -> Result<FitOptions> {
    let mut cfg = config_or_default(a.config.as_deref())?;
    let m = &mut cfg.mcmc;
    if let Some(v) = a.chains {
        m.n_chains = v;
    }
    if let Some(v) = a.seed {
        m.seed = v;
    }
    if let Some(v) = a.iters {
        m.n_iter = v;
    }
    if let Some(v) = a.burnin {
        m.burn_in = v;
    }
    if let Some(v) = a.thin {
        m.thin = v;
    }
    m.sequential |= a.sequential;
    m.full_theta |= a.full_theta;
    if let Some(v) = a.particles {
        cfg.model.n_particles = v;
    }
    cfg.mcmc.validate()?;
    cfg.model.validate()?;
    Ok(FitOptions {
        data: a.data,
        out: a.out,
        config: cfg,
        force: a.force,
        threads: a.threads,
    })
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { scenario, out, seed } => {
            let mut sc = match &scenario {
                Some(p) => load_scenario(p).with_context(|| format!("loading {}", p.display()))?,
                None => ScenarioConfig::default(),
            };
            if let Some(s) = seed {
                sc.seed = s;
            }
            let ds = run::simulate(&sc, &out)?;
            log::info!("wrote {} subjects to {}", ds.len(), out.display());
        }
        Command::PriorProbs {
            data,
            config,
            out,
            seed,
            threads,
        } => {
            let mut cfg = config_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.mcmc.seed = s;
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()?;
            pool.install(|| run::prior_probs(&data, &cfg, &out))?;
        }
        Command::Fit(args) => {
            let opts = fit_options(args)?;
            let m = run::fit(&opts)?;
            log::info!(
                "{} chains, {} retained draws, written to {}",
                m.chains.len(),
                m.chains.iter().map(|c| c.retained_draws).sum::<usize>(),
                opts.out.display()
            );
        }
        Command::Summarize { run: dir, loss, out } => {
            let data = run::load_run(&dir)?;
            run::summarize(&data, loss, &out.unwrap_or_else(|| dir.join("summary")))?;
        }
        Command::Score { run: dir, truth, out } => {
            let data = run::load_run(&dir)?;
            let s = run::score(&data, &truth, &out.unwrap_or(dir))?;
            println!("{}", s.overall);
        }
        Command::TreatmentEffects { run: dir, loss, out } => {
            let data = run::load_run(&dir)?;
            run::treatment_effects(&data, loss, &out.unwrap_or(dir))?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<panelstate::Error>())
        .map_or(4, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PANELSTATE_LOG", "info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
