use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crhmm::io::commands::{self, BLB_FILE, DATA_FILE, FIT_FILE};
use crhmm::io::RunConfig;
use crhmm::Error;

#[derive(Parser, Debug)]
#[command(version, about = "Register-coverage estimation with capture-recapture hidden Markov models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `[output] dir` of the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, env = "CRHMM_WORKERS")]
    workers: Option<usize>,
    /// Master seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate records and ground truth from the config's [simulation] section
    Simulate(Common),
    /// Maximum-likelihood fit
    Fit {
        #[command(flatten)]
        common: Common,
        /// Records (.jsonl or long .csv); defaults to <out>/data.jsonl
        #[arg(long)]
        data: Option<PathBuf>,
        /// Per-record weights as `id,weight` CSV
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Bag-of-little-bootstraps intervals
    Blb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reuse cells already in the resample log
        #[arg(long)]
        resume: bool,
    },
    /// Most probable latent trajectories and population counts
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Fit file; defaults to <out>/fit.json
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Interval tables and plot data from a BLB result
    Report {
        #[command(flatten)]
        common: Common,
        /// BLB result; defaults to <out>/blb.json
        #[arg(long)]
        blb: Option<PathBuf>,
    },
    /// simulate, fit, blb, decode and report in one go
    Pipeline(Common),
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    workers: Option<usize>,
}

fn context(c: &Common) -> Result<Context, Error> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok(Context { cfg, out, workers: c.workers })
}

fn or_default(p: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| out.join(name))
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Simulate(c) => {
            let ctx = context(c)?;
            let s = commands::with_workers(ctx.workers, || commands::cmd_simulate(&ctx.cfg, &ctx.out))??;
            println!("simulated {} records, {} person-years -> {}", s.records, s.person_years, s.data.display());
        }
        Command::Fit { common, data, weights } => {
            let ctx = context(common)?;
            let data = or_default(data, &ctx.out, DATA_FILE);
            let f = commands::with_workers(ctx.workers, || commands::cmd_fit(&ctx.cfg, &data, weights.as_deref(), &ctx.out))??;
            println!(
                "loglik {:.6} after {} iterations ({}, converged: {}) -> {}",
                f.fit.loglik,
                f.fit.iterations,
                f.fit.termination,
                f.fit.converged,
                ctx.out.join(FIT_FILE).display()
            );
        }
        Command::Blb { common, data, resume } => {
            let ctx = context(common)?;
            let data = or_default(data, &ctx.out, DATA_FILE);
            let r = commands::with_workers(ctx.workers, || commands::cmd_blb(&ctx.cfg, &data, &ctx.out, *resume))??;
            let failed = r.cells.iter().filter(|c| !c.ok).count();
            println!(
                "{} subsets x {} resamples ({} failed) -> {}",
                r.plan.s,
                r.plan.r,
                failed,
                ctx.out.join(BLB_FILE).display()
            );
        }
        Command::Decode { common, data, fit } => {
            let ctx = context(common)?;
            let data = or_default(data, &ctx.out, DATA_FILE);
            let fit = or_default(fit, &ctx.out, FIT_FILE);
            let s = commands::with_workers(ctx.workers, || commands::cmd_decode(&ctx.cfg, &data, &fit, &ctx.out))??;
            for (y, p) in s.years.iter().zip(&s.present) {
                println!("{y}\t{p}");
            }
        }
        Command::Report { common, blb } => {
            let ctx = context(common)?;
            let blb = or_default(blb, &ctx.out, BLB_FILE);
            for p in commands::cmd_report(&blb, &ctx.out)? {
                println!("{}", p.display());
            }
        }
        Command::Pipeline(c) => {
            let ctx = context(c)?;
            for p in commands::with_workers(ctx.workers, || commands::cmd_pipeline(&ctx.cfg, &ctx.out))?? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
