use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtmcmc::harness::{self, config::RunConfig};
use mtmcmc::Error;

/// Bayes-optimal prediction over model trees with meta-tree MCMC.
#[derive(Debug, Parser)]
#[command(name = "mtmcmc", version)]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "MTMCMC_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit on a training CSV and evaluate the Bayes decision on a test CSV.
    FitPredict {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Generate training and test data from a synthetic model tree.
    Synth,
    /// JS divergence to the exact posterior against the accepted count.
    Convergence,
    /// Acceptance ratios of the proposal kinds on the comparison models.
    ProposalCompare,
    /// Per-iteration log marginal likelihood on a training CSV.
    LikelihoodTrace {
        #[arg(long)]
        train: PathBuf,
    },
}

fn run(cli: Cli) -> mtmcmc::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let out = &cli.out_dir;
    match cli.command {
        Command::FitPredict { train, test } => {
            let r = harness::cmd_fit_predict(&train, &test, &cfg, out)?;
            match (r.error_ratio, r.mse) {
                (Some(e), _) => println!("error_ratio {e:.4}  acceptance {:.3}", r.acceptance_ratio),
                (_, Some(m)) => println!("mse {m:.4}  acceptance {:.3}", r.acceptance_ratio),
                _ => {}
            }
        }
        Command::Synth => {
            for p in harness::cmd_synth(&cfg, out)? {
                println!("{}", p.display());
            }
        }
        Command::Convergence => {
            for k in harness::cmd_convergence(&cfg, out)? {
                println!(
                    "{:?}: final js {:.4}  acceptance {:.4}",
                    k.kind,
                    k.final_js(),
                    k.mean_acceptance_ratio
                );
            }
        }
        Command::ProposalCompare => {
            for r in harness::cmd_proposal_compare(&cfg, out)? {
                println!("{:?} {:?}: {:.4}", r.model, r.kind, r.mean_acceptance_ratio);
            }
        }
        Command::LikelihoodTrace { train } => {
            let t = harness::cmd_likelihood_trace(&train, &cfg, out)?;
            println!("{} iterations, final log likelihood {:.4}", t.len() - 1, t[t.len() - 1]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
