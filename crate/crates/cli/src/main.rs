use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dspp_cli::commands::{self, load_dataset, load_model, load_pl};
use dspp_cli::{selftest, CliError, CliResult, ExperimentConfig};

/// Stochastic intensity estimation for doubly stochastic Poisson traffic.
#[derive(Debug, Parser)]
#[command(name = "dspp", version)]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the latent intensity paths of generated data.
    #[arg(long, global = true)]
    keep_paths: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the training dataset from the configured truth.
    Generate,
    /// Fit the latent model to `dataset.csv`.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write the initialized model without training it.
        #[arg(long)]
        init_only: bool,
    },
    /// Fit the piecewise-constant and piecewise-linear baselines.
    Baseline,
    /// Run the queue comparisons for the trained model and the baseline.
    Runthrough,
    /// Produce every configured table and plot file.
    Report,
    /// Run the built-in oracle checks.
    Selftest,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }

    match cli.command {
        Command::Generate => {
            commands::cmd_generate(&cfg, cli.keep_paths)?;
        }
        Command::Train { resume, init_only } => {
            let data = load_dataset(&cfg)?;
            let outcome = commands::cmd_train(&cfg, &data, resume.as_deref(), init_only)?;
            println!("{}", outcome.checkpoint.display());
        }
        Command::Baseline => {
            let data = load_dataset(&cfg)?;
            let pl = commands::cmd_baseline(&cfg, &data)?;
            println!("piecewise-linear nodes {:?}", pl.values);
        }
        Command::Runthrough => {
            let (model, _) = load_model(&cfg)?;
            let pl = load_pl(&cfg)?;
            for (name, rows) in commands::cmd_runthrough(&cfg, &model, &pl)? {
                for (label, rt) in rows {
                    for (t, s) in rt.probes.iter().zip(&rt.occupancy) {
                        println!(
                            "{name} {label:4} t={t}: mean {:.2} +/- {:.2}, variance {:.2} [{:.2}, {:.2}]",
                            s.mean, s.ci_half, s.variance, s.var_lo, s.var_hi
                        );
                    }
                }
            }
        }
        Command::Report => {
            let data = load_dataset(&cfg)?;
            let (model, trained) = load_model(&cfg)?;
            for f in commands::cmd_report(&cfg, &data, &model, trained)? {
                println!("{}", f.display());
            }
        }
        Command::Selftest => {
            let checks = selftest::run();
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} self-test checks failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dspp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
