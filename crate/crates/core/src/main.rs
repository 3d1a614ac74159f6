use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use voronoi_mcmc::experiment::{run_experiment, ExperimentConfig, RunError};
use voronoi_mcmc::models::{exact_distribution, ModelSnapshot};
use voronoi_mcmc::verify::run_properties;

#[derive(Parser)]
#[command(name = "voronoi-mcmc", version, about = "Structured Voronoi sampling experiments")]
struct Cli {
    /// Worker threads for chain-level parallelism.
    #[arg(long, global = true, env = "VORONOI_MCMC_THREADS")]
    jobs: Option<usize>,
    /// Output directory, overriding the config's `out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Added to every chain seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON config.
    Run { config: PathBuf },
    /// Run the numerical property suite.
    Verify {
        /// Only properties whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Print the exact distribution of a model snapshot as CSV.
    Enumerate { snapshot: PathBuf },
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| (1, e.to_string()))?;
    }
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(|e| match e {
                RunError::Config(_) => (2, e.to_string()),
                other => (1, other.to_string()),
            })?;
            match run_experiment(&cfg, cli.out_dir.as_deref(), cli.seed_offset) {
                Ok(summary) => {
                    if let Some(report) = &summary.report {
                        for s in &report.summary {
                            println!(
                                "{:<20} T={:<6} k={:<3} seeds={:<4} mean_js={:.6} ci95={:.6}",
                                s.algorithm, s.temperature, s.k, s.n_seeds, s.mean_js, s.ci95
                            );
                        }
                    }
                    for p in &summary.properties {
                        println!("{} {}: {}", if p.passed { "PASS" } else { "FAIL" }, p.name, p.detail);
                    }
                    println!("artifacts in {}", summary.out_dir.display());
                    Ok(())
                }
                Err(RunError::Config(e)) => Err((2, e.to_string())),
                Err(e) => Err((1, e.to_string())),
            }
        }
        Command::Verify { filter } => {
            let results = run_properties(filter.as_deref());
            if results.is_empty() {
                return Err((2, format!("no property matches {:?}", filter.unwrap_or_default())));
            }
            for p in &results {
                println!(
                    "{} {:<22} {} ({:.2}s)",
                    if p.passed { "PASS" } else { "FAIL" },
                    p.name,
                    p.detail,
                    p.seconds
                );
            }
            let failed = results.iter().filter(|p| !p.passed).count();
            if failed > 0 {
                return Err((1, format!("{failed} of {} properties failed", results.len())));
            }
            Ok(())
        }
        Command::Enumerate { snapshot } => {
            let text = std::fs::read_to_string(&snapshot)
                .map_err(|e| (1, format!("{}: {e}", snapshot.display())))?;
            let snap: ModelSnapshot = serde_json::from_str(&text)
                .map_err(|e| (2, format!("{}: {e}", snapshot.display())))?;
            let table = exact_distribution(&snap.model, snap.control.as_ref()).map_err(|e| (1, e.to_string()))?;
            println!("sequence,probability");
            for (seq, p) in table.sequences() {
                let s: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
                println!("{},{p}", s.join(" "));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
