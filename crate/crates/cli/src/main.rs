use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use sparsefed_cli::{cost_report, execute_run, execute_sweep, init_workers, load_config, CostOptions};
use sparsefed_core::cost::CostModel;

#[derive(Parser)]
#[command(name = "sparsefed", version, about = "Sparse federated training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config field, e.g. `--set data.alpha=0.1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Run a grid over one config axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = ["density", "alpha", "pool_size", "granularity", "seed"])]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Storage, memory, and FLOPs of a checkpoint.
    Cost {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 32)]
        bits: u32,
        /// dense, static_sparse, prunefl, or fedtiny. Defaults to the
        /// checkpoint's algorithm.
        #[arg(long)]
        model: Option<CostModel>,
        /// Local samples per epoch.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        /// Batch size used for activation memory.
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0.0)]
        extra_flops: f64,
        #[arg(long, default_value_t = 0)]
        topk_entries: usize,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    init_workers()?;
    match cli.command {
        Command::Run { config, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let (manifest, summary) = execute_run(&cfg, &out)?;
            println!("{}", manifest.out_dir.display());
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Sweep { config, axis, values, overrides, out } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("cannot read config {}", config.display()))?;
            let rows = execute_sweep(&text, &overrides, &axis, &values, &out)?;
            for r in rows {
                println!(
                    "{}={} acc={:.4} density={:.4} -> {}",
                    r.axis, r.value, r.summary.final_accuracy, r.summary.final_density, r.summary.run_id
                );
            }
        }
        Command::Cost { ckpt, bits, model, samples, epochs, batch, extra_flops, topk_entries } => {
            let rec = cost_report(
                &ckpt,
                &CostOptions { bits, model, samples, epochs, batch, extra_flops, topk_entries },
            )?;
            println!("{}", serde_json::to_string_pretty(&rec)?);
        }
    }
    Ok(())
}
