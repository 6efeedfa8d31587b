use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use cvslam::config::RunConfig;
use cvslam::sim;

#[derive(Parser)]
#[command(
    name = "cvslam",
    about = "Cooperative vehicle localization experiments over multipath virtual transmitters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the vehicle-density experiment grid and write CSV results.
    Run(RunArgs),
    /// Run the building-density sweep (gaps x densities x seeds).
    Sweep(RunArgs),
    /// Write the default configuration file.
    InitConfig {
        /// Destination path for the TOML file.
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the seed list, e.g. --seeds 1,2,3.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the density list, e.g. --densities 1,4.
    #[arg(long, value_delimiter = ',')]
    densities: Option<Vec<usize>>,
    /// Override the slot count.
    #[arg(long)]
    slots: Option<u64>,
    /// Override the sweep gap list (sweep only), e.g. --gaps 6,24,inf.
    #[arg(long, value_delimiter = ',')]
    gaps: Option<Vec<f64>>,
}

impl RunArgs {
    fn load_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(seeds) = &self.seeds {
            cfg.run.seeds = seeds.clone();
        }
        if let Some(densities) = &self.densities {
            cfg.run.densities = densities.clone();
            cfg.sweep.densities = densities.clone();
        }
        if let Some(slots) = self.slots {
            cfg.run.slots = slots;
        }
        if let Some(gaps) = &self.gaps {
            cfg.sweep.gaps = gaps.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = args.load_config()?;
            let cells = cfg.run.densities.len() * cfg.run.seeds.len();
            eprintln!(
                "running {cells} cells ({} densities x {} seeds, {} slots)",
                cfg.run.densities.len(),
                cfg.run.seeds.len(),
                cfg.run.slots
            );
            let results = sim::run_grid(&cfg)?;
            sim::write_csv(&results, &args.out)?;
            for cell in &results {
                eprintln!(
                    "density {:>2} seed {:>4}: vehicle MAE {:.3} m, q80 {:.3} m",
                    cell.density, cell.seed, cell.vehicle_mae, cell.vehicle_q80
                );
            }
            println!("wrote {}", args.out.display());
        }
        Command::Sweep(args) => {
            let cfg = args.load_config()?;
            let cells = cfg.sweep.gaps.len() * cfg.sweep.densities.len() * cfg.run.seeds.len();
            eprintln!(
                "running {cells} sweep cells ({} gaps x {} densities x {} seeds)",
                cfg.sweep.gaps.len(),
                cfg.sweep.densities.len(),
                cfg.run.seeds.len()
            );
            let results = sim::run_sweep_grid(&cfg)?;
            sim::write_sweep_csv(&results, &args.out)?;
            println!("wrote {}", args.out.display());
        }
        Command::InitConfig { path } => {
            let cfg = RunConfig::default();
            std::fs::write(&path, cfg.to_toml())
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
