use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hm4_cli::{
    cluster_store, emit_report, encode_to_store, run_baseline, run_scenario, ScenarioConfig,
};
use hm4_core::Error;

#[derive(Parser)]
#[command(
    name = "hm4",
    version,
    about = "Memory-bounded visual place recognition over growing image-sequence databases"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-tiered scenario and write reports
    Run {
        /// Scenario config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full-database comparison arm and write reports
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Encode the database sequences of a config into a store directory
    Encode {
        /// Scenario config (JSON); `--descriptors` / `--synthetic` override
        /// its world source
        #[arg(long)]
        config: Option<PathBuf>,
        /// Descriptor file to encode as the database
        #[arg(long, conflicts_with = "synthetic")]
        descriptors: Option<PathBuf>,
        /// Synthetic world config (JSON) to generate and encode
        #[arg(long)]
        synthetic: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the coarse model (clusters, centroids, submap) for a store
    Cluster {
        /// Store directory produced by `encode` or `run`
        #[arg(long)]
        store: PathBuf,
        /// Number of clusters
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 12)]
        iters: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Replace the store's topological map with this map file first
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Print a digest of a previously written report directory
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_encode_config() -> ScenarioConfig {
    ScenarioConfig {
        world: hm4_cli::WorldSource::Descriptors(hm4_cli::DescriptorWorld {
            database: Vec::new(),
            queries: Vec::new(),
            positions: None,
            renormalize: false,
        }),
        params: Default::default(),
        update_after_each_sequence: true,
        thresholds_m: (1..=25).map(|m| m as f64).collect(),
        out_dir: None,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out, seed } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            let out = cfg.resolve_out_dir(out.as_deref())?;
            let report = run_scenario(&cfg, &out)?;
            emit_report(&report, &out)?;
            print!("{}", hm4_cli::report::format_summary(&out)?);
            Ok(())
        }
        Command::Baseline { config, out, seed } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            let out = cfg.resolve_out_dir(out.as_deref())?;
            let report = run_baseline(&cfg, &out)?;
            emit_report(&report, &out)?;
            print!("{}", hm4_cli::report::format_summary(&out)?);
            Ok(())
        }
        Command::Encode {
            config,
            descriptors,
            synthetic,
            out,
            seed,
        } => {
            if config.is_none() && descriptors.is_none() && synthetic.is_none() {
                return Err(Error::InvalidArgument(
                    "encode needs --config, --descriptors or --synthetic".into(),
                ));
            }
            let mut cfg = match &config {
                Some(p) => ScenarioConfig::load(p)?,
                None => default_encode_config(),
            };
            if let Some(path) = descriptors {
                cfg.world = hm4_cli::WorldSource::Descriptors(hm4_cli::DescriptorWorld {
                    database: vec![path],
                    queries: Vec::new(),
                    positions: None,
                    renormalize: false,
                });
            } else if let Some(path) = synthetic {
                let raw = std::fs::read(&path).map_err(|e| Error::Storage {
                    path: path.clone(),
                    source: e,
                })?;
                let world_cfg = serde_json::from_slice(&raw)
                    .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
                cfg.world = hm4_cli::WorldSource::Synthetic(world_cfg);
            }
            if let Some(s) = seed {
                cfg.override_seed(s);
            }
            cfg.validate()?;
            encode_to_store(&cfg, &out)?;
            println!("encoded database into {}", out.display());
            Ok(())
        }
        Command::Cluster {
            store,
            k,
            iters,
            seed,
            map,
        } => {
            cluster_store(&store, k, iters, seed, map.as_deref())?;
            println!(
                "coarse model with {k} clusters written to {}",
                store.display()
            );
            Ok(())
        }
        Command::Report { out } => {
            print!("{}", hm4_cli::report::format_summary(&out)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InvalidArgument(_) | Error::Format { .. } => 2,
                Error::Storage { .. } | Error::NotFound(_) => 3,
                Error::LostState => 1,
            };
            ExitCode::from(code)
        }
    }
}
