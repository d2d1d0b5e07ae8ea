use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use ino_cli::{bench_all, harvest, open_repository, serve, BenchOptions, Config, HarvestError, HarvestOptions, HttpSource};
use ino_core::corpus::{generate_with, CorpusProfile};
use ino_core::object_store::{Durability, StoreOptions};
use ino_core::{SystemClock, VirtualClock};

#[derive(Parser)]
#[command(name = "ino", version, about = "Information network overlay repository")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Target {
    /// key=value configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Data directory; overrides the config file's `dataDir`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl Target {
    fn resolve(&self) -> anyhow::Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        match (&self.data_dir, &self.config) {
            (Some(d), _) => cfg.data_dir = d.clone(),
            (None, None) => anyhow::bail!("either --config or --data-dir is required"),
            _ => {}
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Serve the REST API and /oai until interrupted.
    Serve {
        #[command(flatten)]
        target: Target,
        /// Overrides the config file's `port`.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Ingest records from an OAI-PMH provider.
    Harvest {
        #[command(flatten)]
        target: Target,
        /// Base URL of the provider's OAI-PMH endpoint.
        base_url: String,
        #[arg(long, default_value = "oai_dc")]
        metadata_prefix: String,
        #[arg(long)]
        set: Option<String>,
        #[arg(long)]
        from: Option<String>,
    },
    /// Load a seeded synthetic corpus into an empty repository.
    Generate {
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value_t = 1000)]
        resources: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.75)]
        metadata_per_resource: f64,
    },
    /// Load a corpus into a fresh directory and print the benchmark report.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        resources: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fresh directory to load into; a temporary one by default.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 5)]
        harvest_trials: usize,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Skip fsync on commit during ingest.
        #[arg(long)]
        no_sync: bool,
        /// Print details alongside the report.
        #[arg(long)]
        verbose: bool,
    },
    /// Check every object against the ontology and structural invariants.
    Audit {
        #[command(flatten)]
        target: Target,
    },
    /// Rebuild the triple index from the object store.
    RebuildIndex {
        #[command(flatten)]
        target: Target,
    },
    /// Rebuild the OAI-PMH record cache from the triple index.
    RebuildOaiCache {
        #[command(flatten)]
        target: Target,
    },
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Serve { target, port } => {
            let mut cfg = target.resolve()?;
            if let Some(p) = port {
                cfg.port = p;
            }
            serve(&cfg)?;
        }
        Command::Harvest {
            target,
            base_url,
            metadata_prefix,
            set,
            from,
        } => {
            let cfg = target.resolve()?;
            let (repo, oai) = open_repository(&cfg, StoreOptions::default(), Arc::new(SystemClock))?;
            let source = HttpSource::new(&base_url)?;
            let opts = HarvestOptions {
                metadata_prefix,
                set,
                from,
            };
            let result = harvest(&repo, &source, &opts);
            oai.sync()?;
            repo.persist()?;
            oai.persist()?;
            match result {
                Ok(report) => println!("{}", serde_json::to_string_pretty(&report)?),
                Err(HarvestError::PartialIngest(report)) => {
                    println!("{}", serde_json::to_string_pretty(&report)?);
                    eprintln!("{} records failed", report.failures.len());
                    return Ok(ExitCode::from(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Generate {
            target,
            resources,
            seed,
            metadata_per_resource,
        } => {
            let cfg = target.resolve()?;
            let mut profile = CorpusProfile::new(resources, seed);
            profile.metadata_per_resource = metadata_per_resource;
            let options = StoreOptions {
                durability: Durability::NoSync,
                ..Default::default()
            };
            let (repo, oai) = open_repository(&cfg, options, Arc::new(VirtualClock::default()))?;
            let total = profile.total_objects();
            let (stats, _) = generate_with(&repo, &profile, |n| tracing::info!("{n}/{total} objects"))?;
            oai.sync()?;
            repo.persist()?;
            oai.persist()?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Bench {
            resources,
            seed,
            dir,
            trials,
            harvest_trials,
            concurrency,
            no_sync,
            verbose,
        } => {
            let tmp;
            let dir = match dir {
                Some(d) => d,
                None => {
                    tmp = tempfile::tempdir()?;
                    tmp.path().to_path_buf()
                }
            };
            let mut opts = BenchOptions::new(CorpusProfile::new(resources, seed));
            opts.trials = trials;
            opts.harvest_trials = harvest_trials;
            opts.concurrency = concurrency;
            if no_sync {
                opts.durability = Durability::NoSync;
            }
            let outcome = bench_all(&dir, &opts)?;
            if verbose {
                println!("{}", serde_json::to_string_pretty(&outcome)?);
            } else {
                println!("{}", serde_json::to_string_pretty(&outcome.report)?);
            }
        }
        Command::Audit { target } => {
            let cfg = target.resolve()?;
            let (repo, _) = open_repository(&cfg, StoreOptions::default(), Arc::new(SystemClock))?;
            let report = repo.audit()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.is_clean() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::RebuildIndex { target } => {
            let cfg = target.resolve()?;
            let (repo, _) = open_repository(&cfg, StoreOptions::default(), Arc::new(SystemClock))?;
            repo.index().rebuild(repo.store()).context("rebuilding the triple index")?;
            repo.persist()?;
            println!("{} triples at seq {}", repo.index().len(), repo.index().seq());
        }
        Command::RebuildOaiCache { target } => {
            let cfg = target.resolve()?;
            let (_, oai) = open_repository(&cfg, StoreOptions::default(), Arc::new(SystemClock))?;
            let stats = oai.rebuild()?;
            oai.persist()?;
            println!("{} records in {:.3}s", stats.records, stats.elapsed_secs);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
