mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{parse_config, RunConfig, Scale};

#[derive(Parser)]
#[command(name = "pprl", version, about = "Privacy-preserving record linkage experiments")]
struct Cli {
    /// Flat key=value parameter file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    scale: Scale,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace recovered plaintexts in attack reports with fingerprints.
    #[arg(long, global = true)]
    redact: bool,
    /// HMAC key file (`key_id:hex` lines); the first key is used.
    #[arg(long, global = true)]
    key_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a population and optional distorted copies.
    Generate,
    /// Build the linkage-key index and its uniqueness report.
    Derive {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Link queries against an index and score the decisions.
    Link {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Index snapshot written by `derive`.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Bloom-filter uniformity, over-estimation and parameter sweep.
    Bloom,
    /// Dictionary, frequency, bucket-reversal and linkage-key probe attacks.
    Attack,
    /// Truncated-HMAC and frequency-smoothed bucket tables.
    Lossy,
    /// Encrypted linkage file and decrypt-then-link demo.
    Envelope {
        /// Also split the linker's private key and write the shares here.
        #[arg(long)]
        shares_out: Option<PathBuf>,
    },
    /// Run every experiment at the chosen scale.
    Repro,
    /// Write the bundled frequency tables.
    Tables,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let params = match &cli.config {
        Some(p) => parse_config(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => BTreeMap::new(),
    };
    let (name, allowed): (&'static str, &[&str]) = match &cli.command {
        Command::Generate => ("generate", commands::GENERATE_KEYS),
        Command::Derive { .. } => ("derive", commands::DERIVE_KEYS),
        Command::Link { .. } => ("link", commands::LINK_KEYS),
        Command::Bloom => ("bloom", commands::BLOOM_KEYS),
        Command::Attack => ("attack", commands::ATTACK_KEYS),
        Command::Lossy => ("lossy", commands::LOSSY_KEYS),
        Command::Envelope { .. } => ("envelope", commands::ENVELOPE_KEYS),
        Command::Repro => ("repro", &[]),
        Command::Tables => ("tables", &[]),
    };
    let cfg = RunConfig::new(name, allowed, cli.scale, cli.seed, cli.out, cli.redact, cli.key_file, params)?;
    match &cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Derive { input } => commands::derive(&cfg, input.as_deref()),
        Command::Link { input, queries, index } => {
            commands::link(&cfg, input.as_deref(), queries.as_deref(), index.as_deref())
        }
        Command::Bloom => commands::bloom(&cfg),
        Command::Attack => commands::attack(&cfg),
        Command::Lossy => commands::lossy(&cfg),
        Command::Envelope { shares_out } => commands::envelope(&cfg, shares_out.as_deref()),
        Command::Repro => commands::repro(&cfg),
        Command::Tables => commands::tables(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
