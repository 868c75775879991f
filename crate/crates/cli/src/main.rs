//! `camguard` — run, compare and inspect poisoning-defense experiments.
//!
//! Settings are resolved as: command-line flag, then config file, then the
//! built-in defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use camguard::config::{DefenseKind, ExperimentConfig};
use camguard::harness::{self, RunManifest, SummaryRow};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "camguard", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Overrides),
    /// Run the same experiment under several defenses.
    Compare {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated defenses; all of them when omitted.
        #[arg(long, value_delimiter = ',')]
        defenses: Vec<DefenseKind>,
    },
    /// Pretty-print a run manifest (file or run directory).
    Inspect { path: PathBuf },
}

#[derive(Args)]
struct Overrides {
    /// TOML config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    defense: Option<DefenseKind>,
    /// Number of malicious clients.
    #[arg(long)]
    attackers: Option<usize>,
    /// Communication rounds.
    #[arg(long)]
    rounds: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(d) = self.defense {
            cfg.defense.method = d;
        }
        if let Some(k) = self.attackers {
            cfg.topology.attackers = k;
        }
        if let Some(t) = self.rounds {
            cfg.training.rounds = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_table(rows: &[SummaryRow]) {
    println!("{}", SummaryRow::CSV_HEADER);
    for r in rows {
        println!("{}", r.csv_line());
    }
}

fn inspect(path: &Path) -> Result<()> {
    let file = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let m = RunManifest::read(&file).with_context(|| format!("reading {}", file.display()))?;
    println!("method       {}", m.method);
    println!("status       {:?}", m.status);
    println!("seed         {}", m.seed);
    println!("config hash  {}", m.config_hash);
    println!("build        {}", m.build);
    println!(
        "rounds       {}/{}",
        m.rounds_completed, m.config.training.rounds
    );
    if let Some(r) = m.failed_round {
        println!("failed at    round {r}");
    }
    if let Some(e) = &m.error {
        println!("error        {e}");
    }
    if let Some(s) = &m.summary {
        println!();
        print_table(std::slice::from_ref(s));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(o) => {
            let cfg = o.resolve()?;
            log::info!(
                "running {} into {}",
                cfg.defense.method,
                cfg.output_dir.display()
            );
            let m = harness::run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&m.summary)?);
        }
        Command::Compare {
            overrides,
            defenses,
        } => {
            let cfg = overrides.resolve()?;
            let list = if defenses.is_empty() {
                DefenseKind::ALL.to_vec()
            } else {
                defenses
            };
            let rows = harness::compare_defenses(&cfg, &list)?;
            print_table(&rows);
        }
        Command::Inspect { path } => inspect(&path)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
