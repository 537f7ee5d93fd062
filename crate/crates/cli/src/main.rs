#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod scenarios;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::{Scenario, ScenarioConfig};
use corrlab_core::correlation::write_reports;
use serde_json::json;
use sha2::{Digest, Sha256};

const EXIT_VALIDATION: u8 = 2;
const EXIT_CHECK: u8 = 3;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "corrlab", version, about = "Noise cross-correlation scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Exit with status 3 when any check fails.
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the available scenarios.
    List,
    /// Validate a config (or an emitted manifest) without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path) -> Result<ScenarioConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = ScenarioConfig::parse(&text).map_err(|e| e.0)?;
    if let Ok(seed) = std::env::var("CORRLAB_SEED") {
        cfg.seed = seed.trim().parse().map_err(|_| format!("CORRLAB_SEED={seed} is not an unsigned integer"))?;
    }
    Ok(cfg)
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(format!("{:x}", Sha256::digest(std::fs::read(path)?)))
}

fn run(cfg: ScenarioConfig, strict: bool, workers: usize, out: Option<PathBuf>) -> ExitCode {
    let Some(dir) = out.or_else(|| cfg.output.clone()) else {
        eprintln!("error: no output directory (pass --out or set `output`)");
        return ExitCode::from(EXIT_VALIDATION);
    };
    if workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(EXIT_VALIDATION);
    }
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: {}: {e}", dir.display());
        return ExitCode::from(EXIT_RUNTIME);
    }
    let outcome = match scenarios::run(&cfg, &dir, workers) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {}: {e}", cfg.scenario.name());
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let pass = outcome.checks.iter().all(|c| c.pass);
    let result = (|| -> Result<(), String> {
        write_reports(&dir.join("checks.json"), &outcome.checks).map_err(|e| e.to_string())?;
        let report = json!({
            "scenario": cfg.scenario.name(),
            "pass": pass,
            "checks": outcome.checks,
            "summary": outcome.summary,
        });
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report).unwrap()).map_err(|e| e.to_string())?;
        let mut files = serde_json::Map::new();
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        for n in names {
            files.insert(n.clone(), json!(sha256_file(&dir.join(&n)).map_err(|e| e.to_string())?));
        }
        let manifest = json!({
            "config_hash": cfg.hash(),
            "seed": cfg.seed,
            "workers": workers,
            "versions": {
                "corrlab-core": corrlab_core::VERSION,
                "corrlab-cli": env!("CARGO_PKG_VERSION"),
            },
            "files": files,
            "config": cfg,
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest).unwrap())
            .map_err(|e| e.to_string())
    })();
    if let Err(e) = result {
        eprintln!("error: writing artifacts: {e}");
        return ExitCode::from(EXIT_RUNTIME);
    }
    for c in &outcome.checks {
        println!("{:<40} {:>12.3e} {:>12.3e}  {}", c.test, c.residual, c.tolerance, if c.pass { "PASS" } else { "FAIL" });
    }
    println!("{}: {} ({})", cfg.scenario.name(), if pass { "PASS" } else { "FAIL" }, dir.display());
    if strict && !pass {
        ExitCode::from(EXIT_CHECK)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for s in Scenario::ALL {
                println!("{:<28} {}", s.name(), s.reproduces());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!("ok: {} (config hash {})", cfg.scenario.name(), cfg.hash());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("validation error: {e}");
                ExitCode::from(EXIT_VALIDATION)
            }
        },
        Command::Run { config, strict, workers, out } => match load(&config) {
            Ok(cfg) => run(cfg, strict, workers, out),
            Err(e) => {
                eprintln!("validation error: {e}");
                ExitCode::from(EXIT_VALIDATION)
            }
        },
    }
}
