use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use semiclab::scenarios::{list_scenarios_json, registry, run_scenario, ScenarioConfig};
use semiclab::LabError;

/// Reproducible semiclassical experiments.
#[derive(Parser)]
#[command(name = "semiclab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<String>,
        /// Worker threads (overrides the config).
        #[arg(long)]
        workers: Option<usize>,
        /// Seed for randomized relative phases (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` edits of the config document; dotted keys reach into `params`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List registered scenarios.
    List {
        /// Print the registry as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn run(config: PathBuf, out: Option<String>, workers: Option<usize>, seed: Option<u64>, mut overrides: Vec<String>) -> ExitCode {
    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config.display());
            return ExitCode::from(2);
        }
    };
    // flags win over both the file and --override
    if let Some(o) = out {
        overrides.push(format!("out={}", serde_json::Value::String(o)));
    }
    if let Some(w) = workers {
        overrides.push(format!("workers={w}"));
    }
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = match ScenarioConfig::from_json(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_scenario(&cfg) {
        Ok(m) => {
            for c in &m.checks {
                println!("{} {} {} {:e} (measured {:e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.relation, c.threshold, c.value);
            }
            if let Some(e) = &m.error {
                println!("FAIL scenario error: {e}");
            }
            println!("{} {} in {:.1}s, manifest at {}/manifest.json", m.scenario, if m.pass { "passed" } else { "failed" }, m.wall_seconds, cfg.out);
            if m.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ LabError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, workers, seed, overrides } => run(config, out, workers, seed, overrides),
        Command::List { json } => {
            if json {
                println!("{}", serde_json::to_string_pretty(&list_scenarios_json()).expect("listing serializes"));
            } else {
                for s in registry() {
                    println!("{:<28} {}  [{}]", s.name, s.summary, s.anchor);
                }
            }
            ExitCode::SUCCESS
        }
    }
}
