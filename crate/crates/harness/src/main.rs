use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isapt_harness::commands::{self, Outcome, CONFIG_ERROR_EXIT};
use isapt_harness::config::{load_config, ExperimentConfig, Profile};
use isapt_harness::HarnessError;

/// Pulse and beamforming design for integrated sensing and power transfer.
#[derive(Parser)]
#[command(name = "isapt", version)]
struct Cli {
    /// TOML file overriding the profile.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base parameter set.
    #[arg(long, global = true, default_value = "table1")]
    profile: String,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<String>,
    /// Number of channel realizations.
    #[arg(long, global = true, value_name = "N")]
    seeds: Option<u64>,
    /// Seed of the first realization.
    #[arg(long = "base-seed", global = true, value_name = "K")]
    base_seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, value_name = "J")]
    parallel: Option<usize>,
    /// proposed, baseline or both.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Override any configuration key, e.g. `--set solver.n_tau=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design for a single channel realization.
    Solve {
        /// Channel seed; defaults to the base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Harvested power against pulse duration for each average-power budget.
    Fig2,
    /// Harvested power against the accuracy target, both schemes.
    Fig3,
    /// Product of the `sweep` axes.
    Sweep,
    /// Admissible pulse window and grid.
    Feasibility,
    /// Harvester output power over a log-spaced input grid.
    EhCurve {
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Smallest input power in W.
        #[arg(long, default_value_t = 1e-9)]
        from: f64,
    },
    /// Print the resolved configuration and its hash.
    Config,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, isapt_harness::config::ConfigError> {
    let profile: Profile = cli.profile.parse()?;
    let mut sets = Vec::new();
    if let Some(v) = &cli.out {
        sets.push(format!("output.dir={}", toml_string(v)));
    }
    if let Some(v) = cli.seeds {
        sets.push(format!("run.realizations={v}"));
    }
    if let Some(v) = cli.base_seed {
        sets.push(format!("run.base_seed={v}"));
    }
    if let Some(v) = cli.parallel {
        sets.push(format!("run.parallel={v}"));
    }
    if let Some(v) = &cli.scheme {
        sets.push(format!("run.scheme={}", toml_string(v)));
    }
    sets.extend(cli.set.iter().cloned());
    load_config(cli.config.as_deref(), profile, &sets)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn run(cli: &Cli, config: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    match &cli.command {
        Command::Config => {
            println!("# config_sha256 = {}\n{}", config.hash(), config.to_toml());
            Ok(Outcome::Success)
        }
        Command::Feasibility => {
            let f = commands::feasibility(config);
            let text = f.to_csv();
            let dir = PathBuf::from(&config.output.dir);
            std::fs::create_dir_all(&dir).map_err(|source| HarnessError::Io { path: dir.display().to_string(), source })?;
            let path = dir.join("feasibility.csv");
            std::fs::write(&path, &text).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
            print!("{text}");
            Ok(if f.is_feasible() { Outcome::Success } else { Outcome::Infeasible })
        }
        Command::EhCurve { points, from } => {
            let curve = commands::eh_curve(config, *from, *points)?;
            let path = commands::write_eh_curve(config, &curve)?;
            eprintln!("wrote {}", path.display());
            Ok(Outcome::Success)
        }
        Command::Solve { seed } => {
            let out = commands::run_solve(config, seed.unwrap_or(config.run.base_seed))?;
            print!("{}", out.report);
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
            Ok(out.outcome)
        }
        Command::Fig2 | Command::Fig3 | Command::Sweep => {
            let out = match cli.command {
                Command::Fig2 => commands::run_fig2(config)?,
                Command::Fig3 => commands::run_fig3(config)?,
                _ => commands::run_sweep(config)?,
            };
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
            let failures = out.runs.numerical_failures();
            if failures > 0 {
                eprintln!("{failures} grid points hit a numerical failure and are marked in the per-seed file");
            }
            eprintln!("{:.1} s on {} threads", out.runs.elapsed.as_secs_f64(), out.runs.threads);
            Ok(out.outcome)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(CONFIG_ERROR_EXIT);
        }
    };
    match run(&cli, &config) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(HarnessError::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(CONFIG_ERROR_EXIT)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
