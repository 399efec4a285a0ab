//! `decsgd` command line: run, sweep, validate, and preset execution.
//!
//! Exit codes: 0 success, 1 invariant/numeric failure, 2 config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use decsgd::runner::{self, preset};
use decsgd::Error;

/// Environment variable naming the default output root.
const OUT_ROOT_ENV: &str = "DECSGD_OUT";

#[derive(Parser)]
#[command(name = "decsgd", version, about = "Decentralized momentum SGD simulation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a single run from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override config keys, e.g. --set optim.eta=0.01
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (default: `$DECSGD_OUT/<config-stem>` or `./decsgd-out/<config-stem>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a config without running anything.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the cartesian product of a grid file over a base config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Independent seeds per cell (overrides the config's `repeats`).
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in presets, or execute one by name.
    Preset {
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("decsgd-out"))
}

fn default_out(stem: &Path, suffix: &str) -> PathBuf {
    let stem = stem
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    out_root().join(format!("{stem}{suffix}"))
}

fn load_table(config: &Path, set: &[String]) -> Result<toml::Table, Error> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", config.display())))?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: parse error: {e}", config.display())))?;
    runner::apply_overrides(&mut table, set)?;
    Ok(table)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, set, out } => {
            let table = load_table(&config, &set)?;
            let cfg = runner::resolve(&table)?;
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| default_out(&config, ""));
            let outcome = runner::run(&cfg, Some(&dir))?;
            let s = &outcome.summary;
            println!(
                "t={} f_bar={:.6e} grad_norm_sq={:.6e} consensus={:.3e} bits={} violations={} wall_ms={}",
                s.final_t,
                s.final_f_bar,
                s.final_grad_norm_sq,
                s.final_consensus,
                s.total_comm_bits,
                s.total_violations,
                s.wall_ms
            );
            if let Some(t) = s.aborted_at {
                eprintln!("run aborted at iteration {t} (non-finite state); partial outputs kept");
            }
            println!("outputs: {}", dir.display());
            Ok(ExitCode::from(outcome.exit_code() as u8))
        }
        Command::Check { config, set } => {
            let table = load_table(&config, &set)?;
            let cfg = runner::resolve(&table)?;
            print!("{}", cfg.render_resolved(None));
            println!("# config OK");
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, grid, repeats, set, out } => {
            let table = load_table(&config, &set)?;
            let grid_text = std::fs::read_to_string(&grid)
                .map_err(|e| Error::Config(format!("cannot read grid `{}`: {e}", grid.display())))?;
            let grid = runner::load_grid(&grid_text)?;
            let dir = out.unwrap_or_else(|| default_out(&config, "-sweep"));
            let outcome = runner::sweep(&table, &grid, &dir, repeats)?;
            println!(
                "{} cells x repeats -> {} runs; aggregate: {}",
                outcome.cells,
                outcome.rows.len(),
                dir.join("aggregate.csv").display()
            );
            let strict = runner::resolve(&table).map(|c| c.optim.strict).unwrap_or(false);
            Ok(ExitCode::from(outcome.exit_code(strict) as u8))
        }
        Command::Preset { name, out } => match name {
            None => {
                for p in preset::all() {
                    println!("{:15} {}", p.name, p.description);
                }
                Ok(ExitCode::SUCCESS)
            }
            Some(name) => {
                let dir = out.unwrap_or_else(|| out_root().join(format!("preset-{name}")));
                let outcome = preset::run_preset(&name, &dir)?;
                println!(
                    "preset `{name}`: {} runs; aggregate: {}",
                    outcome.rows.len(),
                    dir.join("aggregate.csv").display()
                );
                Ok(ExitCode::from(outcome.exit_code(false) as u8))
            }
        },
    }
}
