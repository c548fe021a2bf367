use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spcyl::config::{RunConfig, DEFAULT_CONFIG};
use spcyl::driver::{self, EXIT_CONFIG};

#[derive(Parser)]
#[command(
    name = "spcyl",
    version,
    about = "Odd cylindrically symmetric solutions of a Schrödinger-Poisson system"
)]
struct Cli {
    /// Log level used when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration. Without a file the bundled default is used.
    Solve {
        config: Option<PathBuf>,
        /// Output directory, overriding the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every `*.toml` of a directory and merge the results into sweep.csv.
    Sweep {
        config_dir: PathBuf,
        /// Root for the per-run directories and sweep.csv [default: <config-dir>/sweep_out].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run the configurations concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Print the bundled default configuration.
    DefaultConfig,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(u8::try_from(c).unwrap_or(1))
}

fn solve(config: Option<PathBuf>, output: Option<PathBuf>) -> ExitCode {
    let loaded = match &config {
        Some(p) => RunConfig::load(p),
        None => RunConfig::from_toml_with(DEFAULT_CONFIG, std::env::vars()),
    };
    let mut cfg = match loaded {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return code(EXIT_CONFIG);
        }
    };
    if let Some(o) = output {
        cfg.output = std::path::absolute(o).unwrap_or_default();
    }
    let outcome = driver::run(&cfg);
    let s = &outcome.summary;
    match &s.reason {
        None => println!(
            "ok: m_q <= {:.8}, lambda = {:.6}, q_eff = {:.4e}, residual_u = {:.2e}, cc = {}, output in {}",
            s.m_q_upper.unwrap_or(f64::NAN),
            s.lambda.unwrap_or(f64::NAN),
            s.q_eff.unwrap_or(f64::NAN),
            s.residual_u.unwrap_or(f64::NAN),
            s.cc_class.as_deref().unwrap_or("-"),
            outcome.output_dir.display()
        ),
        Some(r) => eprintln!("failed at {} ({}): {}", r.stage, r.tag, r.message),
    }
    code(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .init();
    match cli.command {
        Command::Solve { config, output } => solve(config, output),
        Command::Sweep {
            config_dir,
            out,
            parallel,
        } => {
            let out = out.unwrap_or_else(|| config_dir.join("sweep_out"));
            match driver::sweep(&config_dir, &out, parallel) {
                Ok(o) => {
                    println!("{} runs, results in {}", o.rows.len(), o.csv_path.display());
                    code(o.exit_code)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(EXIT_CONFIG)
                }
            }
        }
        Command::DefaultConfig => {
            print!("{DEFAULT_CONFIG}");
            ExitCode::SUCCESS
        }
    }
}
