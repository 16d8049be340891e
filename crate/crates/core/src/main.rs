use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpme::check::run_suite;
use gpme::cli::{cmd_run, cmd_stencil, cmd_study, error_record, exit_code, load_config};
use gpme::config::RunConfig;
use gpme::{GpmeError, Result};

#[derive(Parser)]
#[command(name = "gpme", version, about = "Implicit monotone schemes for generalized porous medium equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset instead of a file.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Source {
    fn load(&self) -> Result<RunConfig> {
        load_config(self.config.as_deref(), self.preset.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// March one configuration and write trajectory, ledger and tail reports.
    Run {
        #[command(flatten)]
        source: Source,
        /// Validate and echo the configuration without computing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Refinement study over h, h/2, ….
    Study {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 3)]
        levels: u32,
    },
    /// Run a built-in property suite: moments, resolvent, evolution,
    /// equitightness or all.
    Check {
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Dump the operator stencil and its moment sums.
    Stencil {
        #[command(flatten)]
        source: Source,
    },
    /// List the shipped presets.
    Presets,
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("GPME_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| GpmeError::config("GPME_THREADS", format!("expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| GpmeError::InvalidInput(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Run { source, dry_run } => cmd_run(&source.load()?, source.out.as_deref(), dry_run)?,
        Command::Study { source, levels } => cmd_study(&source.load()?, levels, source.out.as_deref())?,
        Command::Stencil { source } => cmd_stencil(&source.load()?, source.out.as_deref())?,
        Command::Check { suite } => {
            let outcomes = run_suite(&suite)?;
            let mut ok = true;
            for o in &outcomes {
                println!("{} {} (slack {:e})", if o.pass { "PASS" } else { "FAIL" }, o.name, o.slack);
                ok &= o.pass;
            }
            println!("{} of {} properties passed", outcomes.iter().filter(|o| o.pass).count(), outcomes.len());
            return Ok(ok);
        }
        Command::Presets => {
            for (name, _) in gpme::config::PRESETS {
                println!("{name}");
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
