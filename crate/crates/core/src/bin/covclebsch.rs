use std::fmt::Write as _;
use std::io::{self, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use covclebsch::cli::{self, Order, ScenarioKind};
use covclebsch::{Error, ErrorCategory};

#[derive(Parser)]
#[command(name = "covclebsch", version, about = "Covariant Clebsch strand and peakon solvers")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trajectory and diagnostics
    Run { config: PathBuf },
    /// Run a scenario at successive (dt, ds) halvings and report refinement orders
    Study {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: u32,
    },
    /// List the available scenarios and their presets
    ListScenarios,
    /// Parse and validate a config, printing it with defaults applied
    Validate { config: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Parse | ErrorCategory::Validation | ErrorCategory::InvalidArgument => 2,
        ErrorCategory::Io | ErrorCategory::NearCollision | ErrorCategory::BlowUp | ErrorCategory::Numerical => 1,
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match dispatch(args.command) {
        Ok(text) => {
            // A closed downstream pipe (`| head`) is not a failure of the command.
            match io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
                    eprintln!("error[io]: stdout: {e}");
                    ExitCode::from(1)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> covclebsch::Result<String> {
    let mut out = String::new();
    match cmd {
        Command::Run { config } => {
            let cfg = cli::load_config(&config)?;
            for p in cli::run(&cfg)?.paths {
                writeln!(out, "wrote {}", p.display()).unwrap();
            }
        }
        Command::Study { config, levels } => {
            let cfg = cli::load_config(&config)?;
            let (table, path) = cli::study(&cfg, levels)?;
            for (name, orders) in &table.orders {
                let cells: Vec<String> = orders
                    .iter()
                    .map(|o| match o {
                        Order::Measured(x) => format!("{x:.3}"),
                        Order::Saturated(s) => s.to_string(),
                    })
                    .collect();
                writeln!(out, "{name}: {}", cells.join(" ")).unwrap();
            }
            writeln!(out, "wrote {}", path.display()).unwrap();
        }
        Command::ListScenarios => {
            for k in ScenarioKind::ALL {
                writeln!(out, "{:<16} {}", k.name(), k.description()).unwrap();
            }
        }
        Command::Validate { config } => {
            let cfg = cli::load_config(&config)?;
            let json = serde_json::to_string_pretty(&cfg)
                .map_err(|e| Error::InvalidArgument(format!("config is not serializable: {e}")))?;
            writeln!(out, "{json}").unwrap();
        }
    }
    Ok(out)
}
