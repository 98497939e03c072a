use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use smcf::cli::{self, GeometrySource, EXIT_CONFIG};
use smcf::diagnostics::Column;

#[derive(Parser, Debug)]
#[command(
    name = "smcf",
    version,
    about = "Spectral solver for skew mean curvature flow of codimension-two graphs"
)]
struct Args {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve the configured initial state and write series.csv and snapshots.
    Run,
    /// Fit the log-log slope of a series column over [t_lo, t_hi].
    DecayFit {
        series: PathBuf,
        #[arg(long)]
        t_lo: f64,
        #[arg(long)]
        t_hi: f64,
        #[arg(long, default_value = "w2qprime")]
        column: String,
    },
    /// Pull snapshots back by the free flow and print their H² distances.
    Scatter {
        #[arg(required = true, num_args = 3..)]
        snapshots: Vec<PathBuf>,
        /// Where to write the final pulled-back state.
        #[arg(long, default_value = "phi_plus.bin")]
        out: PathBuf,
    },
    /// Check pointwise geometric identities on the initial state or a snapshot.
    CheckGeometry {
        #[arg(long, conflicts_with = "config")]
        snapshot: Option<PathBuf>,
    },
    /// Compare spectral geometry with finite differences at n/4, n/2, n.
    OracleCompare,
}

fn load_config(path: Option<&PathBuf>) -> Result<cli::RunConfig, i32> {
    let Some(path) = path else {
        eprintln!("error: this subcommand needs --config <path>");
        return Err(EXIT_CONFIG);
    };
    cli::parse_config(path).map_err(|e| {
        eprintln!("error: {e}");
        cli::exit_code(&e)
    })
}

fn dispatch(args: Args) -> i32 {
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    match args.command {
        Command::Run => match load_config(args.config.as_ref()) {
            Ok(c) => cli::cmd_run(&c, &mut out, &mut err),
            Err(code) => code,
        },
        Command::DecayFit {
            series,
            t_lo,
            t_hi,
            column,
        } => match column.parse::<Column>() {
            Ok(c) => cli::cmd_decay_fit(&series, t_lo, t_hi, c, &mut out, &mut err),
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
        Command::Scatter { snapshots, out: dest } => cli::cmd_scatter(&snapshots, &dest, &mut out, &mut err),
        Command::CheckGeometry { snapshot } => {
            let source = match snapshot {
                Some(p) => GeometrySource::Snapshot(p),
                None => match load_config(args.config.as_ref()) {
                    Ok(c) => GeometrySource::Config(Box::new(c)),
                    Err(code) => return code,
                },
            };
            cli::cmd_check_geometry(&source, &mut out, &mut err)
        }
        Command::OracleCompare => match load_config(args.config.as_ref()) {
            Ok(c) => cli::cmd_oracle_compare(&c, &mut out, &mut err),
            Err(code) => code,
        },
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    ExitCode::from(dispatch(args) as u8)
}
