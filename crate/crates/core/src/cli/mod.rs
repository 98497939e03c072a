//! Command-line front end: configuration, file formats and subcommands.

pub mod commands;
pub mod config;
pub mod series;
pub mod snapshot;

pub use commands::{
    cmd_check_geometry, cmd_decay_fit, cmd_oracle_compare, cmd_run, cmd_scatter, exit_code, GeometrySource,
    EXIT_BLOWN_UP, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER_ERROR,
};
pub use config::{parse_config, parse_config_str, RunConfig};
pub use series::{read_series, DiskObserver, SeriesWriter};
pub use snapshot::{read_snapshot, write_snapshot};
