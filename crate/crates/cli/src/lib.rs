//! File formats and command-line front end for `polytrace`.

pub mod commands;
pub mod geojson;
pub mod graph_io;
pub mod raster_io;
pub mod records;

pub use commands::{run_command, EXIT_INPUT, EXIT_INTERNAL, EXIT_OK};
