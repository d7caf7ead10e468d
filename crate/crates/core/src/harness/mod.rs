//! Configuration, episode execution, CSV persistence and the command line.

pub mod audit;
pub mod cli;
pub mod config;
pub mod csv_io;
pub mod episode;
