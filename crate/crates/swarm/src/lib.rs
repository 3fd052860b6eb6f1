//! Command-line side of the swarm simulator: file formats, scenario files,
//! the `run` / `check` / `histogram` commands.

pub mod atomic;
pub mod check;
pub mod edgelist;
pub mod formats;
pub mod runner;
pub mod scenario;
