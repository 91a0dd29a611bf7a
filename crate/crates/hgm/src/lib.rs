//! File formats, run metadata and the command-line driver for `hgm-core`.

pub mod cli;
pub mod io;
pub mod manifest;
pub mod report;

pub use io::{load_matrix, save_matrix, IoError, MatrixFormat};
