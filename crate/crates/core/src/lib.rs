pub mod cell_problem;
pub mod cli_runner;
pub mod coeff_field;
pub mod correctors;
pub mod effective_operator;
pub mod error_bench;
pub mod error;
pub mod fine_operator;
pub mod linops;
mod small;
pub mod smoothing;
pub mod torus_grid;

pub use error::{HomogError, Result};
pub use num_complex::Complex64 as C64;
