pub mod error;
pub mod incident;
pub mod solver;
pub mod specfun;
pub mod sphere_grid;
pub mod farfield;
pub mod mie_oracle;
pub mod control;
pub mod cli;
