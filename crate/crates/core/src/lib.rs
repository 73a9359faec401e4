pub mod bounds;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod io;
pub mod matrix;
pub mod noise;
pub mod signal;
