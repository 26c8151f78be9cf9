//! Configuration, training, evaluation and the command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod gradsuite;
pub mod optim;
pub mod train;
pub mod viz;
