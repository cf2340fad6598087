//! Command line and HTTP front end for the basket optimizers.

pub mod commands;
pub mod config;
pub mod server;
