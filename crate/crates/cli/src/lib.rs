//! Command-line and HTTP front end for the `groundrag` toolkit.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod server;
