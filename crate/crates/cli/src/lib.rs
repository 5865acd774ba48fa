//! Configuration layering for the `scools` command line.

pub mod config;
