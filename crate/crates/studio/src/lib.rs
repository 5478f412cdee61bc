//! HTTP service and command-line front end for the dramaturg engine.

pub mod cli;
pub mod config;
pub mod service;
