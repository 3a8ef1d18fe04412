//! Command line and HTTP front end over the `xpir` engine.

pub mod cli;
pub mod config;
pub mod server;
pub mod service;
