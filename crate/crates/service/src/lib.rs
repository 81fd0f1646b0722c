//! Command-line tools and HTTP service around the topology edit engine.

pub mod api;
pub mod cli;
pub mod store;
