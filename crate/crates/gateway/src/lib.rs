//! HTTP service and command line for tapeloop runs.

pub mod api;
pub mod cli;
pub mod store;
