//! Command line and HTTP front end for featurescope projectors.

pub mod cli;
pub mod extractor;
pub mod registry;
pub mod server;
