pub mod config;
pub mod dataio;
pub mod eval;
pub mod pipeline;
pub mod report;
