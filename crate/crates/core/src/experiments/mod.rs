//! The three experiments driven by the command-line tool, and their outputs.

pub mod labels;
pub mod output;
pub mod scaling;
pub mod unsupervised;
