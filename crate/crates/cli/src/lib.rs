//! Command-line driver for the `prism` binary and the experiment sweeps it
//! shares with the acceptance suite.

pub mod cli;
pub mod experiments;
