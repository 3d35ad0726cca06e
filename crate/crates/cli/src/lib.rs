//! Operator surface for fugue: run configs, run directories, replay,
//! reports and SFT export. The `fugue` binary is a thin layer over this.

pub mod config;
pub mod export;
pub mod report;
pub mod run;
