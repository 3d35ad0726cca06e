//! Multi-agent research with a shared reasoning hub.

pub mod answer;
pub mod backends;
pub mod hub;
pub mod prompts;
pub mod tokens;
pub mod toolenv;
pub mod types;
pub mod aggregate;
pub mod rlmath;
pub mod runtime;
pub mod sim;
