//! Config-driven experiment harness around `dcg_ope`.

pub mod commands;
pub mod config;
