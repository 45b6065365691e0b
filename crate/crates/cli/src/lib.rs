//! Command-line pipeline around `voxfit-core`: configuration, artifact
//! bookkeeping and the `fit`, `evaluate`, `compare`, `search`, `explore` and
//! `synth` verbs.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
