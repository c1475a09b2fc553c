//! Data handling, persistence, experiments and the command-line interface.

pub mod app;
pub mod data;
pub mod demo;
pub mod experiment;
pub mod persist;
pub mod synthetic;
