pub mod anchor;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod data;
pub mod error;
pub mod filter;
pub mod index;
pub mod model;
pub mod rng;
pub mod runner;
pub mod strategy;

pub use error::{Error, Result};
