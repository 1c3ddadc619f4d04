//! Dual Student: semi-supervised learning with two independently
//! initialised students that exchange knowledge only on stable samples.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod models;
pub mod numcore;
pub mod ssl;
pub mod trainers;

pub use error::{Error, Result};
