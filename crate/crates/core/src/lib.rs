//! Hierarchical recurrent prediction of menu selection times, with a
//! synthetic user model for generating training and evaluation corpora.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod numkit;
pub mod oracle;
pub mod training;

pub use error::{Error, Result};
