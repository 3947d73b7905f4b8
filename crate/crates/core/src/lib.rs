//! Exact probability-of-evidence computation for discrete graphical models by
//! bucket elimination, with an out-of-core engine that splits every intermediate
//! function table into disk-resident blocks processed by a pool of workers.

pub mod cli;
pub mod error;
pub mod external;
pub mod generate;
pub mod inmem;
pub mod model;
pub mod ordering;
pub mod plan;
pub mod store;

pub use error::{Error, Result};
