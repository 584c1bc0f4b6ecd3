//! Belief detection, updating and graphing for small sequence models.
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod editor;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod optim;
pub mod report;
pub mod slag;
pub mod tensor;
pub mod update;

pub use error::{Error, Result};
