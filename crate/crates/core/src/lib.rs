//! Heat transport through coupled optical cavities with a dispersively
//! coupled atom acting as a thermal switch.

pub mod analytic;
pub mod array;
pub mod cli;
pub mod error;
pub mod fock;
mod linalg;
pub mod model;
pub mod moments;

pub use error::{Error, Result};
