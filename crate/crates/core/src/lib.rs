//! Finite elements for ropes and membranes embedded on all level sets of a
//! scalar field in a bulk domain.

pub mod bulkcouple;
pub mod cases;
pub mod error;
pub mod errors;
pub mod levelset;
pub mod linalg;
pub mod mechanics;
pub mod mesh;
pub mod oracle;
pub mod refelem;
pub mod solver;
pub mod tdc;

pub use error::{Error, Result};
