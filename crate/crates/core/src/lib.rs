pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod manipulate;
pub mod model;
pub mod roles;
pub mod training;

pub use error::{Error, Result};
