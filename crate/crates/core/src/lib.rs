pub mod acquisition;
pub mod data;
pub mod error;
pub mod gp;
pub mod inference;
pub mod hyperkernel;
pub mod linalg;
pub mod optimize;
pub mod qmc;
pub mod quadrature;
pub mod seeding;
pub mod runner;
pub mod spectral;

pub use error::{Error, Result};
