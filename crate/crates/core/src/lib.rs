pub mod aggregate;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod groups;
pub mod io;
pub mod linalg;
pub mod maximin;
pub mod sim;
pub mod simplex_qp;

pub use error::{Error, Result};
