pub mod cli;
pub mod copulas;
pub mod data;
pub mod error;
pub mod heckman;
pub mod jet;
pub mod likelihood;
pub mod margins;
pub mod optimizer;
pub mod quad;
pub mod roots;
pub mod simulate;
pub mod special;
pub mod splines;
pub mod stats;

pub use error::{Error, Result};
