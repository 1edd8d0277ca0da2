pub mod cli;
pub mod cutgen;
pub(crate) mod dense;
pub mod driver;
pub mod error;
pub mod io;
pub mod lift;
pub mod lpiface;
pub mod opf;
pub mod oracle;
pub mod symmat;

pub use error::{Error, Result};
pub use symmat::{SpectralDecomposition, SymMatrix};
