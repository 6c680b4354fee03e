pub mod error;
pub mod fft;
pub mod signal;
pub mod autodiff;
pub mod corpus;
pub mod dpn;
pub mod eval;
pub mod hl;
pub mod io;
pub mod metrics;
pub mod train;

pub use error::{Error, Result};
