// `!(x > 0.0)` style checks are intended: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod density;
pub mod detkit;
pub mod error;
pub mod gfun;
pub mod identities;
pub mod oracle;
pub mod spectra;

pub use error::{Error, Result, Side};
